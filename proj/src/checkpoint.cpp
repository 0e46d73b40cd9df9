#include "fsos/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fsos/error.hpp"
#include "json.hpp"

namespace fsos {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'S', 'O', 'S', 'C', 'K', 'P', 'T'};

class Writer {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void raw(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

    std::vector<unsigned char> bytes;

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const noexcept { return pos_ == bytes_.size(); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) throw IoError("checkpoint: truncated at byte " + std::to_string(pos_));
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

json input_json(const InputShape& s) {
    return {{"kind", s.kind == InputShape::Kind::vector ? "vector" : "image"}, {"dims", s.dims}};
}

InputShape input_from(const json& j) {
    InputShape s;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "vector") s.kind = InputShape::Kind::vector;
    else if (kind == "image") s.kind = InputShape::Kind::image;
    else throw IoError("checkpoint: unknown input kind '" + kind + "'");
    s.dims = j.at("dims").get<Shape>();
    return s;
}

void add_block(std::vector<NamedTensor>& out, const std::string& prefix, const BlockParams& b) {
    out.push_back({prefix + ".weight", b.weight});
    out.push_back({prefix + ".bias", b.bias});
    if (b.has_affine_norm) {
        out.push_back({prefix + ".scale", b.scale});
        out.push_back({prefix + ".shift", b.shift});
    }
}

BlockParams read_block(const CheckpointFile& f, const std::string& prefix, const BlockSpec& spec) {
    BlockParams b;
    b.weight = f.get(prefix + ".weight");
    b.bias = f.get(prefix + ".bias");
    if (spec.kind == BlockSpec::Kind::conv) {
        b.scale = f.get(prefix + ".scale");
        b.shift = f.get(prefix + ".shift");
        b.has_affine_norm = true;
    }
    return b;
}

}  // namespace

std::string to_string(Method method) {
    switch (method) {
        case Method::protonet: return "protonet";
        case Method::mbce: return "mbce";
        case Method::mbce_c: return "mbce-c";
        case Method::ocml_joint: return "ocml-joint";
        case Method::ocml_frozen: return "ocml-frozen";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    for (auto m : {Method::protonet, Method::mbce, Method::mbce_c, Method::ocml_joint, Method::ocml_frozen}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown method '" + name + "' (expected protonet, mbce, mbce-c, ocml-joint or ocml-frozen)");
}

bool needs_base_backbone(Method method) {
    return method == Method::mbce || method == Method::mbce_c || method == Method::ocml_frozen;
}

const Tensor& CheckpointFile::get(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t.value;
    }
    throw IoError("checkpoint: missing tensor '" + name + "'");
}

bool CheckpointFile::has(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

std::vector<unsigned char> encode_checkpoint(const CheckpointFile& file) {
    Writer w;
    w.raw(std::string_view(kMagic, sizeof kMagic));
    w.u32(kCheckpointVersion);
    w.u64(file.meta.size());
    w.raw(file.meta);
    w.u32(static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& t : file.tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.raw(t.name);
        w.u32(static_cast<std::uint32_t>(t.value.rank()));
        for (auto d : t.value.shape()) w.u64(d);
        for (double v : t.value.values()) w.f64(v);
    }
    return std::move(w.bytes);
}

CheckpointFile decode_checkpoint(std::span<const unsigned char> bytes) {
    Reader r(bytes);
    if (r.raw(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw IoError("checkpoint: bad magic");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    CheckpointFile f;
    const auto meta_len = r.u64();
    if (meta_len > r.remaining()) throw IoError("checkpoint: metadata length exceeds file");
    f.meta = r.raw(static_cast<std::size_t>(meta_len));
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.raw(r.u32());
        const auto rank = r.u32();
        if (rank == 0 || rank > 8) throw IoError("checkpoint: tensor '" + t.name + "' has rank " + std::to_string(rank));
        Shape shape(rank);
        std::size_t size = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.u64());
            if (d == 0 || d > r.remaining()) throw IoError("checkpoint: tensor '" + t.name + "' has a bad dimension");
            size *= d;
        }
        if (size > r.remaining() / 8) throw IoError("checkpoint: tensor '" + t.name + "' exceeds file");
        std::vector<double> values(size);
        for (auto& v : values) v = r.f64();
        t.value = Tensor(std::move(shape), std::move(values));
        f.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw IoError("checkpoint: trailing bytes");
    return f;
}

std::vector<unsigned char> encode_model(const Model& model) {
    const auto& spec = model.backbone.spec();
    const auto& p = model.backbone.params();
    json meta = {{"format", "fsos-checkpoint"},
                 {"method", to_string(model.method)},
                 {"backbone", {{"input", input_json(spec.input)}, {"blocks", spec.blocks_string()}, {"embed_dim", spec.embed_dim}}}};
    CheckpointFile f;
    for (std::size_t i = 0; i < p.trunk.size(); ++i) add_block(f.tensors, "trunk." + std::to_string(i), p.trunk[i]);
    add_block(f.tensors, "head", p.head);
    add_block(f.tensors, "branch", p.branch);
    if (p.projection) {
        f.tensors.push_back({"projection.weight", p.projection->weight});
        f.tensors.push_back({"projection.bias", p.projection->bias});
    }
    if (model.mbce) {
        meta["mbce"] = {{"variant", to_string(model.mbce->variant)}};
        f.tensors.push_back({"mbce.t", model.mbce->t});
    }
    if (model.ocml) {
        meta["ocml"] = {{"arch", model.ocml->arch.key()}};
        for (std::size_t i = 0; i < model.ocml->weights.size(); ++i) {
            f.tensors.push_back({"ocml." + std::to_string(i) + ".weight", model.ocml->weights[i]});
            if (i < model.ocml->biases.size()) f.tensors.push_back({"ocml." + std::to_string(i) + ".bias", model.ocml->biases[i]});
        }
    }
    f.meta = meta.dump();
    return encode_checkpoint(f);
}

Model decode_model(std::span<const unsigned char> bytes) {
    const auto f = decode_checkpoint(bytes);
    json meta;
    try {
        meta = json::parse(f.meta);
        if (meta.at("format") != "fsos-checkpoint") throw IoError("checkpoint: unexpected format tag");
        BackboneSpec spec;
        const auto& b = meta.at("backbone");
        spec.input = input_from(b.at("input"));
        spec.blocks = BackboneSpec::parse_blocks(b.at("blocks").get<std::string>());
        spec.embed_dim = b.at("embed_dim").get<std::size_t>();

        BackboneParams params;
        for (std::size_t i = 0; i + 1 < spec.blocks.size(); ++i) {
            params.trunk.push_back(read_block(f, "trunk." + std::to_string(i), spec.blocks[i]));
        }
        params.head = read_block(f, "head", spec.blocks.back());
        params.branch = read_block(f, "branch", spec.blocks.back());
        if (f.has("projection.weight")) params.projection = ProjectionParams{f.get("projection.weight"), f.get("projection.bias")};

        Model model{parse_method(meta.at("method").get<std::string>()), Backbone(spec, std::move(params)), std::nullopt, std::nullopt};
        if (meta.contains("mbce")) {
            model.mbce = MetaBceHead{parse_mbce_variant(meta["mbce"].at("variant").get<std::string>()), f.get("mbce.t")};
        }
        if (meta.contains("ocml")) {
            TransferModule g;
            g.arch = TransferArchitecture::parse(meta["ocml"].at("arch").get<std::string>());
            for (std::size_t i = 0; i < g.arch.layers(); ++i) {
                g.weights.push_back(f.get("ocml." + std::to_string(i) + ".weight"));
                if (i + 1 < g.arch.layers()) g.biases.push_back(f.get("ocml." + std::to_string(i) + ".bias"));
            }
            model.ocml = std::move(g);
        }
        return model;
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: bad metadata: ") + e.what());
    }
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file_bytes(path, encode_model(model)); }

Model load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

}  // namespace fsos
