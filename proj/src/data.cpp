#include "fsos/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include "json.hpp"
#include <random>
#include <set>

#include "fsos/error.hpp"

namespace fsos {

using nlohmann::json;

namespace {

constexpr char kPayloadMagic[4] = {'F', 'S', 'D', 'S'};
constexpr std::uint32_t kPayloadVersion = 1;
constexpr int kManifestVersion = 1;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

json input_to_json(const InputShape& s) {
    return {{"kind", s.kind == InputShape::Kind::vector ? "vector" : "image"}, {"dims", s.dims}};
}

InputShape input_from_json(const json& j) {
    InputShape s;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "vector") s.kind = InputShape::Kind::vector;
    else if (kind == "image") s.kind = InputShape::Kind::image;
    else throw DataError("manifest: unknown input kind '" + kind + "'");
    s.dims = j.at("dims").get<Shape>();
    s.validate();
    return s;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string to_string(SplitPart part) {
    switch (part) {
        case SplitPart::train: return "train";
        case SplitPart::val: return "val";
        case SplitPart::test: return "test";
    }
    return "?";
}

SplitPart parse_split_part(const std::string& name) {
    if (name == "train") return SplitPart::train;
    if (name == "val") return SplitPart::val;
    if (name == "test") return SplitPart::test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

void InputShape::validate() const {
    const std::size_t want = kind == Kind::vector ? 1 : 3;
    if (dims.size() != want) throw ConfigError("input shape " + describe() + " has the wrong rank");
    for (auto d : dims) {
        if (d == 0) throw ConfigError("input shape " + describe() + " has a zero dimension");
    }
    if (kind == Kind::image && (dims[1] < 2 || dims[2] < 2)) {
        throw ConfigError("image input " + describe() + " needs height and width >= 2");
    }
}

std::string InputShape::describe() const {
    return std::string(kind == Kind::vector ? "vector" : "image") + shape_string(dims);
}

const std::vector<std::int32_t>& MetaSplit::part(SplitPart p) const {
    switch (p) {
        case SplitPart::train: return train;
        case SplitPart::val: return val;
        case SplitPart::test: return test;
    }
    throw ConfigError("invalid split part");
}

void MetaSplit::validate(std::size_t num_classes) const {
    std::set<std::int32_t> seen;
    for (auto p : {SplitPart::train, SplitPart::val, SplitPart::test}) {
        const auto& ids = part(p);
        if (ids.empty()) throw DataError("meta-split: " + to_string(p) + " has no classes");
        for (auto id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= num_classes) {
                throw DataError("meta-split: class " + std::to_string(id) + " out of range");
            }
            if (!seen.insert(id).second) {
                throw DataError("meta-split: class " + std::to_string(id) + " assigned to more than one split");
            }
        }
    }
    if (seen.size() != num_classes) {
        throw DataError("meta-split: " + std::to_string(num_classes - seen.size()) + " classes not assigned to any split");
    }
}

bool MetaSplit::contains(SplitPart p, std::int32_t cls) const {
    const auto& ids = part(p);
    return std::find(ids.begin(), ids.end(), cls) != ids.end();
}

std::array<std::size_t, 3> SyntheticSpec::split_sizes() const {
    if (train_classes || val_classes || test_classes) return {train_classes, val_classes, test_classes};
    const std::size_t val = std::max<std::size_t>(1, num_classes * 16 / 100);
    const std::size_t test = std::max<std::size_t>(1, num_classes * 20 / 100);
    return {num_classes > val + test ? num_classes - val - test : 0, val, test};
}

void SyntheticSpec::validate() const {
    if (num_classes < 4) throw ConfigError("synthetic: num_classes must be >= 4, got " + std::to_string(num_classes));
    if (examples_per_class == 0) throw ConfigError("synthetic: examples_per_class must be >= 1");
    if (dim == 0) throw ConfigError("synthetic: dim must be >= 1");
    if (!(separation >= 0.0) || !std::isfinite(separation)) throw ConfigError("synthetic: separation must be finite and >= 0");
    if (!(spread > 0.0) || !std::isfinite(spread)) throw ConfigError("synthetic: spread must be finite and > 0");
    const auto [train, val, test] = split_sizes();
    if (train == 0 || val == 0 || test == 0) {
        throw ConfigError("synthetic: every split needs at least one class");
    }
    if (train + val + test != num_classes) {
        throw ConfigError("synthetic: split sizes " + std::to_string(train) + "/" + std::to_string(val) + "/" +
                          std::to_string(test) + " do not sum to num_classes " + std::to_string(num_classes));
    }
    input.validate();
    if (input.flat_size() != dim) {
        throw ConfigError("synthetic: input shape " + input.describe() + " does not hold dim " + std::to_string(dim));
    }
}

Dataset::Dataset(DatasetManifest manifest, std::vector<double> values)
    : manifest_(std::move(manifest)), values_(std::move(values)) {
    manifest_.input.validate();
    manifest_.split.validate(manifest_.class_counts.size());
    std::size_t total = 0;
    offsets_.reserve(manifest_.class_counts.size());
    for (auto c : manifest_.class_counts) {
        if (c == 0) throw DataError("dataset: class with no examples");
        offsets_.push_back(total);
        total += c;
    }
    if (total * example_size() != values_.size()) {
        throw DataError("dataset: payload holds " + std::to_string(values_.size()) + " values, manifest expects " +
                        std::to_string(total * example_size()));
    }
}

std::size_t Dataset::examples_in(std::int32_t cls) const {
    if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes()) {
        throw DataError("dataset: class " + std::to_string(cls) + " out of range");
    }
    return manifest_.class_counts[static_cast<std::size_t>(cls)];
}

std::span<const double> Dataset::example(std::int32_t cls, std::size_t index) const {
    if (index >= examples_in(cls)) throw DataError("dataset: example index out of range");
    const std::size_t d = example_size();
    return std::span<const double>(values_).subspan((offsets_[static_cast<std::size_t>(cls)] + index) * d, d);
}

Tensor Dataset::batch(std::span<const std::pair<std::int32_t, std::size_t>> refs) const {
    if (refs.empty()) throw DataError("dataset: empty batch");
    std::vector<double> out;
    out.reserve(refs.size() * example_size());
    for (auto [cls, idx] : refs) {
        auto ex = example(cls, idx);
        out.insert(out.end(), ex.begin(), ex.end());
    }
    Shape shape{refs.size()};
    shape.insert(shape.end(), manifest_.input.dims.begin(), manifest_.input.dims.end());
    return Tensor(std::move(shape), std::move(out));
}

Tensor synthetic_class_means(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor means = Tensor::zeros({spec.num_classes, spec.dim});
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        double norm2 = 0.0;
        for (std::size_t k = 0; k < spec.dim; ++k) {
            const double v = normal(rng);
            means[c * spec.dim + k] = v;
            norm2 += v * v;
        }
        const double scale = spec.separation / std::sqrt(norm2);
        for (std::size_t k = 0; k < spec.dim; ++k) means[c * spec.dim + k] *= scale;
    }
    return means;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    const Tensor means = synthetic_class_means(spec);
    // Noise uses a stream distinct from the one that drew the means.
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, spec.spread);
    std::vector<double> values;
    values.reserve(spec.num_classes * spec.examples_per_class * spec.dim);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t e = 0; e < spec.examples_per_class; ++e) {
            for (std::size_t k = 0; k < spec.dim; ++k) values.push_back(means[c * spec.dim + k] + normal(rng));
        }
    }
    DatasetManifest m;
    m.name = "synthetic";
    m.input = spec.input;
    m.class_counts.assign(spec.num_classes, spec.examples_per_class);
    const auto [train, val, test] = spec.split_sizes();
    std::int32_t id = 0;
    for (std::size_t i = 0; i < train; ++i) m.split.train.push_back(id++);
    for (std::size_t i = 0; i < val; ++i) m.split.val.push_back(id++);
    for (std::size_t i = 0; i < test; ++i) m.split.test.push_back(id++);
    return Dataset(std::move(m), std::move(values));
}

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
        crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
        pos += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string checksum_hex(std::uint32_t crc) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", crc);
    return buf;
}

std::uint32_t save_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path) {
    if (manifest_path.extension() != ".json") throw ConfigError("dataset manifest path must end in .json");
    std::filesystem::path payload_path = manifest_path;
    payload_path.replace_extension(".bin");

    const auto& m = dataset.manifest();
    std::size_t count = 0;
    for (auto c : m.class_counts) count += c;
    std::vector<unsigned char> bytes;
    bytes.reserve(16 + dataset.values().size() * 8);
    bytes.insert(bytes.end(), std::begin(kPayloadMagic), std::end(kPayloadMagic));
    put_u32(bytes, kPayloadVersion);
    put_u32(bytes, static_cast<std::uint32_t>(dataset.example_size()));
    put_u32(bytes, static_cast<std::uint32_t>(count));
    for (double v : dataset.values()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    }
    const std::uint32_t crc = crc32_of(bytes);

    {
        std::ofstream out(payload_path, std::ios::binary);
        if (!out) throw IoError("cannot write " + payload_path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + payload_path.string());
    }

    json classes = json::array();
    for (std::size_t c = 0; c < m.class_counts.size(); ++c) {
        classes.push_back({{"id", c}, {"examples", m.class_counts[c]}});
    }
    json j = {{"format", "fsos-dataset"},
              {"version", kManifestVersion},
              {"name", m.name},
              {"input", input_to_json(m.input)},
              {"classes", classes},
              {"splits", {{"train", m.split.train}, {"val", m.split.val}, {"test", m.split.test}}},
              {"payload", payload_path.filename().string()},
              {"checksum", "crc32:" + checksum_hex(crc)}};
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + manifest_path.string());
    return crc;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    json j;
    {
        std::ifstream in(manifest_path);
        if (!in) throw IoError("cannot read " + manifest_path.string());
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError(manifest_path.string() + ": invalid JSON: " + e.what());
        }
    }
    DatasetManifest m;
    std::string checksum;
    try {
        if (j.at("format") != "fsos-dataset") throw DataError("manifest: unexpected format tag");
        if (j.at("version").get<int>() != kManifestVersion) throw DataError("manifest: unsupported version");
        m.name = j.at("name").get<std::string>();
        m.input = input_from_json(j.at("input"));
        const auto& classes = j.at("classes");
        for (std::size_t c = 0; c < classes.size(); ++c) {
            if (classes[c].at("id").get<std::size_t>() != c) throw DataError("manifest: class ids must be 0..n-1 in order");
            m.class_counts.push_back(classes[c].at("examples").get<std::size_t>());
        }
        const auto& splits = j.at("splits");
        m.split.train = splits.at("train").get<std::vector<std::int32_t>>();
        m.split.val = splits.at("val").get<std::vector<std::int32_t>>();
        m.split.test = splits.at("test").get<std::vector<std::int32_t>>();
        m.payload = j.at("payload").get<std::string>();
        checksum = j.at("checksum").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    m.split.validate(m.class_counts.size());

    const auto payload_path = manifest_path.parent_path() / m.payload;
    const auto bytes = read_file(payload_path);
    const std::uint32_t crc = crc32_of(bytes);
    if (checksum != "crc32:" + checksum_hex(crc)) {
        throw DataError(payload_path.string() + ": checksum mismatch (manifest " + checksum + ", payload crc32:" +
                        checksum_hex(crc) + ")");
    }
    m.checksum = crc;
    if (bytes.size() < 16 || !std::equal(std::begin(kPayloadMagic), std::end(kPayloadMagic), bytes.begin())) {
        throw DataError(payload_path.string() + ": bad payload header");
    }
    if (get_u32(bytes.data() + 4) != kPayloadVersion) throw DataError(payload_path.string() + ": unsupported payload version");
    const std::uint32_t dim = get_u32(bytes.data() + 8);
    const std::uint32_t count = get_u32(bytes.data() + 12);
    std::size_t expected = 0;
    for (auto c : m.class_counts) expected += c;
    if (dim != m.input.flat_size() || count != expected) {
        throw DataError(payload_path.string() + ": header (dim " + std::to_string(dim) + ", count " + std::to_string(count) +
                        ") disagrees with manifest");
    }
    if (bytes.size() != 16 + static_cast<std::size_t>(dim) * count * 8) {
        throw DataError(payload_path.string() + ": payload size does not match header");
    }
    std::vector<double> values(static_cast<std::size_t>(dim) * count);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[16 + i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
    return Dataset(std::move(m), std::move(values));
}

}  // namespace fsos
