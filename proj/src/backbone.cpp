#include "fsos/backbone.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "fsos/error.hpp"

namespace fsos {

BackboneSpec BackboneSpec::desk_vector(std::size_t input_dim) {
    BackboneSpec s;
    s.input = InputShape::vector(input_dim);
    s.blocks = {{BlockSpec::Kind::dense, 64}, {BlockSpec::Kind::dense, 64}};
    s.embed_dim = 64;
    return s;
}

BackboneSpec BackboneSpec::desk_image(std::size_t c, std::size_t h, std::size_t w) {
    BackboneSpec s;
    s.input = InputShape::image(c, h, w);
    s.blocks = {{BlockSpec::Kind::conv, 32}, {BlockSpec::Kind::conv, 32}};
    s.embed_dim = s.computed_embed_dim();
    return s;
}

std::vector<Shape> BackboneSpec::block_outputs() const {
    std::vector<Shape> outs;
    Shape cur = input.dims;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.out == 0) throw ConfigError("backbone: block " + std::to_string(i) + " has zero width");
        if (b.kind == BlockSpec::Kind::dense) {
            cur = {b.out};
        } else {
            if (cur.size() != 3) throw ConfigError("backbone: conv block " + std::to_string(i) + " needs an image-shaped input");
            if (cur[1] < 2 || cur[2] < 2) {
                throw ConfigError("backbone: conv block " + std::to_string(i) + " input " + shape_string(cur) + " too small to pool");
            }
            cur = {b.out, cur[1] / 2, cur[2] / 2};
        }
        outs.push_back(cur);
    }
    return outs;
}

std::size_t BackboneSpec::computed_embed_dim() const {
    auto outs = block_outputs();
    if (outs.empty()) throw ConfigError("backbone: no blocks");
    return shape_size(outs.back());
}

void BackboneSpec::validate() const {
    input.validate();
    if (blocks.size() < 2) {
        throw ConfigError("backbone: needs at least 2 blocks (the branch duplicates the last one), got " +
                          std::to_string(blocks.size()));
    }
    const auto d = computed_embed_dim();
    if (d != embed_dim) {
        throw ConfigError("backbone: embed_dim " + std::to_string(embed_dim) + " != last block output " + std::to_string(d));
    }
}

std::string BackboneSpec::blocks_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (i) os << ',';
        os << (blocks[i].kind == BlockSpec::Kind::dense ? "dense:" : "conv:") << blocks[i].out;
    }
    return os.str();
}

std::vector<BlockSpec> BackboneSpec::parse_blocks(const std::string& text) {
    std::vector<BlockSpec> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("backbone: block '" + item + "' must look like dense:64 or conv:32");
        BlockSpec b;
        const auto kind = item.substr(0, colon);
        if (kind == "dense") b.kind = BlockSpec::Kind::dense;
        else if (kind == "conv") b.kind = BlockSpec::Kind::conv;
        else throw ConfigError("backbone: unknown block kind '" + kind + "'");
        try {
            b.out = std::stoul(item.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("backbone: bad block width in '" + item + "'");
        }
        out.push_back(b);
    }
    if (out.empty()) throw ConfigError("backbone: empty block list");
    return out;
}

Backbone::Backbone(BackboneSpec spec, BackboneParams params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (params_.trunk.size() + 1 != spec_.blocks.size()) {
        throw ConfigError("backbone: trunk has " + std::to_string(params_.trunk.size()) + " blocks, spec expects " +
                          std::to_string(spec_.blocks.size() - 1));
    }
    if (params_.head.weight.shape() != params_.branch.weight.shape() ||
        params_.head.bias.shape() != params_.branch.bias.shape()) {
        throw ConfigError("backbone: branch parameter shapes differ from head");
    }
}

void Backbone::ensure_projection() {
    if (params_.projection) return;
    params_.projection = ProjectionParams{Tensor::identity(spec_.embed_dim), Tensor::zeros({spec_.embed_dim})};
}

template <class Params, class Register>
Var Backbone::run(Tape& tape, Var x, EmbeddingRoute route, Params& params, Register&& reg) const {
    const std::size_t n = tape.shape(x)[0];
    auto apply_block = [&](Var h, const BlockSpec& spec, auto& bp, ParamGroup group) {
        if (spec.kind == BlockSpec::Kind::dense) {
            const auto& s = tape.shape(h);
            if (s.size() != 2) h = tape.reshape(h, {n, shape_size(s) / n});
            return tape.relu(tape.affine(h, reg(bp.weight, group), reg(bp.bias, group)));
        }
        Var c = tape.conv3x3_pool(h, reg(bp.weight, group), reg(bp.bias, group));
        return tape.scale_shift(c, reg(bp.scale, group), reg(bp.shift, group));
    };

    const auto& in_shape = tape.shape(x);
    if (shape_size(in_shape) != n * spec_.input.flat_size()) {
        throw ShapeError("backbone: batch " + shape_string(in_shape) + " does not match input " + spec_.input.describe());
    }
    Shape want{n};
    want.insert(want.end(), spec_.input.dims.begin(), spec_.input.dims.end());
    Var h = in_shape == want ? x : tape.reshape(x, want);

    for (std::size_t i = 0; i < params.trunk.size(); ++i) h = apply_block(h, spec_.blocks[i], params.trunk[i], ParamGroup::trunk);
    const auto& last = spec_.blocks.back();
    h = route == EmbeddingRoute::branch ? apply_block(h, last, params.branch, ParamGroup::branch)
                                         : apply_block(h, last, params.head, ParamGroup::head);
    h = tape.reshape(h, {n, spec_.embed_dim});
    if (route == EmbeddingRoute::projected) {
        if (!params.projection) throw ConfigError("backbone: projection parameters missing (Meta-BCE_C needs h)");
        h = tape.affine(h, reg(params.projection->weight, ParamGroup::projection),
                       reg(params.projection->bias, ParamGroup::projection));
    }
    return h;
}

Var Backbone::forward(Tape& tape, Var batch, EmbeddingRoute route, TrainableGroups trainable) {
    auto reg = [&](Tensor& t, ParamGroup group) -> Var {
        const bool on = (group == ParamGroup::trunk && trainable.trunk) || (group == ParamGroup::head && trainable.head) ||
                        (group == ParamGroup::branch && trainable.branch) ||
                        (group == ParamGroup::projection && trainable.projection);
        if (!on) return tape.constant(t);
        t.set_requires_grad(true);
        return tape.param(t);
    };
    return run(tape, batch, route, params_, reg);
}

Var Backbone::forward(Tape& tape, Var batch, EmbeddingRoute route) const {
    auto reg = [&](const Tensor& t, ParamGroup) -> Var { return tape.constant(t); };
    return run(tape, batch, route, params_, reg);
}

Tensor Backbone::embed_batch(const Tensor& batch, EmbeddingRoute route) const {
    Tape tape;
    return tape.tensor(forward(tape, tape.constant(batch), route));
}

std::vector<Tensor*> Backbone::parameters(TrainableGroups groups) {
    std::vector<Tensor*> out;
    auto add_block = [&](BlockParams& b) {
        out.push_back(&b.weight);
        out.push_back(&b.bias);
        if (b.has_affine_norm) {
            out.push_back(&b.scale);
            out.push_back(&b.shift);
        }
    };
    if (groups.trunk) {
        for (auto& b : params_.trunk) add_block(b);
    }
    if (groups.head) add_block(params_.head);
    if (groups.branch) add_block(params_.branch);
    if (groups.projection) {
        if (!params_.projection) throw ConfigError("backbone: projection parameters missing");
        out.push_back(&params_.projection->weight);
        out.push_back(&params_.projection->bias);
    }
    return out;
}

Backbone init_backbone(const BackboneSpec& spec, std::uint64_t seed, bool with_projection) {
    spec.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&](Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& v : t.values()) v = dist(rng);
        return t;
    };

    BackboneParams params;
    Shape cur = spec.input.dims;
    const auto outs = spec.block_outputs();
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const auto& b = spec.blocks[i];
        BlockParams bp;
        if (b.kind == BlockSpec::Kind::dense) {
            const std::size_t in = shape_size(cur);
            bp.weight = uniform({in, b.out}, in);
            bp.bias = uniform({b.out}, in);
        } else {
            const std::size_t in_c = cur[0];
            bp.weight = uniform({b.out, in_c, 3, 3}, in_c * 9);
            bp.bias = uniform({b.out}, in_c * 9);
            bp.scale = Tensor::filled({b.out}, 1.0);
            bp.shift = Tensor::zeros({b.out});
            bp.has_affine_norm = true;
        }
        cur = outs[i];
        if (i + 1 < spec.blocks.size()) params.trunk.push_back(std::move(bp));
        else params.head = std::move(bp);
    }
    params.branch = params.head;
    Backbone backbone(spec, std::move(params));
    if (with_projection) backbone.ensure_projection();
    return backbone;
}

namespace {

std::vector<double> embed_one(const Backbone& backbone, std::span<const double> x, EmbeddingRoute route) {
    const auto& input = backbone.spec().input;
    if (x.size() != input.flat_size()) {
        throw ShapeError("embed: input has " + std::to_string(x.size()) + " values, expected " + input.describe());
    }
    Shape shape{1};
    shape.insert(shape.end(), input.dims.begin(), input.dims.end());
    Tensor batch(std::move(shape), std::vector<double>(x.begin(), x.end()));
    return backbone.embed_batch(batch, route).data();
}

}  // namespace

std::vector<double> embed(const Backbone& backbone, std::span<const double> x) {
    return embed_one(backbone, x, EmbeddingRoute::main);
}

std::vector<double> embed_branch(const Backbone& backbone, std::span<const double> x) {
    return embed_one(backbone, x, EmbeddingRoute::branch);
}

std::vector<double> embed_projected(const Backbone& backbone, std::span<const double> x) {
    return embed_one(backbone, x, EmbeddingRoute::projected);
}

}  // namespace fsos
