#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsos/data.hpp"
#include "fsos/tape.hpp"
#include "fsos/tensor.hpp"

namespace fsos {

// One backbone block: dense = affine + ReLU; conv = 3x3 conv + ReLU + 2x2
// max-pool followed by a learnable per-channel scale/shift.
struct BlockSpec {
    enum class Kind { dense, conv };
    Kind kind = Kind::dense;
    std::size_t out = 64;

    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct BackboneSpec {
    InputShape input = InputShape::vector(32);
    std::vector<BlockSpec> blocks{{BlockSpec::Kind::dense, 64}, {BlockSpec::Kind::dense, 64}};
    std::size_t embed_dim = 64;

    // Input vector(d) with [dense(64), dense(64)].
    static BackboneSpec desk_vector(std::size_t input_dim = 32);
    // Input image(c,h,w) with [conv(32), conv(32)].
    static BackboneSpec desk_image(std::size_t c = 1, std::size_t h = 16, std::size_t w = 16);

    // Output shape of each block (without the batch axis).
    std::vector<Shape> block_outputs() const;
    // Flattened size of the last block's output.
    std::size_t computed_embed_dim() const;
    // At least two blocks; embed_dim matches the last block.
    void validate() const;

    // "dense:64,dense:64" / "conv:32,conv:32"
    std::string blocks_string() const;
    static std::vector<BlockSpec> parse_blocks(const std::string& text);

    friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

struct BlockParams {
    Tensor weight;  // dense [in, out]; conv [out, in, 3, 3]
    Tensor bias;    // [out]
    Tensor scale;   // conv only, [out]
    Tensor shift;   // conv only, [out]
    bool has_affine_norm = false;
};

struct ProjectionParams {
    Tensor weight;  // [embed_dim, embed_dim]
    Tensor bias;    // [embed_dim]
};

struct BackboneParams {
    std::vector<BlockParams> trunk;  // every block except the last
    BlockParams head;                // last block of the main embedding f
    BlockParams branch;              // independent copy of the last block (one-class branch)
    std::optional<ProjectionParams> projection;
};

// Which parameter groups receive gradients during a forward pass.
struct TrainableGroups {
    bool trunk = false;
    bool head = false;
    bool branch = false;
    bool projection = false;

    static TrainableGroups none() { return {}; }
    static TrainableGroups main() { return {true, true, false, false}; }
};

enum class EmbeddingRoute {
    main,       // trunk -> head
    branch,     // trunk -> branch
    projected,  // trunk -> head -> projection
};

class Backbone {
public:
    Backbone(BackboneSpec spec, BackboneParams params);

    const BackboneSpec& spec() const noexcept { return spec_; }
    const BackboneParams& params() const noexcept { return params_; }
    BackboneParams& params() noexcept { return params_; }
    std::size_t embed_dim() const noexcept { return spec_.embed_dim; }

    bool has_projection() const noexcept { return params_.projection.has_value(); }
    // Adds an identity-initialized projection if none exists.
    void ensure_projection();

    // Batched forward of a [N, ...input dims] tensor to [N, embed_dim].
    // Parameters flagged in `trainable` are registered for gradients
    // (their requires_grad flag is set); the rest enter as constants.
    Var forward(Tape& tape, Var batch, EmbeddingRoute route, TrainableGroups trainable);
    // Same computation with every parameter constant.
    Var forward(Tape& tape, Var batch, EmbeddingRoute route) const;

    Tensor embed_batch(const Tensor& batch, EmbeddingRoute route = EmbeddingRoute::main) const;

    // Parameters of the selected groups, in a fixed order.
    std::vector<Tensor*> parameters(TrainableGroups groups);

private:
    enum class ParamGroup { trunk, head, branch, projection };

    template <class Params, class Register>
    Var run(Tape& tape, Var x, EmbeddingRoute route, Params& params, Register&& reg) const;

    BackboneSpec spec_;
    BackboneParams params_;
};

// Deterministic initialization: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
// from a seeded generator, conv scale = 1 and shift = 0, branch copied from
// head bit-for-bit.
Backbone init_backbone(const BackboneSpec& spec, std::uint64_t seed, bool with_projection = false);

// Single-example embeddings; `x` holds one example in the backbone's input shape
// (or flattened to its size).
std::vector<double> embed(const Backbone& backbone, std::span<const double> x);
std::vector<double> embed_branch(const Backbone& backbone, std::span<const double> x);
std::vector<double> embed_projected(const Backbone& backbone, std::span<const double> x);

}  // namespace fsos
