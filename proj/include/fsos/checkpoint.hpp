#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsos/backbone.hpp"
#include "fsos/metabce.hpp"
#include "fsos/ocml.hpp"
#include "fsos/tensor.hpp"

namespace fsos {

enum class Method { protonet, mbce, mbce_c, ocml_joint, ocml_frozen };

std::string to_string(Method method);
Method parse_method(const std::string& name);
// Methods that attach to an existing backbone and must not change it.
bool needs_base_backbone(Method method);

struct Model {
    Method method = Method::protonet;
    Backbone backbone;
    std::optional<MetaBceHead> mbce;
    std::optional<TransferModule> ocml;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Raw container: magic "FSOSCKPT", u32 version, u64 metadata length, JSON
// metadata, u32 tensor count, then per tensor u32 name length, name, u32 rank,
// u64 dims, little-endian f64 values.
struct CheckpointFile {
    std::string meta;
    std::vector<NamedTensor> tensors;

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::span<const unsigned char> bytes);

std::vector<unsigned char> encode_model(const Model& model);
Model decode_model(std::span<const unsigned char> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes);

}  // namespace fsos
