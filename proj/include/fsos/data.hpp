#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsos/tensor.hpp"

namespace fsos {

enum class SplitPart { train, val, test };

std::string to_string(SplitPart part);
SplitPart parse_split_part(const std::string& name);

// Shape of one example: a flat vector {d} or an image {c, h, w}.
struct InputShape {
    enum class Kind { vector, image };
    Kind kind = Kind::vector;
    Shape dims{32};

    static InputShape vector(std::size_t d) { return {Kind::vector, {d}}; }
    static InputShape image(std::size_t c, std::size_t h, std::size_t w) { return {Kind::image, {c, h, w}}; }

    std::size_t flat_size() const { return shape_size(dims); }
    void validate() const;
    std::string describe() const;

    friend bool operator==(const InputShape&, const InputShape&) = default;
};

// Class-level partition into meta-train / meta-val / meta-test.
struct MetaSplit {
    std::vector<std::int32_t> train;
    std::vector<std::int32_t> val;
    std::vector<std::int32_t> test;

    const std::vector<std::int32_t>& part(SplitPart p) const;
    // Pairwise disjoint, nonempty, and together exactly {0, ..., num_classes-1}.
    void validate(std::size_t num_classes) const;
    bool contains(SplitPart p, std::int32_t cls) const;
};

struct SyntheticSpec {
    std::size_t num_classes = 100;
    std::size_t examples_per_class = 60;
    std::size_t dim = 32;
    double separation = 8.0;
    double spread = 1.0;
    std::uint64_t seed = 1;
    // Class counts per split; 0 for all three derives 16% val, 20% test
    // (at least one each) and the rest train, i.e. 64/16/20 at 100 classes.
    std::size_t train_classes = 0;
    std::size_t val_classes = 0;
    std::size_t test_classes = 0;
    // Optional image interpretation of each example; its flat size must equal dim.
    InputShape input = InputShape::vector(32);

    void validate() const;
    // Split sizes after applying the derivation rule.
    std::array<std::size_t, 3> split_sizes() const;
};

struct DatasetManifest {
    std::string name = "synthetic";
    InputShape input;
    std::vector<std::size_t> class_counts;  // examples per class id, payload is class-major
    MetaSplit split;
    std::string payload;                    // payload file name, relative to the manifest
    std::uint32_t checksum = 0;             // CRC-32 of the payload file
};

class Dataset {
public:
    Dataset(DatasetManifest manifest, std::vector<double> values);

    const DatasetManifest& manifest() const noexcept { return manifest_; }
    const MetaSplit& split() const noexcept { return manifest_.split; }
    const InputShape& input() const noexcept { return manifest_.input; }
    std::size_t example_size() const noexcept { return manifest_.input.flat_size(); }
    std::size_t num_classes() const noexcept { return manifest_.class_counts.size(); }
    std::size_t examples_in(std::int32_t cls) const;
    std::span<const double> example(std::int32_t cls, std::size_t index) const;
    std::span<const double> values() const noexcept { return values_; }

    // Stacks examples into a [count, ...input dims] batch.
    Tensor batch(std::span<const std::pair<std::int32_t, std::size_t>> refs) const;

private:
    DatasetManifest manifest_;
    std::vector<double> values_;
    std::vector<std::size_t> offsets_;
};

// Class means uniform on the radius-`separation` sphere, examples are the
// class mean plus isotropic Gaussian noise of std `spread`.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Class means used by generate_synthetic, [num_classes, dim].
Tensor synthetic_class_means(const SyntheticSpec& spec);

// Writes `<stem>.json` (manifest) and `<stem>.bin` (payload) and returns the
// payload checksum. `manifest_path` must end in .json.
std::uint32_t save_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

std::uint32_t crc32_of(std::span<const unsigned char> bytes);
std::string checksum_hex(std::uint32_t crc);

}  // namespace fsos
