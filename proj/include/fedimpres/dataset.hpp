#pragma once

#include "fedimpres/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedimpres {

// Labeled images with pixel values in [0, 1].
struct Dataset {
    Tensor images; // [N x C x H x W]
    std::vector<int> labels;
    std::size_t n_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    Shape sample_shape() const;
    // Throws ValidationError on empty data, bad labels or out-of-range pixels.
    void validate() const;
    Dataset subset(std::span<const std::size_t> indices) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// FIDB (little-endian):
//   "FIDB" | u32 version=1 | u32 N | u32 C | u32 H | u32 W | u32 K |
//   N x u8 labels | N*C*H*W x f32 pixels (row-major)
inline constexpr std::uint32_t kFidbVersion = 1;

std::vector<std::uint8_t> encode_fidb(const Dataset& data);
// Throws FormatError (with byte offset) on a malformed container and
// ValidationError on well-formed files carrying invalid content.
Dataset decode_fidb(std::span<const std::uint8_t> bytes);

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

// Desk-scale stand-in for an imaging benchmark. Each class has a prototype
// built from seeded Gaussian blobs; samples are prototype + N(0, noise^2)
// per pixel, clipped to [0, 1] and rounded to f32 so the dataset survives a
// FIDB round trip unchanged.
struct ToyTaskSpec {
    std::size_t n_classes = 4;
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;
    std::vector<std::size_t> per_class; // one count per class
    double noise = 0.3;
    std::size_t blobs_per_class = 2;
    std::uint64_t prototype_seed = 0; // shared by train/test splits of one task
    std::uint64_t sample_seed = 0;
};

Tensor toy_prototypes(const ToyTaskSpec& spec); // [K x C x H x W]
Dataset make_toy_task(const ToyTaskSpec& spec);

enum class PoolSource { random, file, holdout };

// Unlabeled images used to initialise impression synthesis.
struct SeedPool {
    Tensor images; // [M x C x H x W]
    PoolSource source = PoolSource::random;

    std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
};

// i.i.d. uniform [0, 1] pixels.
SeedPool random_seed_pool(const Shape& sample_shape, std::size_t count, std::uint64_t seed);
// Images of a FIDB file; labels are discarded. Throws InputError when the
// file holds fewer than `count` images.
SeedPool file_seed_pool(const std::string& path, std::size_t count);
// Images of `data` at `indices` (the held-out public split), labels discarded.
SeedPool holdout_seed_pool(const Dataset& data, std::span<const std::size_t> indices);

} // namespace fedimpres
