#pragma once

// Labeled image sets, the procedural datasets used at desk scale, class-balanced
// splitting, and 8-bit PNG I/O.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "naturalfinger/tensor.hpp"

namespace nf {

struct Dataset {
    std::string name;
    Tensor images;            ///< N x C x H x W, pixels in [0, 1].
    std::vector<int> labels;  ///< Empty for unlabeled sets.
    int num_classes = 0;

    int size() const { return images.n(); }
    bool labeled() const { return !labels.empty(); }
    Dataset subset(std::span<const int> rows) const;
};

struct DatasetPartitions {
    Dataset train;
    Dataset test;
};

struct ProceduralSpec {
    int image_size = 16;
    int train_per_class = 400;
    int test_per_class = 200;
    /// Unlabeled transfer sets only.
    int transfer_count = 2000;
};

/// Registered generators: "glyphs" (10-class seven-segment digits, the
/// training distribution) and "scribbles" (unlabeled segment/stroke patterns
/// that never form a digit, the knockoff transfer set).
DatasetPartitions make_dataset(const std::string& name, const ProceduralSpec& spec,
                               std::uint64_t seed);
Dataset make_transfer_set(const std::string& name, const ProceduralSpec& spec, std::uint64_t seed);
std::vector<std::string> registered_datasets();

struct SplitResult {
    Dataset pos_train, neg_train, finetune, test;
    std::vector<int> pos_rows, neg_rows, finetune_rows, test_rows;
    std::vector<std::string> warnings;
};

/// Splits train into two class-balanced disjoint halves and test into
/// class-balanced finetune/test halves. Odd class counts put the extra sample
/// in the first half and record a warning.
SplitResult split_dataset(const DatasetPartitions& data, std::uint64_t split_seed);

/// Pixel in [0,1] to 8-bit, round-half-away.
std::uint8_t quantize_pixel(double v);

void write_png(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, int width,
               int height, int channels);
/// Returns pixels in channel-interleaved row-major order.
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int& width, int& height,
                                   int& channels);

}  // namespace nf
