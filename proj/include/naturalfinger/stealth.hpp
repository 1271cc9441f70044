#pragma once

// Adversary-side detector for abnormal queries: natural images against
// Gaussian-noise images and FGSM examples, and the rate at which it flags a
// query set.

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "naturalfinger/adversarial.hpp"
#include "naturalfinger/classifier.hpp"
#include "naturalfinger/data.hpp"

namespace nf {

struct StealthConfig {
    int n_per_class = 5000;
    /// Gaussian noise std for abnormal noise images.
    double noise_std = 0.2;
    /// Base image for noise samples: mid-gray, or the natural image itself.
    bool noise_on_natural = true;
    double epsilon = 8.0 / 255.0;
    int epochs = 20;
    double lr = 1e-3;
    int batch_size = 32;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    /// Gaussian-noise query images evaluated per detector.
    int noise_queries = 200;

    static StealthConfig desk();
    void validate() const;
    nlohmann::json to_json() const;
    static StealthConfig from_json(const nlohmann::json& j);
};

struct DetectorDataset {
    Tensor natural, noise, adversarial;

    /// Natural labelled 0, noise and adversarial labelled 1.
    Dataset combined() const;
};

/// Uses the first n_per_class finetune images, shuffled by seed.
DetectorDataset build_detector_dataset(const Dataset& finetune, Classifier& source, int n_per_class,
                                       std::uint64_t seed, const StealthConfig& config = {});

/// n mid-gray (or natural-based) images with additive Gaussian noise, clipped to [0, 1].
Tensor gaussian_noise_images(int n, int channels, int height, int width, double std_dev,
                             std::uint64_t seed, const Tensor* base = nullptr);

/// detector9 with two outputs, Adam.
Classifier train_detector(const DetectorDataset& dataset, std::uint64_t seed, const StealthConfig& config = {});

/// Fraction of images the detector labels abnormal.
double detection_rate(Classifier& detector, const Tensor& images);

struct StealthSeedResult {
    std::uint64_t seed = 0;
    double query_rate = 0.0;
    double noise_rate = 0.0;
    double natural_rate = 0.0;
    double adversarial_rate = 0.0;
};

struct StealthReport {
    StealthConfig config;
    std::vector<StealthSeedResult> per_seed;
    StealthSeedResult mean;

    nlohmann::json to_json() const;
};

/// Trains one detector per configured seed on `finetune` and measures the query
/// images, fresh Gaussian-noise images, and held-out natural images from `test`
/// (plus FGSM versions of them).
StealthReport run_stealth(const Dataset& finetune, const Dataset& test, Classifier& source,
                          const Tensor& query_images, const StealthConfig& config);

}  // namespace nf
