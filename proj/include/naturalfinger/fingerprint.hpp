#pragma once

// Natural fingerprint generation: pick GAN latents whose images every positive
// model already recognises, give them a positive label and an adversarial
// label for the negatives, optimise the latents under a CW + discriminator
// objective with random input transformations, and keep the samples that all
// trained models classify as intended.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "naturalfinger/classifier.hpp"
#include "naturalfinger/gan.hpp"

namespace nf {

enum class DiscriminatorLossMode {
    naturalness,    ///< Hinge toward the backend's real-side score.
    paper_literal,  ///< Hinge toward -1 regardless of the backend convention.
};

struct FingerprintConfig {
    double lr = 0.5;
    int iterations = 1000;
    double lambda = 0.5;
    double cw_margin = 5.0;
    double fgsm_epsilon = 8.0 / 255.0;
    int query_size = 100;
    int model_batch_size = 16;
    bool trick_adversarial_label = true;
    bool trick_input_transform = true;
    bool trick_discriminator_loss = true;
    int screen_transform_draws = 1;
    DiscriminatorLossMode discriminator_mode = DiscriminatorLossMode::naturalness;
    /// Latents drawn when looking for initial samples.
    int n_candidates = 2000;
    /// Latents carried into optimisation.
    int optimize_batch = 100;
    double flip_probability = 0.5;
    /// Reflect padding before the random crop; negative means height / 8.
    int crop_padding = -1;
    std::uint64_t seed = 0;

    /// Lambda actually applied (0 when the discriminator trick is off).
    double effective_lambda() const { return trick_discriminator_loss ? lambda : 0.0; }
    void validate() const;
    nlohmann::json to_json() const;
    static FingerprintConfig from_json(const nlohmann::json& j);
    std::string hash() const;
};

/// Classifiers used during optimisation. Pointers are borrowed.
struct TrainedModelSet {
    std::vector<Classifier*> positives;
    std::vector<Classifier*> negatives;
    std::vector<std::string> positive_ids;
    std::vector<std::string> negative_ids;
};

struct QuerySample {
    std::vector<std::uint8_t> pixels;  ///< C x H x W, 8-bit.
    int y_positive = 0;
    int y_adversarial = 0;
    int condition_class = 0;
    std::vector<double> latent;
};

struct GenerationStats {
    int candidates = 0;
    int initial_survivors = 0;
    int labeled = 0;
    int optimized = 0;
    int screened = 0;
};

struct QuerySet {
    ImageShape shape;
    std::vector<QuerySample> samples;
    std::string config_hash;
    GenerationStats stats;
    nlohmann::json provenance;

    int size() const { return static_cast<int>(samples.size()); }
    /// Stored pixels divided by 255.
    Tensor images() const;
    std::vector<int> positive_labels() const;
    std::vector<int> adversarial_labels() const;
};

// ---- losses ----

/// max(max_{i != t} Z_i - Z_t, -k).
double cw_loss(std::span<const double> logits, int target, double margin);
/// Batch mean of cw_loss; `grad` receives d/d(logits).
double cw_loss_batch(const Tensor& logits, std::span<const int> targets, double margin,
                     Tensor* grad);
/// max(0, 1 - y * y_hat).
double hinge_loss(double score, double target);
/// Mean hinge of discriminator scores against the mode's target.
double discriminator_loss(const Tensor& scores, int real_score_sign, DiscriminatorLossMode mode,
                          Tensor* grad);

struct LossTerms {
    double positive = 0.0;
    double negative = 0.0;
    double discriminator = 0.0;
    double total = 0.0;
};

struct LossGradients {
    Tensor d_transformed;  ///< d(total)/d(classifier input)
    Tensor d_fake;         ///< d(total)/d(generator output), discriminator term only
};

/// l_pos + l_neg + lambda * l_d; with lambda == 0 the discriminator term is
/// left out entirely rather than multiplied by zero.
double composite_loss(double l_pos, double l_neg, double l_d, double lambda);

/// L_pos + L_neg + lambda * L_d. `transformed` is classifier input in [0,1];
/// `fake` is the untransformed generator output fed to the discriminator.
/// The discriminator is skipped entirely when the effective lambda is 0.
LossTerms total_loss(const Tensor& transformed, const Tensor& fake,
                     std::span<const int> y_original, std::span<const int> y_adversarial,
                     std::span<Classifier* const> batch_positives,
                     std::span<Classifier* const> batch_negatives, GanHandle* gan,
                     std::span<const int> condition_classes, const FingerprintConfig& config,
                     LossGradients* grads);

// ---- input transformation ----

struct TransformDraw {
    int pad = 0;
    std::vector<unsigned char> flip;
    std::vector<int> offset_y, offset_x;  ///< crop origin in the padded image, [0, 2*pad]
};

int resolved_crop_padding(const FingerprintConfig& config, int height);
TransformDraw draw_transform(int batch, int pad, double flip_probability, std::mt19937_64& rng);
/// Reflect-pad, crop back to the input size, then optionally flip horizontally.
Tensor apply_transform(const Tensor& x, const TransformDraw& draw);
Tensor transform_backward(const Tensor& grad, const TransformDraw& draw);
/// Random draw applied to x, or x itself when the trick is disabled.
Tensor transform(const Tensor& x, std::mt19937_64& rng, const FingerprintConfig& config);

// ---- pipeline steps ----

/// Lowest class index wins ties. predictions[m][i] is model m's label for sample i.
std::vector<int> majority_vote(const std::vector<std::vector<int>>& predictions, int num_classes);

/// Draws n_candidates latents with random classes and keeps (up to `keep`) those
/// whose image every positive predicts as its condition class.
LatentBatch select_initial_latents(const GanHandle& gan, std::span<Classifier* const> positives,
                                   int n_candidates, int keep, std::uint64_t seed);

struct LabelAssignment {
    std::vector<int> y_original;
    std::vector<int> y_adversarial;
    std::vector<int> kept_rows;  ///< Rows of the input batch that were kept.
};

LabelAssignment assign_labels(const Tensor& images, std::span<Classifier* const> positives,
                              std::span<Classifier* const> negatives, double epsilon,
                              bool adversarial_label, std::uint64_t seed);

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(int iteration, std::vector<double> trace);
    int iteration() const { return iteration_; }
    const std::vector<double>& trace() const { return trace_; }

private:
    int iteration_;
    std::vector<double> trace_;
};

/// Gradient descent on the latents for config.iterations passes over the model
/// batches. Each latent moves by lr times the gradient of its own loss.
LatentBatch optimize_latents(const LatentBatch& initial, std::span<const int> y_original,
                             std::span<const int> y_adversarial, const TrainedModelSet& models,
                             GanHandle& gan, const FingerprintConfig& config,
                             std::vector<double>* loss_trace = nullptr);

class ScreeningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Quantises G(z) to 8 bits and keeps a sample iff, on the untransformed image
/// and on each of the screen_transform_draws random transforms, every positive
/// predicts y_original and every negative predicts y_adversarial.
QuerySet screen(const LatentBatch& latents, std::span<const int> y_original,
                std::span<const int> y_adversarial, const TrainedModelSet& models,
                const GanHandle& gan, const FingerprintConfig& config);

/// Full pipeline over an already-loaded model set.
QuerySet generate_fingerprint(const TrainedModelSet& models, GanHandle& gan,
                              const FingerprintConfig& config);

/// GAN output quantised to 8-bit pixels in C x H x W order per sample.
std::vector<std::vector<std::uint8_t>> quantize_images(const Tensor& gan_output, const GanMeta& meta);

void save_query_set(const QuerySet& q, const std::filesystem::path& dir);
QuerySet load_query_set(const std::filesystem::path& dir);

}  // namespace nf
