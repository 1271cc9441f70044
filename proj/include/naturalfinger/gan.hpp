#pragma once

// Pluggable generator/discriminator backends. The reference backend is a small
// class-conditional DCGAN-style pair trained with the hinge loss.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "naturalfinger/classifier.hpp"
#include "naturalfinger/nn.hpp"

namespace nf {

struct GanMeta {
    std::string kind = "reference";
    int latent_dim = 16;
    int num_classes = 10;
    ImageShape image_shape;
    double output_low = -1.0, output_high = 1.0;
    /// Sign of discriminator scores on real data (+1: real scores high).
    int real_score_sign = +1;
    std::string loss = "hinge";
    int generator_width = 24;
    int discriminator_width = 8;
};

struct LatentBatch {
    Tensor z;                       ///< batch x latent_dim (as n x latent_dim x 1 x 1)
    std::vector<int> class_labels;  ///< one per row, in [0, num_classes)
    std::uint64_t seed = 0;

    int size() const { return z.n(); }
    LatentBatch subset(std::span<const int> rows) const;
};

LatentBatch sample_latents(int count, int latent_dim, int num_classes, std::uint64_t seed);

/// Discriminator with a projection head: D(x, y) = w . phi(x) + b + E[y] . phi(x).
class ProjectionDiscriminator {
public:
    ProjectionDiscriminator() = default;
    ProjectionDiscriminator(ImageShape shape, int num_classes, int width);
    ProjectionDiscriminator(const ProjectionDiscriminator&) = default;
    ProjectionDiscriminator& operator=(const ProjectionDiscriminator&) = default;

    /// Scores, shape (n, 1, 1, 1).
    Tensor forward(const Tensor& images, std::span<const int> classes);
    /// d(loss)/d(images) for d(loss)/d(scores) = dscore.
    Tensor backward(const Tensor& dscore, bool param_grads);
    std::vector<Param*> params();
    void zero_grad();
    void init(std::uint64_t seed);
    std::vector<double> flat_parameters();
    void load_flat_parameters(std::span<const double> flat);

private:
    Sequential features_;
    Dense head_{1, 1};
    Param embed_;
    int feature_dim_ = 0;
    Tensor phi_;
    std::vector<int> classes_;
};

/// Loaded generator/discriminator pair. The const members are safe to call
/// concurrently; the *_with_grad / backward_* pairs cache state and are not.
class GanHandle {
public:
    GanHandle() = default;
    GanHandle(GanMeta meta, Sequential generator, ProjectionDiscriminator discriminator);

    const GanMeta& meta() const { return meta_; }
    int latent_dim() const { return meta_.latent_dim; }
    int num_classes() const { return meta_.num_classes; }

    Tensor generate(const Tensor& z, std::span<const int> classes) const;
    Tensor discriminate(const Tensor& images, std::span<const int> classes) const;

    Tensor generate_with_grad(const Tensor& z, std::span<const int> classes);
    /// d(loss)/d(z) given d(loss)/d(images) for the last generate_with_grad call.
    Tensor backward_latent(const Tensor& d_images);
    Tensor discriminate_with_grad(const Tensor& images, std::span<const int> classes);
    Tensor backward_image(const Tensor& d_scores);

    Sequential& generator() { return generator_; }
    ProjectionDiscriminator& discriminator() { return discriminator_; }

    void save(const std::filesystem::path& dir) const;

private:
    Tensor generator_input(const Tensor& z, std::span<const int> classes) const;

    GanMeta meta_;
    Sequential generator_;
    ProjectionDiscriminator discriminator_;
};

Sequential build_generator(const GanMeta& meta);
GanHandle build_reference_gan(const GanMeta& meta, std::uint64_t seed);

std::vector<std::string> registered_gan_kinds();
/// Loads `dir/meta.json` and weights, then probes a two-latent generation to
/// verify shape and range. Throws naming the mismatched dimension.
GanHandle load_backend(const std::filesystem::path& dir, const std::string& kind = "reference");

struct GanTrainConfig {
    int steps = 1500;
    int batch_size = 32;
    double lr_generator = 2e-4;
    double lr_discriminator = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int latent_dim = 16;
    int generator_width = 24;
    int discriminator_width = 8;
};

struct GanTrainStats {
    double mean_real_score = 0.0;  ///< On a held-out real batch.
    double mean_fake_score = 0.0;
    std::vector<double> d_loss, g_loss;  ///< Per step.
};

/// Hinge-loss conditional GAN: D is pushed to >= +1 on real and <= -1 on fake.
GanHandle train_reference_gan(const Dataset& data, const GanTrainConfig& config,
                              std::uint64_t seed, GanTrainStats* stats = nullptr);

/// Maps generator output range onto classifier pixels in [0, 1].
Tensor to_unit_range(const Tensor& images, const GanMeta& meta);

}  // namespace nf
