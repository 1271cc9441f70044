#pragma once

// Image classifiers: the architecture registry, checkpoints, supervised and
// soft-label training, and the loss helpers shared with the attack modules.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "naturalfinger/data.hpp"
#include "naturalfinger/nn.hpp"

namespace nf {

struct ImageShape {
    int channels = 1, height = 16, width = 16;
    bool operator==(const ImageShape&) const = default;
};

struct Classifier {
    std::string architecture;
    int num_classes = 0;
    ImageShape input;
    Sequential net;
    /// Index in `net` of the final classification layer.
    std::size_t head_layer = 0;

    Tensor logits(const Tensor& x);
    std::vector<int> predict(const Tensor& x);
    /// Parameters of the classification layer only.
    std::vector<Param*> head_params();
    /// Fresh initialization of the classification layer.
    void reinitialize_head(std::uint64_t seed);
};

std::vector<std::string> registered_architectures();
bool is_registered_architecture(const std::string& name);
/// Throws std::invalid_argument listing the registered names for unknown architectures.
Classifier build_classifier(const std::string& architecture, ImageShape input, int num_classes,
                            std::uint64_t seed);

void save_classifier(const Classifier& model, const std::filesystem::path& dir);
Classifier load_classifier(const std::filesystem::path& dir);

/// Raw parameter file shared by every checkpoint ("NFW1", count, doubles).
void write_parameters(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_parameters(const std::filesystem::path& path);

// ---- losses ----

/// Mean softmax cross-entropy; `grad` receives d(loss)/d(logits).
double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad);
/// Distillation loss: cross-entropy between softmax(teacher/T) and softmax(student/T),
/// scaled by T^2.
double soft_cross_entropy(const Tensor& student_logits, const Tensor& teacher_logits,
                          double temperature, Tensor* grad);
std::vector<int> argmax_rows(const Tensor& logits);

// ---- training ----

enum class OptimizerKind { sgd, adam };

struct TrainOptions {
    int epochs = 10;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::sgd;
    /// Update only the classification layer.
    bool head_only = false;
    std::uint64_t seed = 0;
};

void train_supervised(Classifier& model, const Tensor& images, std::span<const int> labels,
                      const TrainOptions& options);
/// Matches temperature-scaled teacher logits on unlabeled images.
void train_soft(Classifier& model, const Tensor& images, const Tensor& teacher_logits,
                double temperature, const TrainOptions& options);
double accuracy(Classifier& model, const Dataset& data);
/// Fraction of images on which two models predict the same class.
double agreement(Classifier& a, Classifier& b, const Tensor& images);

}  // namespace nf
