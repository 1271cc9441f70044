#pragma once

// FGSM and L-infinity PGD. Pixels live in [0, 1]; no internal randomness.

#include <span>
#include <vector>

#include "naturalfinger/classifier.hpp"

namespace nf {

struct AttackBudget {
    double epsilon = 8.0 / 255.0;
    int steps = 10;
    double step_size = 2.0 / 255.0;
};

/// Gradient of the cross-entropy averaged over models and samples, w.r.t. the
/// input images. Optionally reports the loss value.
Tensor input_gradient(std::span<Classifier* const> models, const Tensor& x,
                      std::span<const int> labels, double* loss = nullptr);

/// Single signed-gradient step of size epsilon on the mean cross-entropy over
/// `models`, clipped to [0, 1]. sign(0) = 0.
Tensor fgsm(std::span<Classifier* const> models, const Tensor& x, std::span<const int> labels,
            double epsilon);
Tensor fgsm(Classifier& model, const Tensor& x, std::span<const int> labels, double epsilon);

/// Iterated FGSM steps of `step_size`, projected after every step onto the
/// epsilon-ball around x and onto [0, 1]. Starts from x itself.
Tensor pgd(std::span<Classifier* const> models, const Tensor& x, std::span<const int> labels,
           const AttackBudget& budget);
Tensor pgd(Classifier& model, const Tensor& x, std::span<const int> labels,
           const AttackBudget& budget);

}  // namespace nf
