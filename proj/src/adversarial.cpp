#include "naturalfinger/adversarial.hpp"

#include <algorithm>
#include <stdexcept>

namespace nf {
namespace {

constexpr int kChunk = 256;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// One projected signed step from `current`, anchored at `origin`.
void signed_step(Tensor& current, const Tensor& origin, const Tensor& grad, double step,
                 double epsilon) {
    for (std::size_t i = 0; i < current.size(); ++i) {
        double v = current[i] + step * sign(grad[i]);
        v = std::clamp(v, origin[i] - epsilon, origin[i] + epsilon);
        current[i] = std::clamp(v, 0.0, 1.0);
    }
}

}  // namespace

Tensor input_gradient(std::span<Classifier* const> models, const Tensor& x,
                      std::span<const int> labels, double* loss) {
    if (models.empty()) throw std::invalid_argument("input_gradient: empty model list");
    if (labels.size() != static_cast<std::size_t>(x.n())) {
        throw std::invalid_argument("input_gradient: label count mismatch");
    }
    Tensor grad = Tensor::zeros_like(x);
    double total = 0.0;
    const double model_scale = 1.0 / static_cast<double>(models.size());
    for (int b = 0; b < x.n(); b += kChunk) {
        const int e = std::min(x.n(), b + kChunk);
        const Tensor xb = x.slice(b, e);
        const std::span<const int> yb = labels.subspan(static_cast<std::size_t>(b),
                                                       static_cast<std::size_t>(e - b));
        const double chunk_scale = static_cast<double>(e - b) / x.n();
        for (Classifier* m : models) {
            Tensor g;
            total += chunk_scale * model_scale * cross_entropy(m->net.forward(xb), yb, &g);
            g *= chunk_scale * model_scale;
            const Tensor dx = m->net.backward(g, false);
            auto dst = grad.span().subspan(static_cast<std::size_t>(b) * x.sample_size(), dx.size());
            for (std::size_t i = 0; i < dx.size(); ++i) dst[i] += dx[i];
        }
    }
    if (loss) *loss = total;
    return grad;
}

Tensor fgsm(std::span<Classifier* const> models, const Tensor& x, std::span<const int> labels,
            double epsilon) {
    if (models.empty()) throw std::invalid_argument("fgsm: empty model list");
    if (epsilon <= 0) throw std::invalid_argument("fgsm: epsilon must be > 0");
    Tensor out = x;
    signed_step(out, x, input_gradient(models, x, labels), epsilon, epsilon);
    return out;
}

Tensor fgsm(Classifier& model, const Tensor& x, std::span<const int> labels, double epsilon) {
    Classifier* m = &model;
    return fgsm(std::span<Classifier* const>(&m, 1), x, labels, epsilon);
}

Tensor pgd(std::span<Classifier* const> models, const Tensor& x, std::span<const int> labels,
           const AttackBudget& budget) {
    if (models.empty()) throw std::invalid_argument("pgd: empty model list");
    if (budget.epsilon <= 0) throw std::invalid_argument("pgd: epsilon must be > 0");
    if (budget.steps < 1) throw std::invalid_argument("pgd: steps must be >= 1");
    if (budget.step_size <= 0) throw std::invalid_argument("pgd: step_size must be > 0");
    Tensor out = x;
    for (int s = 0; s < budget.steps; ++s) {
        signed_step(out, x, input_gradient(models, out, labels), budget.step_size, budget.epsilon);
    }
    return out;
}

Tensor pgd(Classifier& model, const Tensor& x, std::span<const int> labels,
           const AttackBudget& budget) {
    Classifier* m = &model;
    return pgd(std::span<Classifier* const>(&m, 1), x, labels, budget);
}

}  // namespace nf
