#include "naturalfinger/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nf {
namespace {

void he_normal(Tensor& w, int fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : w.values()) v = dist(rng);
}

}  // namespace

// ---- Conv2d ---------------------------------------------------------------

Conv2d::Conv2d(int in_c, int out_c, int kernel, int stride, int pad)
    : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_(pad) {
    weight_.name = "weight";
    weight_.value = Tensor(out_c, in_c, kernel, kernel);
    weight_.grad = Tensor::zeros_like(weight_.value);
    weight_.prunable = true;
    bias_.name = "bias";
    bias_.value = Tensor(1, out_c, 1, 1);
    bias_.grad = Tensor::zeros_like(bias_.value);
}

kernels::ConvGeometry Conv2d::geometry(const Tensor& x) const {
    if (x.c() != in_c_) {
        throw std::invalid_argument("Conv2d: expected " + std::to_string(in_c_) +
                                    " input channels, got " + x.shape_string());
    }
    return {x.n(), in_c_, x.h(), x.w(), out_c_, kernel_, stride_, pad_};
}

Tensor Conv2d::forward(const Tensor& x) {
    const auto g = geometry(x);
    input_ = x;
    Tensor y(g.batch, out_c_, g.out_h(), g.out_w());
    kernels::conv2d_forward(g, x.span(), weight_.value.span(), bias_.value.span(), y.span());
    return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool param_grads) {
    const auto g = geometry(input_);
    Tensor dx = Tensor::zeros_like(input_);
    kernels::conv2d_backward_input(g, dy.span(), weight_.value.span(), dx.span());
    if (param_grads) {
        kernels::conv2d_backward_params(g, input_.span(), dy.span(), weight_.grad.span(),
                                        bias_.grad.span());
    }
    return dx;
}

void Conv2d::reset_parameters(std::mt19937_64& rng) {
    he_normal(weight_.value, in_c_ * kernel_ * kernel_, rng);
    std::fill(bias_.value.values().begin(), bias_.value.values().end(), 0.0);
}

// ---- Dense ----------------------------------------------------------------

Dense::Dense(int in, int out) : in_(in), out_(out) {
    weight_.name = "weight";
    weight_.value = Tensor(1, 1, out, in);
    weight_.grad = Tensor::zeros_like(weight_.value);
    weight_.prunable = true;
    bias_.name = "bias";
    bias_.value = Tensor(1, out, 1, 1);
    bias_.grad = Tensor::zeros_like(bias_.value);
}

Tensor Dense::forward(const Tensor& x) {
    if (x.sample_size() != in_) {
        throw std::invalid_argument("Dense: expected " + std::to_string(in_) +
                                    " features, got " + x.shape_string());
    }
    input_ = x;
    Tensor y(x.n(), out_, 1, 1);
    kernels::dense_forward(x.n(), in_, out_, x.span(), weight_.value.span(), bias_.value.span(),
                           y.span());
    return y;
}

Tensor Dense::backward(const Tensor& dy, bool param_grads) {
    Tensor dx = Tensor::zeros_like(input_);
    kernels::dense_backward_input(input_.n(), in_, out_, dy.span(), weight_.value.span(), dx.span());
    if (param_grads) {
        kernels::dense_backward_params(input_.n(), in_, out_, input_.span(), dy.span(),
                                       weight_.grad.span(), bias_.grad.span());
    }
    return dx;
}

void Dense::reset_parameters(std::mt19937_64& rng) {
    he_normal(weight_.value, in_, rng);
    std::fill(bias_.value.values().begin(), bias_.value.values().end(), 0.0);
}

// ---- Activation -----------------------------------------------------------

std::string Activation::kind() const {
    switch (kind_) {
        case ActivationKind::relu: return "relu";
        case ActivationKind::leaky_relu: return "leaky_relu";
        case ActivationKind::tanh: return "tanh";
    }
    return "activation";
}

Tensor Activation::forward(const Tensor& x) {
    input_ = x;
    Tensor y = Tensor::zeros_like(x);
    const std::size_t n = x.size();
    switch (kind_) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        case ActivationKind::leaky_relu:
            for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
            break;
        case ActivationKind::tanh:
            for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
            break;
    }
    output_ = y;
    return y;
}

Tensor Activation::backward(const Tensor& dy, bool /*param_grads*/) {
    Tensor dx = Tensor::zeros_like(dy);
    const std::size_t n = dy.size();
    switch (kind_) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < n; ++i) dx[i] = input_[i] > 0.0 ? dy[i] : 0.0;
            break;
        case ActivationKind::leaky_relu:
            for (std::size_t i = 0; i < n; ++i) dx[i] = input_[i] > 0.0 ? dy[i] : slope_ * dy[i];
            break;
        case ActivationKind::tanh:
            for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * (1.0 - output_[i] * output_[i]);
            break;
    }
    return dx;
}

// ---- Pooling / resampling ---------------------------------------------------

Tensor MaxPool2::forward(const Tensor& x) {
    input_ = x;
    const int oh = x.h() / 2, ow = x.w() / 2;
    Tensor y(x.n(), x.c(), oh, ow);
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j, ++o) {
                    int best = 0;
                    double bv = x.at(n, c, 2 * i, 2 * j);
                    for (int d = 1; d < 4; ++d) {
                        const double v = x.at(n, c, 2 * i + d / 2, 2 * j + d % 2);
                        if (v > bv) {
                            bv = v;
                            best = d;
                        }
                    }
                    y[o] = bv;
                    argmax_[o] = best;
                }
    return y;
}

Tensor MaxPool2::backward(const Tensor& dy, bool /*param_grads*/) {
    Tensor dx = Tensor::zeros_like(input_);
    std::size_t o = 0;
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int i = 0; i < dy.h(); ++i)
                for (int j = 0; j < dy.w(); ++j, ++o) {
                    const int d = argmax_[o];
                    dx.at(n, c, 2 * i + d / 2, 2 * j + d % 2) += dy[o];
                }
    return dx;
}

Tensor AvgPool2::forward(const Tensor& x) {
    in_h_ = x.h();
    in_w_ = x.w();
    Tensor y(x.n(), x.c(), x.h() / 2, x.w() / 2);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < y.h(); ++i)
                for (int j = 0; j < y.w(); ++j) {
                    y.at(n, c, i, j) = 0.25 * (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i, 2 * j + 1) +
                                               x.at(n, c, 2 * i + 1, 2 * j) +
                                               x.at(n, c, 2 * i + 1, 2 * j + 1));
                }
    return y;
}

Tensor AvgPool2::backward(const Tensor& dy, bool /*param_grads*/) {
    Tensor dx(dy.n(), dy.c(), in_h_, in_w_);
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int i = 0; i < dy.h(); ++i)
                for (int j = 0; j < dy.w(); ++j) {
                    const double g = 0.25 * dy.at(n, c, i, j);
                    dx.at(n, c, 2 * i, 2 * j) = g;
                    dx.at(n, c, 2 * i, 2 * j + 1) = g;
                    dx.at(n, c, 2 * i + 1, 2 * j) = g;
                    dx.at(n, c, 2 * i + 1, 2 * j + 1) = g;
                }
    return dx;
}

Tensor Upsample2::forward(const Tensor& x) {
    Tensor y(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < y.h(); ++i)
                for (int j = 0; j < y.w(); ++j) y.at(n, c, i, j) = x.at(n, c, i / 2, j / 2);
    return y;
}

Tensor Upsample2::backward(const Tensor& dy, bool /*param_grads*/) {
    Tensor dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int i = 0; i < dy.h(); ++i)
                for (int j = 0; j < dy.w(); ++j) dx.at(n, c, i / 2, j / 2) += dy.at(n, c, i, j);
    return dx;
}

Tensor Reshape::forward(const Tensor& x) {
    in_c_ = x.c();
    in_h_ = x.h();
    in_w_ = x.w();
    return x.reshaped(x.n(), c_, h_, w_);
}

Tensor Reshape::backward(const Tensor& dy, bool /*param_grads*/) {
    return dy.reshaped(dy.n(), in_c_, in_h_, in_w_);
}

// ---- Sequential -------------------------------------------------------------

Sequential::Sequential(const Sequential& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
    if (this != &other) {
        Sequential copy(other);
        layers_ = std::move(copy.layers_);
    }
    return *this;
}

Tensor Sequential::forward(const Tensor& x) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
}

Tensor Sequential::backward(const Tensor& dy, bool param_grads) {
    Tensor g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, param_grads);
    return g;
}

std::vector<Param*> Sequential::params() {
    std::vector<Param*> out;
    for (auto& l : layers_) {
        auto p = l->params();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<const Param*> Sequential::params() const {
    std::vector<const Param*> out;
    for (const auto& l : layers_) {
        for (Param* p : l->params()) out.push_back(p);
    }
    return out;
}

void Sequential::zero_grad() {
    for (Param* p : params()) std::fill(p->grad.values().begin(), p->grad.values().end(), 0.0);
}

void Sequential::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : layers_) l->reset_parameters(rng);
}

std::size_t Sequential::parameter_count() const {
    std::size_t n = 0;
    for (const Param* p : params()) n += p->value.size();
    return n;
}

std::vector<double> Sequential::flat_parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const Param* p : params()) {
        flat.insert(flat.end(), p->value.values().begin(), p->value.values().end());
    }
    return flat;
}

void Sequential::load_flat_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
        throw std::invalid_argument("load_flat_parameters: expected " +
                                    std::to_string(parameter_count()) + " values, got " +
                                    std::to_string(flat.size()));
    }
    std::size_t off = 0;
    for (Param* p : params()) {
        std::copy_n(flat.begin() + off, p->value.size(), p->value.values().begin());
        off += p->value.size();
    }
}

// ---- Residual ---------------------------------------------------------------

Tensor Residual::forward(const Tensor& x) {
    Tensor y = body_.forward(x);
    if (!y.same_shape(x)) throw std::invalid_argument("Residual: body changed the shape");
    y += x;
    return y;
}

Tensor Residual::backward(const Tensor& dy, bool param_grads) {
    Tensor dx = body_.backward(dy, param_grads);
    dx += dy;
    return dx;
}

void Residual::reset_parameters(std::mt19937_64& rng) {
    for (std::size_t i = 0; i < body_.size(); ++i) body_.layer(i).reset_parameters(rng);
}

// ---- Optimizers -------------------------------------------------------------

namespace {

void apply_mask(Param& p) {
    if (p.mask.empty()) return;
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
        if (!p.mask[i]) p.value[i] = 0.0;
    }
}

}  // namespace

void Sgd::step(std::span<Param* const> params) {
    if (velocity_.size() != params.size()) {
        velocity_.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i]->value.size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        auto& vel = velocity_[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            double g = p.grad[j];
            if (weight_decay_ != 0.0 && p.prunable) g += weight_decay_ * p.value[j];
            vel[j] = momentum_ * vel[j] + g;
            p.value[j] -= lr_ * vel[j];
        }
        apply_mask(p);
    }
}

void Adam::step(std::span<Param* const> params) {
    if (m_.size() != params.size()) {
        m_.assign(params.size(), {});
        v_.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->value.size(), 0.0);
            v_[i].assign(params[i]->value.size(), 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
            p.value[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
        }
        apply_mask(p);
    }
}

}  // namespace nf
