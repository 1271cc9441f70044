#pragma once

// Minimal feed-forward network toolkit: layers with explicit backward passes,
// a Sequential container, and the SGD/Adam optimizers used for training.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "naturalfinger/kernels.hpp"
#include "naturalfinger/tensor.hpp"

namespace nf {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    /// Weight matrices and conv filters; biases are not prunable.
    bool prunable = false;
    /// Entries with mask 0 stay at zero through optimizer steps (empty = no mask).
    std::vector<unsigned char> mask;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    /// Caches whatever backward needs; a layer is not reentrant.
    virtual Tensor forward(const Tensor& x) = 0;
    /// Returns d(loss)/d(input). Parameter gradients are accumulated only when requested.
    virtual Tensor backward(const Tensor& dy, bool param_grads) = 0;
    virtual std::vector<Param*> params() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual void reset_parameters(std::mt19937_64& /*rng*/) {}
};

class Conv2d final : public Layer {
public:
    Conv2d(int in_c, int out_c, int kernel, int stride = 1, int pad = 0);
    std::string kind() const override { return "conv2d"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
    void reset_parameters(std::mt19937_64& rng) override;

private:
    kernels::ConvGeometry geometry(const Tensor& x) const;
    int in_c_, out_c_, kernel_, stride_, pad_;
    Param weight_, bias_;
    Tensor input_;
};

class Dense final : public Layer {
public:
    Dense(int in, int out);
    std::string kind() const override { return "dense"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
    void reset_parameters(std::mt19937_64& rng) override;
    int in_features() const { return in_; }
    int out_features() const { return out_; }

private:
    int in_, out_;
    Param weight_, bias_;
    Tensor input_;
};

enum class ActivationKind { relu, leaky_relu, tanh };

class Activation final : public Layer {
public:
    explicit Activation(ActivationKind kind, double slope = 0.2) : kind_(kind), slope_(slope) {}
    std::string kind() const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Activation>(*this); }

private:
    ActivationKind kind_;
    double slope_;
    Tensor input_, output_;
};

class MaxPool2 final : public Layer {
public:
    std::string kind() const override { return "maxpool2"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }

private:
    Tensor input_;
    std::vector<int> argmax_;
};

class AvgPool2 final : public Layer {
public:
    std::string kind() const override { return "avgpool2"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2>(*this); }

private:
    int in_h_ = 0, in_w_ = 0;
};

/// Nearest-neighbour 2x upsampling.
class Upsample2 final : public Layer {
public:
    std::string kind() const override { return "upsample2"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2>(*this); }
};

/// Reinterprets each sample as (c, h, w); Reshape(k, 1, 1) flattens.
class Reshape final : public Layer {
public:
    Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
    std::string kind() const override { return "reshape"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

private:
    int c_, h_, w_;
    int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class Sequential {
public:
    Sequential() = default;
    Sequential(const Sequential& other);
    Sequential& operator=(const Sequential& other);
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <class L, class... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }
    void add_layer(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy, bool param_grads = true);

    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    void zero_grad();
    /// He-normal weights, zero biases.
    void init(std::uint64_t seed);

    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }
    std::size_t parameter_count() const;

    std::vector<double> flat_parameters() const;
    void load_flat_parameters(std::span<const double> flat);

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// y = body(x) + x. Body must preserve the shape.
class Residual final : public Layer {
public:
    explicit Residual(Sequential body) : body_(std::move(body)) {}
    std::string kind() const override { return "residual"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy, bool param_grads) override;
    std::vector<Param*> params() override { return body_.params(); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Residual>(*this); }
    void reset_parameters(std::mt19937_64& rng) override;

private:
    Sequential body_;
};

class Optimizer {
public:
    virtual ~Optimizer() = default;
    /// Applies one update from the accumulated gradients of `params`.
    virtual void step(std::span<Param* const> params) = 0;
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
        : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
    void step(std::span<Param* const> params) override;

private:
    double lr_, momentum_, weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

class Adam final : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::span<Param* const> params) override;

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace nf
