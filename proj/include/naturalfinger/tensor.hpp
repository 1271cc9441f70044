#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nf {

/// Dense NCHW tensor of doubles. Fully-connected activations use h = w = 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, double fill = 0.0)
        : n_(n), c_(c), h_(h), w_(w),
          v_(static_cast<std::size_t>(n) * c * h * w, fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0) {
            throw std::invalid_argument("Tensor: negative dimension");
        }
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.n_, t.c_, t.h_, t.w_); }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    /// Elements per sample.
    int sample_size() const { return c_ * h_ * w_; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::span<double> span() { return v_; }
    std::span<const double> span() const { return v_; }
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    double& at(int n, int c, int h, int w) {
        return v_[((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w];
    }
    double at(int n, int c, int h, int w) const {
        return v_[((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w];
    }

    std::span<double> sample(int i) {
        return std::span<double>(v_).subspan(static_cast<std::size_t>(i) * sample_size(), sample_size());
    }
    std::span<const double> sample(int i) const {
        return std::span<const double>(v_).subspan(static_cast<std::size_t>(i) * sample_size(),
                                                   sample_size());
    }

    /// Same storage, new per-sample shape; element count must match.
    Tensor reshaped(int n, int c, int h, int w) const {
        if (static_cast<std::size_t>(n) * c * h * w != v_.size()) {
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        }
        Tensor t = *this;
        t.n_ = n;
        t.c_ = c;
        t.h_ = h;
        t.w_ = w;
        return t;
    }

    /// Rows [begin, end) along the batch axis.
    Tensor slice(int begin, int end) const;
    /// Rows picked by index, in order.
    Tensor gather(std::span<const int> rows) const;
    /// Concatenates along the batch axis; per-sample shapes must agree.
    static Tensor concat(std::span<const Tensor> parts);

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }
    std::string shape_string() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator*=(double s);

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> v_;
};

}  // namespace nf
