#include "naturalfinger/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace nf {

Tensor Tensor::slice(int begin, int end) const {
    if (begin < 0 || end > n_ || begin > end) {
        throw std::out_of_range("Tensor::slice: bad range");
    }
    Tensor t(end - begin, c_, h_, w_);
    const auto s = static_cast<std::size_t>(sample_size());
    std::copy(v_.begin() + begin * s, v_.begin() + end * s, t.v_.begin());
    return t;
}

Tensor Tensor::gather(std::span<const int> rows) const {
    Tensor t(static_cast<int>(rows.size()), c_, h_, w_);
    const auto s = static_cast<std::size_t>(sample_size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= n_) {
            throw std::out_of_range("Tensor::gather: row out of range");
        }
        std::copy_n(v_.begin() + rows[i] * s, s, t.v_.begin() + i * s);
    }
    return t;
}

Tensor Tensor::concat(std::span<const Tensor> parts) {
    if (parts.empty()) return {};
    int total = 0;
    for (const auto& p : parts) {
        if (p.c_ != parts[0].c_ || p.h_ != parts[0].h_ || p.w_ != parts[0].w_) {
            throw std::invalid_argument("Tensor::concat: sample shape mismatch");
        }
        total += p.n_;
    }
    Tensor t(total, parts[0].c_, parts[0].h_, parts[0].w_);
    auto out = t.v_.begin();
    for (const auto& p : parts) out = std::copy(p.v_.begin(), p.v_.end(), out);
    return t;
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "(" << n_ << "," << c_ << "," << h_ << "," << w_ << ")";
    return os.str();
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (o.v_.size() != v_.size()) throw std::invalid_argument("Tensor::+=: size mismatch");
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (auto& x : v_) x *= s;
    return *this;
}

}  // namespace nf
