#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "naturalfinger/tensor.hpp"

namespace nf::test {

inline Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(n, c, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

/// Central finite difference of f along every coordinate of x.
inline Tensor numeric_gradient(Tensor x, const std::function<double(const Tensor&)>& f,
                               double h = 1e-6) {
    Tensor g = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_rel_error(const Tensor& analytic, const Tensor& numeric) {
    double m = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double scale = std::max({1e-4, std::abs(analytic[i]), std::abs(numeric[i])});
        m = std::max(m, std::abs(analytic[i] - numeric[i]) / scale);
    }
    return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("nf-test-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace nf::test
