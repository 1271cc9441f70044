#pragma once

// Compute kernels for the network layers. Two implementations share each
// signature: the OpenMP one in nf::kernels (used everywhere) and the serial
// one in nf::kernels::reference (kept for tests and the benchmark).
//
// Every output element is written by exactly one thread and reduced in a
// fixed order, so results do not depend on the thread count.

#include <span>

namespace nf::kernels {

struct ConvGeometry {
    int batch = 0;
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 0;

    int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    int weight_count() const { return out_c * in_c * kernel * kernel; }
};

// weights: [out_c][in_c][k][k]; activations NCHW.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
// Overwrites dx.
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
// Accumulates into dw, db.
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> db);

// weights: [out][in].
void dense_forward(int batch, int in, int out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y);
void dense_backward_input(int batch, int in, int out, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx);
void dense_backward_params(int batch, int in, int out, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dw,
                           std::span<double> db);

/// Number of threads the OpenMP kernels will use (1 without OpenMP).
int max_threads();

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> db);
void dense_forward(int batch, int in, int out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y);
void dense_backward_input(int batch, int in, int out, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx);
void dense_backward_params(int batch, int in, int out, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dw,
                           std::span<double> db);

}  // namespace reference
}  // namespace nf::kernels
