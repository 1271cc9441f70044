#include "naturalfinger/kernels.hpp"

#include <algorithm>
#include <cstddef>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace nf::kernels {
namespace {

// Output columns [lo, hi) whose input column ow*stride - pad + kw is in range.
struct ColumnRange {
    int lo, hi;
};

ColumnRange valid_columns(int in_w, int out_w, int stride, int pad, int kw) {
    int lo = 0;
    if (pad - kw > 0) lo = (pad - kw + stride - 1) / stride;
    const int num = in_w - 1 + pad - kw;
    int hi = num < 0 ? 0 : num / stride + 1;
    hi = std::min(hi, out_w);
    return {lo, std::max(lo, hi)};
}

}  // namespace

int max_threads() {
#if defined(_OPENMP)
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
    const int oh_n = g.out_h(), ow_n = g.out_w();
    const int k = g.kernel, s = g.stride;
    const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < g.batch; ++n) {
        for (int oc = 0; oc < g.out_c; ++oc) {
            double* yp = y.data() + (static_cast<std::size_t>(n) * g.out_c + oc) * out_plane;
            std::fill(yp, yp + out_plane, b[oc]);
            for (int ic = 0; ic < g.in_c; ++ic) {
                const double* xp = x.data() + (static_cast<std::size_t>(n) * g.in_c + ic) * in_plane;
                const double* wp = w.data() + (static_cast<std::size_t>(oc) * g.in_c + ic) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const double wv = wp[kh * k + kw];
                        const ColumnRange cols = valid_columns(g.in_w, ow_n, s, g.pad, kw);
                        for (int oh = 0; oh < oh_n; ++oh) {
                            const int ih = oh * s - g.pad + kh;
                            if (ih < 0 || ih >= g.in_h) continue;
                            const double* xr = xp + static_cast<std::size_t>(ih) * g.in_w;
                            double* yr = yp + static_cast<std::size_t>(oh) * ow_n;
                            if (s == 1) {
                                const double* xs = xr - g.pad + kw;
                                for (int ow = cols.lo; ow < cols.hi; ++ow) yr[ow] += wv * xs[ow];
                            } else {
                                for (int ow = cols.lo; ow < cols.hi; ++ow) {
                                    yr[ow] += wv * xr[ow * s - g.pad + kw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
    const int oh_n = g.out_h(), ow_n = g.out_w();
    const int k = g.kernel, s = g.stride;
    const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < g.batch; ++n) {
        for (int ic = 0; ic < g.in_c; ++ic) {
            double* xp = dx.data() + (static_cast<std::size_t>(n) * g.in_c + ic) * in_plane;
            std::fill(xp, xp + in_plane, 0.0);
            for (int oc = 0; oc < g.out_c; ++oc) {
                const double* yp = dy.data() + (static_cast<std::size_t>(n) * g.out_c + oc) * out_plane;
                const double* wp = w.data() + (static_cast<std::size_t>(oc) * g.in_c + ic) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const double wv = wp[kh * k + kw];
                        const ColumnRange cols = valid_columns(g.in_w, ow_n, s, g.pad, kw);
                        for (int oh = 0; oh < oh_n; ++oh) {
                            const int ih = oh * s - g.pad + kh;
                            if (ih < 0 || ih >= g.in_h) continue;
                            double* xr = xp + static_cast<std::size_t>(ih) * g.in_w;
                            const double* yr = yp + static_cast<std::size_t>(oh) * ow_n;
                            if (s == 1) {
                                double* xs = xr - g.pad + kw;
                                for (int ow = cols.lo; ow < cols.hi; ++ow) xs[ow] += wv * yr[ow];
                            } else {
                                for (int ow = cols.lo; ow < cols.hi; ++ow) {
                                    xr[ow * s - g.pad + kw] += wv * yr[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> db) {
    const int oh_n = g.out_h(), ow_n = g.out_w();
    const int k = g.kernel, s = g.stride;
    const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;

#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < g.out_c; ++oc) {
        for (int n = 0; n < g.batch; ++n) {
            const double* yp = dy.data() + (static_cast<std::size_t>(n) * g.out_c + oc) * out_plane;
            double bias_acc = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) bias_acc += yp[i];
            db[oc] += bias_acc;
            for (int ic = 0; ic < g.in_c; ++ic) {
                const double* xp = x.data() + (static_cast<std::size_t>(n) * g.in_c + ic) * in_plane;
                double* wp = dw.data() + (static_cast<std::size_t>(oc) * g.in_c + ic) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const ColumnRange cols = valid_columns(g.in_w, ow_n, s, g.pad, kw);
                        double acc = 0.0;
                        for (int oh = 0; oh < oh_n; ++oh) {
                            const int ih = oh * s - g.pad + kh;
                            if (ih < 0 || ih >= g.in_h) continue;
                            const double* xr = xp + static_cast<std::size_t>(ih) * g.in_w;
                            const double* yr = yp + static_cast<std::size_t>(oh) * ow_n;
                            if (s == 1) {
                                const double* xs = xr - g.pad + kw;
                                for (int ow = cols.lo; ow < cols.hi; ++ow) acc += yr[ow] * xs[ow];
                            } else {
                                for (int ow = cols.lo; ow < cols.hi; ++ow) {
                                    acc += yr[ow] * xr[ow * s - g.pad + kw];
                                }
                            }
                        }
                        wp[kh * k + kw] += acc;
                    }
                }
            }
        }
    }
}

void dense_forward(int batch, int in, int out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < batch; ++n) {
        for (int o = 0; o < out; ++o) {
            const double* xr = x.data() + static_cast<std::size_t>(n) * in;
            const double* wr = w.data() + static_cast<std::size_t>(o) * in;
            double acc = 0.0;
            for (int i = 0; i < in; ++i) acc += wr[i] * xr[i];
            y[static_cast<std::size_t>(n) * out + o] = acc + b[o];
        }
    }
}

void dense_backward_input(int batch, int in, int out, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx) {
#pragma omp parallel for schedule(static)
    for (int n = 0; n < batch; ++n) {
        double* xr = dx.data() + static_cast<std::size_t>(n) * in;
        std::fill(xr, xr + in, 0.0);
        for (int o = 0; o < out; ++o) {
            const double g = dy[static_cast<std::size_t>(n) * out + o];
            const double* wr = w.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) xr[i] += g * wr[i];
        }
    }
}

void dense_backward_params(int batch, int in, int out, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dw,
                           std::span<double> db) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out; ++o) {
        double* wr = dw.data() + static_cast<std::size_t>(o) * in;
        for (int n = 0; n < batch; ++n) {
            const double g = dy[static_cast<std::size_t>(n) * out + o];
            db[o] += g;
            const double* xr = x.data() + static_cast<std::size_t>(n) * in;
            for (int i = 0; i < in; ++i) wr[i] += g * xr[i];
        }
    }
}

}  // namespace nf::kernels
