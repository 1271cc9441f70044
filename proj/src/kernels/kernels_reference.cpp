// Serial, index-by-index versions of the layer kernels. Slow on purpose:
// every output is computed straight from its defining sum.

#include "naturalfinger/kernels.hpp"

#include <cstddef>

namespace nf::kernels::reference {
namespace {

std::size_t idx4(int a, int b, int c, int d, int nb, int nc, int nd) {
    return ((static_cast<std::size_t>(a) * nb + b) * nc + c) * nd + d;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
    const int oh_n = g.out_h(), ow_n = g.out_w(), k = g.kernel;
    for (int n = 0; n < g.batch; ++n)
        for (int oc = 0; oc < g.out_c; ++oc)
            for (int oh = 0; oh < oh_n; ++oh)
                for (int ow = 0; ow < ow_n; ++ow) {
                    double acc = b[oc];
                    for (int ic = 0; ic < g.in_c; ++ic)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                const int ih = oh * g.stride - g.pad + kh;
                                const int iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                                acc += w[idx4(oc, ic, kh, kw, g.in_c, k, k)] *
                                       x[idx4(n, ic, ih, iw, g.in_c, g.in_h, g.in_w)];
                            }
                    y[idx4(n, oc, oh, ow, g.out_c, oh_n, ow_n)] = acc;
                }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
    const int oh_n = g.out_h(), ow_n = g.out_w(), k = g.kernel;
    for (int n = 0; n < g.batch; ++n)
        for (int ic = 0; ic < g.in_c; ++ic)
            for (int ih = 0; ih < g.in_h; ++ih)
                for (int iw = 0; iw < g.in_w; ++iw) {
                    double acc = 0.0;
                    for (int oc = 0; oc < g.out_c; ++oc)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                const int th = ih + g.pad - kh;
                                const int tw = iw + g.pad - kw;
                                if (th < 0 || tw < 0 || th % g.stride || tw % g.stride) continue;
                                const int oh = th / g.stride, ow = tw / g.stride;
                                if (oh >= oh_n || ow >= ow_n) continue;
                                acc += w[idx4(oc, ic, kh, kw, g.in_c, k, k)] *
                                       dy[idx4(n, oc, oh, ow, g.out_c, oh_n, ow_n)];
                            }
                    dx[idx4(n, ic, ih, iw, g.in_c, g.in_h, g.in_w)] = acc;
                }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> db) {
    const int oh_n = g.out_h(), ow_n = g.out_w(), k = g.kernel;
    for (int oc = 0; oc < g.out_c; ++oc) {
        double bacc = 0.0;
        for (int n = 0; n < g.batch; ++n)
            for (int oh = 0; oh < oh_n; ++oh)
                for (int ow = 0; ow < ow_n; ++ow) bacc += dy[idx4(n, oc, oh, ow, g.out_c, oh_n, ow_n)];
        db[oc] += bacc;
        for (int ic = 0; ic < g.in_c; ++ic)
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                    double acc = 0.0;
                    for (int n = 0; n < g.batch; ++n)
                        for (int oh = 0; oh < oh_n; ++oh)
                            for (int ow = 0; ow < ow_n; ++ow) {
                                const int ih = oh * g.stride - g.pad + kh;
                                const int iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                                acc += dy[idx4(n, oc, oh, ow, g.out_c, oh_n, ow_n)] *
                                       x[idx4(n, ic, ih, iw, g.in_c, g.in_h, g.in_w)];
                            }
                    dw[idx4(oc, ic, kh, kw, g.in_c, k, k)] += acc;
                }
    }
}

void dense_forward(int batch, int in, int out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y) {
    for (int n = 0; n < batch; ++n)
        for (int o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int i = 0; i < in; ++i) {
                acc += w[static_cast<std::size_t>(o) * in + i] * x[static_cast<std::size_t>(n) * in + i];
            }
            y[static_cast<std::size_t>(n) * out + o] = acc + b[o];
        }
}

void dense_backward_input(int batch, int in, int out, std::span<const double> dy,
                          std::span<const double> w, std::span<double> dx) {
    for (int n = 0; n < batch; ++n)
        for (int i = 0; i < in; ++i) {
            double acc = 0.0;
            for (int o = 0; o < out; ++o) {
                acc += dy[static_cast<std::size_t>(n) * out + o] * w[static_cast<std::size_t>(o) * in + i];
            }
            dx[static_cast<std::size_t>(n) * in + i] = acc;
        }
}

void dense_backward_params(int batch, int in, int out, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dw,
                           std::span<double> db) {
    for (int o = 0; o < out; ++o) {
        double bacc = 0.0;
        for (int n = 0; n < batch; ++n) bacc += dy[static_cast<std::size_t>(n) * out + o];
        db[o] += bacc;
        for (int i = 0; i < in; ++i) {
            double acc = 0.0;
            for (int n = 0; n < batch; ++n) {
                acc += dy[static_cast<std::size_t>(n) * out + o] * x[static_cast<std::size_t>(n) * in + i];
            }
            dw[static_cast<std::size_t>(o) * in + i] += acc;
        }
    }
}

}  // namespace nf::kernels::reference
