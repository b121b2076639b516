#include "stcal/kernels.hpp"

#include <algorithm>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stcal::kernels {

namespace {
int g_max_threads = 1;

// valid out indices o with 0 <= o*stride - pad + k < limit
inline void span(int64_t k, int64_t pad, int64_t stride, int64_t limit, int64_t out_limit,
                 int64_t* lo, int64_t* hi) {
    const int64_t base = pad - k;
    int64_t l = base <= 0 ? 0 : (base + stride - 1) / stride;
    const int64_t upper = limit + pad - k;  // o*stride < upper
    int64_t h = upper <= 0 ? 0 : (upper + stride - 1) / stride;
    *lo = std::max<int64_t>(0, l);
    *hi = std::min(out_limit, h);
}

// Per-output-element routines shared by the serial reference and the OpenMP
// wrappers, so the two always accumulate in the same order.

inline void matmul_row(const double* a, const double* b, double* crow, int64_t i, int64_t m,
                       int64_t k, int64_t n, bool transpose_a, bool transpose_b) {
    (void)m;
    if (transpose_b) {
        // rows of both operands are contiguous: plain dot products
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            if (transpose_a) {
                for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
            } else {
                const double* arow = a + i * k;
                for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            }
            crow[j] = acc;
        }
        return;
    }
    std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
    for (int64_t p = 0; p < k; ++p) {
        const double av = transpose_a ? a[p * m + i] : a[i * k + p];
        const double* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void conv_forward_map(const double* x, const double* w, double* ymap, int64_t b, int64_t co,
                             const Conv2dDims& d) {
    std::memset(ymap, 0, sizeof(double) * static_cast<size_t>(d.out_h * d.out_w));
    for (int64_t ci = 0; ci < d.in_channels; ++ci) {
        const double* xmap = x + (b * d.in_channels + ci) * d.in_h * d.in_w;
        const double* wmap = w + (co * d.in_channels + ci) * d.kernel_h * d.kernel_w;
        for (int64_t kh = 0; kh < d.kernel_h; ++kh) {
            int64_t oh_lo, oh_hi;
            span(kh, d.padding, d.stride, d.in_h, d.out_h, &oh_lo, &oh_hi);
            for (int64_t kw = 0; kw < d.kernel_w; ++kw) {
                const double wv = wmap[kh * d.kernel_w + kw];
                int64_t ow_lo, ow_hi;
                span(kw, d.padding, d.stride, d.in_w, d.out_w, &ow_lo, &ow_hi);
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const int64_t ih = oh * d.stride - d.padding + kh;
                    const double* xrow = xmap + ih * d.in_w - d.padding + kw;
                    double* yrow = ymap + oh * d.out_w;
                    if (d.stride == 1) {
                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wv * xrow[ow];
                    } else {
                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                            yrow[ow] += wv * xrow[ow * d.stride];
                    }
                }
            }
        }
    }
}

inline void conv_backward_input_map(const double* dy, const double* w, double* dxmap, int64_t b,
                                    int64_t ci, const Conv2dDims& d) {
    std::memset(dxmap, 0, sizeof(double) * static_cast<size_t>(d.in_h * d.in_w));
    for (int64_t co = 0; co < d.out_channels; ++co) {
        const double* dymap = dy + (b * d.out_channels + co) * d.out_h * d.out_w;
        const double* wmap = w + (co * d.in_channels + ci) * d.kernel_h * d.kernel_w;
        for (int64_t kh = 0; kh < d.kernel_h; ++kh) {
            int64_t oh_lo, oh_hi;
            span(kh, d.padding, d.stride, d.in_h, d.out_h, &oh_lo, &oh_hi);
            for (int64_t kw = 0; kw < d.kernel_w; ++kw) {
                const double wv = wmap[kh * d.kernel_w + kw];
                int64_t ow_lo, ow_hi;
                span(kw, d.padding, d.stride, d.in_w, d.out_w, &ow_lo, &ow_hi);
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const int64_t ih = oh * d.stride - d.padding + kh;
                    const double* dyrow = dymap + oh * d.out_w;
                    double* dxrow = dxmap + ih * d.in_w - d.padding + kw;
                    if (d.stride == 1) {
                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow) dxrow[ow] += wv * dyrow[ow];
                    } else {
                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                            dxrow[ow * d.stride] += wv * dyrow[ow];
                    }
                }
            }
        }
    }
}

inline void conv_backward_weight_pair(const double* dy, const double* x, double* dwmap, int64_t co,
                                      int64_t ci, const Conv2dDims& d) {
    for (int64_t kh = 0; kh < d.kernel_h; ++kh) {
        int64_t oh_lo, oh_hi;
        span(kh, d.padding, d.stride, d.in_h, d.out_h, &oh_lo, &oh_hi);
        for (int64_t kw = 0; kw < d.kernel_w; ++kw) {
            int64_t ow_lo, ow_hi;
            span(kw, d.padding, d.stride, d.in_w, d.out_w, &ow_lo, &ow_hi);
            double acc = 0.0;
            for (int64_t b = 0; b < d.batch; ++b) {
                const double* dymap = dy + (b * d.out_channels + co) * d.out_h * d.out_w;
                const double* xmap = x + (b * d.in_channels + ci) * d.in_h * d.in_w;
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const int64_t ih = oh * d.stride - d.padding + kh;
                    const double* dyrow = dymap + oh * d.out_w;
                    const double* xrow = xmap + ih * d.in_w - d.padding + kw;
                    if (d.stride == 1) {
                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += dyrow[ow] * xrow[ow];
                    } else {
                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                            acc += dyrow[ow] * xrow[ow * d.stride];
                    }
                }
            }
            dwmap[kh * d.kernel_w + kw] = acc;
        }
    }
}

}  // namespace

int max_threads() { return g_max_threads; }

void set_max_threads(int n) { g_max_threads = std::max(1, n); }

// ---------------------------------------------------------------------------
// Serial reference kernels
// ---------------------------------------------------------------------------

namespace serial {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool transpose_a, bool transpose_b) {
    for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c + i * n, i, m, k, n, transpose_a, transpose_b);
}

void conv2d_forward(const double* x, const double* w, double* y, const Conv2dDims& d) {
    for (int64_t bc = 0; bc < d.batch * d.out_channels; ++bc)
        conv_forward_map(x, w, y + bc * d.out_h * d.out_w, bc / d.out_channels,
                         bc % d.out_channels, d);
}

void conv2d_backward_input(const double* dy, const double* w, double* dx, const Conv2dDims& d) {
    for (int64_t bc = 0; bc < d.batch * d.in_channels; ++bc)
        conv_backward_input_map(dy, w, dx + bc * d.in_h * d.in_w, bc / d.in_channels,
                                bc % d.in_channels, d);
}

void conv2d_backward_weight(const double* dy, const double* x, double* dw, const Conv2dDims& d) {
    for (int64_t cc = 0; cc < d.out_channels * d.in_channels; ++cc)
        conv_backward_weight_pair(dy, x, dw + cc * d.kernel_h * d.kernel_w, cc / d.in_channels,
                                  cc % d.in_channels, d);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Work splits by output element (row of C, (b, co) map of y,
// (co, ci) tile of dw); each element runs the same routine as the serial
// reference, so results are bit-identical at any thread count.
// ---------------------------------------------------------------------------

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool transpose_a, bool transpose_b) {
#ifdef _OPENMP
    if (g_max_threads > 1 && m > 1) {
#pragma omp parallel for num_threads(g_max_threads) schedule(static)
        for (int64_t i = 0; i < m; ++i)
            matmul_row(a, b, c + i * n, i, m, k, n, transpose_a, transpose_b);
        return;
    }
#endif
    serial::matmul(a, b, c, m, k, n, transpose_a, transpose_b);
}

void conv2d_forward(const double* x, const double* w, double* y, const Conv2dDims& d) {
#ifdef _OPENMP
    const int64_t maps = d.batch * d.out_channels;
    if (g_max_threads > 1 && maps > 1) {
#pragma omp parallel for num_threads(g_max_threads) schedule(static)
        for (int64_t bc = 0; bc < maps; ++bc)
            conv_forward_map(x, w, y + bc * d.out_h * d.out_w, bc / d.out_channels,
                             bc % d.out_channels, d);
        return;
    }
#endif
    serial::conv2d_forward(x, w, y, d);
}

void conv2d_backward_input(const double* dy, const double* w, double* dx, const Conv2dDims& d) {
#ifdef _OPENMP
    const int64_t maps = d.batch * d.in_channels;
    if (g_max_threads > 1 && maps > 1) {
#pragma omp parallel for num_threads(g_max_threads) schedule(static)
        for (int64_t bc = 0; bc < maps; ++bc)
            conv_backward_input_map(dy, w, dx + bc * d.in_h * d.in_w, bc / d.in_channels,
                                    bc % d.in_channels, d);
        return;
    }
#endif
    serial::conv2d_backward_input(dy, w, dx, d);
}

void conv2d_backward_weight(const double* dy, const double* x, double* dw, const Conv2dDims& d) {
#ifdef _OPENMP
    const int64_t pairs = d.out_channels * d.in_channels;
    if (g_max_threads > 1 && pairs > 1) {
#pragma omp parallel for num_threads(g_max_threads) schedule(static)
        for (int64_t cc = 0; cc < pairs; ++cc)
            conv_backward_weight_pair(dy, x, dw + cc * d.kernel_h * d.kernel_w, cc / d.in_channels,
                                      cc % d.in_channels, d);
        return;
    }
#endif
    serial::conv2d_backward_weight(dy, x, dw, d);
}

}  // namespace stcal::kernels
