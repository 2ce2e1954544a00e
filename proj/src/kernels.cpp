#include "evoqa/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

namespace evoqa::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

inline double a_at(const double* a, bool trans, int m, int k, int i, int p) {
    return trans ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
}

int same_pad(int size, int kernel, int stride) {
    int out = (size + stride - 1) / stride;
    int total = std::max((out - 1) * stride + kernel - size, 0);
    return total / 2;
}

// Column matrix (C*KH*KW) x (OH*OW) for one image.
void im2col(const ConvGeometry& g, const double* x, double* col) {
    const int oh = g.out_height(), ow = g.out_width();
    const int pt = g.pad_top(), pl = g.pad_left();
    std::size_t row = 0;
    for (int c = 0; c < g.in_channels; ++c) {
        const double* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ki = 0; ki < g.kernel_h; ++ki) {
            for (int kj = 0; kj < g.kernel_w; ++kj, ++row) {
                double* dst = col + row * oh * ow;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * g.stride + ki - pt;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * g.stride + kj - pl;
                        dst[oi * ow + oj] =
                            (ii >= 0 && ii < g.height && jj >= 0 && jj < g.width) ? plane[ii * g.width + jj] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
    const int oh = g.out_height(), ow = g.out_width();
    const int pt = g.pad_top(), pl = g.pad_left();
    std::size_t row = 0;
    for (int c = 0; c < g.in_channels; ++c) {
        double* plane = dx + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ki = 0; ki < g.kernel_h; ++ki) {
            for (int kj = 0; kj < g.kernel_w; ++kj, ++row) {
                const double* src = col + row * oh * ow;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * g.stride + ki - pt;
                    if (ii < 0 || ii >= g.height) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * g.stride + kj - pl;
                        if (jj >= 0 && jj < g.width) plane[ii * g.width + jj] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

}  // namespace

int ConvGeometry::pad_top() const { return same_pad(height, kernel_h, stride); }
int ConvGeometry::pad_left() const { return same_pad(width, kernel_w, stride); }

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    const long work = static_cast<long>(m) * n * k;
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        if (!trans_b) {
            for (int p = 0; p < k; ++p) {
                const double av = a_at(a, trans_a, m, k, i, p);
                if (av == 0.0) continue;
                const double* brow = b + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        } else {
            for (int j = 0; j < n; ++j) {
                const double* brow = b + static_cast<std::size_t>(j) * k;
                double sum = 0.0;
                if (!trans_a) {
                    const double* arow = a + static_cast<std::size_t>(i) * k;
                    // Four partial sums let the compiler vectorize the reduction.
                    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                    int p = 0;
                    for (; p + 4 <= k; p += 4) {
                        s0 += arow[p] * brow[p];
                        s1 += arow[p + 1] * brow[p + 1];
                        s2 += arow[p + 2] * brow[p + 2];
                        s3 += arow[p + 3] * brow[p + 3];
                    }
                    for (; p < k; ++p) s0 += arow[p] * brow[p];
                    sum = (s0 + s1) + (s2 + s3);
                } else {
                    for (int p = 0; p < k; ++p) sum += a[static_cast<std::size_t>(p) * m + i] * brow[p];
                }
                crow[j] += sum;
            }
        }
    }
}

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, double* out) {
    const int rows = g.in_channels * g.kernel_h * g.kernel_w;
    const int positions = g.out_height() * g.out_width();
    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.height * g.width;
    const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * positions;
#pragma omp parallel if (g.batch > 1)
    {
        std::vector<double> col(static_cast<std::size_t>(rows) * positions);
#pragma omp for schedule(static)
        for (int b = 0; b < g.batch; ++b) {
            im2col(g, x + b * in_stride, col.data());
            gemm(false, false, g.out_channels, positions, rows, w, col.data(), out + b * out_stride, false);
        }
    }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx, double* dw) {
    const int rows = g.in_channels * g.kernel_h * g.kernel_w;
    const int positions = g.out_height() * g.out_width();
    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.height * g.width;
    const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * positions;
    const std::size_t w_size = static_cast<std::size_t>(g.out_channels) * rows;
#pragma omp parallel if (g.batch > 1)
    {
        std::vector<double> col(static_cast<std::size_t>(rows) * positions);
        std::vector<double> dcol(col.size());
        std::vector<double> dw_local(w_size, 0.0);
#pragma omp for schedule(static)
        for (int b = 0; b < g.batch; ++b) {
            if (dw) {
                im2col(g, x + b * in_stride, col.data());
                gemm(false, true, g.out_channels, rows, positions, dout + b * out_stride, col.data(), dw_local.data(), true);
            }
            if (dx) {
                gemm(true, false, rows, positions, g.out_channels, w, dout + b * out_stride, dcol.data(), false);
                col2im_add(g, dcol.data(), dx + b * in_stride);
            }
        }
        if (dw) {
#pragma omp critical
            for (std::size_t i = 0; i < w_size; ++i) dw[i] += dw_local[i];
        }
    }
}

namespace serial {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double sum = 0.0;
            for (int p = 0; p < k; ++p) {
                double bv = trans_b ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
                sum += a_at(a, trans_a, m, k, i, p) * bv;
            }
            double& dst = c[static_cast<std::size_t>(i) * n + j];
            dst = accumulate ? dst + sum : sum;
        }
    }
}

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, double* out) {
    const int oh = g.out_height(), ow = g.out_width();
    const int pt = g.pad_top(), pl = g.pad_left();
    for (int b = 0; b < g.batch; ++b)
        for (int o = 0; o < g.out_channels; ++o)
            for (int oi = 0; oi < oh; ++oi)
                for (int oj = 0; oj < ow; ++oj) {
                    double sum = 0.0;
                    for (int c = 0; c < g.in_channels; ++c)
                        for (int ki = 0; ki < g.kernel_h; ++ki)
                            for (int kj = 0; kj < g.kernel_w; ++kj) {
                                int ii = oi * g.stride + ki - pt, jj = oj * g.stride + kj - pl;
                                if (ii < 0 || ii >= g.height || jj < 0 || jj >= g.width) continue;
                                sum += x[((static_cast<std::size_t>(b) * g.in_channels + c) * g.height + ii) * g.width + jj] *
                                       w[((static_cast<std::size_t>(o) * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                            }
                    out[((static_cast<std::size_t>(b) * g.out_channels + o) * oh + oi) * ow + oj] = sum;
                }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx, double* dw) {
    const int oh = g.out_height(), ow = g.out_width();
    const int pt = g.pad_top(), pl = g.pad_left();
    for (int b = 0; b < g.batch; ++b)
        for (int o = 0; o < g.out_channels; ++o)
            for (int oi = 0; oi < oh; ++oi)
                for (int oj = 0; oj < ow; ++oj) {
                    const double d = dout[((static_cast<std::size_t>(b) * g.out_channels + o) * oh + oi) * ow + oj];
                    for (int c = 0; c < g.in_channels; ++c)
                        for (int ki = 0; ki < g.kernel_h; ++ki)
                            for (int kj = 0; kj < g.kernel_w; ++kj) {
                                int ii = oi * g.stride + ki - pt, jj = oj * g.stride + kj - pl;
                                if (ii < 0 || ii >= g.height || jj < 0 || jj >= g.width) continue;
                                std::size_t xi = ((static_cast<std::size_t>(b) * g.in_channels + c) * g.height + ii) * g.width + jj;
                                std::size_t wi = ((static_cast<std::size_t>(o) * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                                if (dx) dx[xi] += d * w[wi];
                                if (dw) dw[wi] += d * x[xi];
                            }
                }
}

}  // namespace serial

}  // namespace evoqa::kernels
