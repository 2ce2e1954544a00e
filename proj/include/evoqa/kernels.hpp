#pragma once

// Dense compute kernels on raw row-major buffers. The top-level functions
// are OpenMP-parallel; kernels::serial holds plain reference loops used to
// test them.

namespace evoqa::kernels {

/// C(m x n) = op(A) * op(B), or C += ... when accumulate is set. A is stored
/// m x k (k x m when trans_a), B is k x n (n x k when trans_b).
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);

struct ConvGeometry {
    int batch, in_channels, height, width;
    int out_channels, kernel_h, kernel_w, stride;

    int out_height() const { return (height + stride - 1) / stride; }
    int out_width() const { return (width + stride - 1) / stride; }
    // Same padding: the output covers ceil(size / stride) positions and the
    // extra padding goes to the bottom/right when it is odd.
    int pad_top() const;
    int pad_left() const;
};

/// x: (B, C, H, W), w: (O, C, KH, KW), out: (B, O, ceil(H/s), ceil(W/s)).
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, double* out);
/// Accumulates into dx and dw; either may be null to skip that gradient.
void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx, double* dw);

namespace serial {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, double* out);
void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx, double* dw);

}  // namespace serial

}  // namespace evoqa::kernels
