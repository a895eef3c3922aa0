#pragma once

#include <cstddef>

#include "boxseg/tensor.hpp"

// Eager forward and vector-Jacobian kernels. Every kernel accepts rank-3
// (C,H,W) or rank-4 (N,C,H,W) inputs and returns the same rank it was given.
namespace boxseg::kernels {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// Cross-correlation (no kernel flip). Output spatial size is
// floor((H + 2*pad - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              ConvGeometry geo);

// Any of dx, dkernel, dbias may be null. Results are accumulated into the
// non-null targets, which must already have the matching dims.
void conv2d_backward(const Tensor& x, const Tensor& kernel, ConvGeometry geo,
                     const Tensor& dy, Tensor* dx, Tensor* dkernel,
                     Tensor* dbias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Exponentiate-normalize along the channel axis with max subtraction.
Tensor softmax_channels(const Tensor& x);
// log softmax along the channel axis.
Tensor log_softmax_channels(const Tensor& x);

// Hadamard product; b may carry a batch extent of 1 against a's N.
Tensor mul(const Tensor& a, const Tensor& b);

// out[y][x] = in[floor(y*H/H')][floor(x*W/W')]
Tensor resize_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w);
void resize_nearest_backward(const Tensor& dy, Tensor& dx);
// Bilinear with half-pixel centres; source coordinates clamp at the border.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
void resize_bilinear_backward(const Tensor& dy, Tensor& dx);

Tensor concat_channels(const Tensor& a, const Tensor& b);
// Channels [begin, end) of x.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);

double sum(const Tensor& x);

}  // namespace boxseg::kernels
