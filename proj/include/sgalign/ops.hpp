#pragma once

#include <cstdint>
#include <vector>

#include "sgalign/tensor.hpp"

namespace sgalign::ops {

// All operations run on the active tape (Tape::current()) when any input
// tracks gradients; otherwise they are plain value computations.

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [r,c] -> [c,r]
Tensor transpose(const Tensor& a);

// elementwise, shapes must match
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// x[..., c] + bias[c], broadcast over leading axes
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
// exact erf-based GELU
Tensor gelu(const Tensor& x);

// Softmax over the last axis with a shared keep-mask (true = keep).
// Masked positions get exactly 0 probability; the max-subtraction runs over
// unmasked entries only. Throws NumericError when everything is masked.
Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint8_t>& keep);

// Per-last-axis normalization followed by the affine (gain, bias).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Numerically stable log-softmax over the last axis of a 2D tensor.
Tensor log_softmax_rows(const Tensor& x);

// [B,B] -> [B]
Tensor take_diagonal(const Tensor& square);

// sum of all entries -> scalar [1]
Tensor sum_all(const Tensor& x);

// out[i,:] = x[indices[i],:]; backward scatter-adds into x rows
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);

// vertical concatenation of 2D tensors with equal column counts
Tensor concat_rows(const std::vector<Tensor>& parts);

// column range [c0, c1) of a 2D tensor
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);

// horizontal concatenation of 2D tensors with equal row counts
Tensor concat_cols(const std::vector<Tensor>& parts);

// same data, new shape (numel preserved)
Tensor reshape(const Tensor& x, Shape shape);

// Rows scaled to unit L2 norm. Throws NumericError on rows with norm <= 1e-12.
Tensor l2_normalize_rows(const Tensor& x);

// input [H,W,Cin], weight [kh,kw,Cin,Cout], bias [Cout]; no padding,
// (H-kh) and (W-kw) must be divisible by stride.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride);

} // namespace sgalign::ops
