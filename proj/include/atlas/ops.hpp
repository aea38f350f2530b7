#pragma once

#include <utility>
#include <vector>

#include "atlas/tensor.hpp"

namespace atlas::nn {

// ---- elementwise ----
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
/// out[i] = mul[i] * x[i] + add[i] with constant (non-learned) coefficients
Tensor affine_const(const Tensor& x, std::vector<double> mul, std::vector<double> add);
Tensor sum(const Tensor& x);
/// copying reshape; element count must match
Tensor reshape(const Tensor& x, std::vector<int> shape);

// ---- linear algebra ----
/// x: [n, in], w: [out, in], b: [out] -> [n, out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// a: [n, p], b: [n, q] -> [n, p + q]
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// out[r] = x[index[r]]; repeated indices accumulate gradient
Tensor gather_rows(const Tensor& x, const std::vector<int>& index);
/// grid: [C, H, W], cells: flat y * W + x indices -> [m, C]
Tensor gather_cells(const Tensor& grid, const std::vector<int>& cells);
/// [C, H, W] -> [H, W, C]
Tensor chw_to_hwc(const Tensor& x);
/// top-left corner crop of a [C, H, W] tensor
Tensor crop2d(const Tensor& x, int new_h, int new_w);
/// x_i^T W x_j for each ordered pair; x: [n, d], w: [d, d] -> [m]
Tensor bilinear_pairs(const Tensor& x, const Tensor& w,
                      const std::vector<std::pair<int, int>>& pairs);

// ---- convolution ----
/// x: [C_in, H, W], w: [C_out, C_in, k, k] (k odd), b: [C_out]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// ---- normalization ----
enum class BnMode { train, eval };

struct BnState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    static BnState make(int channels) {
        return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
    }
};

/// x: [N, C]. Train mode normalizes by batch statistics and updates the
/// running estimates; eval mode normalizes by the running estimates. A
/// train-mode batch of fewer than 2 rows degenerates to the affine map
/// gamma * x + beta and leaves the running stats untouched.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnState& state,
                 BnMode mode, double eps = 1e-5, double momentum = 0.1);

// ---- reductions over segments ----
/// x: [m, d]; seg_offsets: n + 1 ascending row offsets covering [0, m].
/// out[s] = componentwise max over rows [seg_offsets[s], seg_offsets[s+1]).
/// Gradient is routed to the first maximizing row. Empty segments throw.
Tensor max_reduce_segments(const Tensor& x, const std::vector<int>& seg_offsets);

// ---- losses ----
/// mean of -[y log p + (1 - y) log(1 - p)] with p clamped to
/// [clamp_eps, 1 - clamp_eps]; y is a constant target
Tensor bce_loss(const Tensor& p, const Tensor& y, double clamp_eps = 1e-7);
/// pred, target: [H, W, 2]; mask: [H, W]. Squared error summed over the two
/// components per cell, averaged over masked cells; 0 when the mask is empty.
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask);

}  // namespace atlas::nn
