#ifndef WSED_OPS_HPP
#define WSED_OPS_HPP

#include <vector>

#include "wsed/graph.hpp"

namespace wsed {

/// Sigmoid/BCE inputs are clamped to [kProbClamp, 1 - kProbClamp] inside the
/// cross-entropy so that loss values and gradients stay finite for targets
/// that are only attainable in the limit.
constexpr double kProbClamp = 1e-7;

// -- dense / elementwise ----------------------------------------------------

NodeId matmul(Graph& g, NodeId a, NodeId b);
NodeId add(Graph& g, NodeId a, NodeId b);
/// [R,C] plus a rank-1 [C] bias broadcast over rows.
NodeId add_row(Graph& g, NodeId m, NodeId bias);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId relu(Graph& g, NodeId x);
NodeId tanh_op(Graph& g, NodeId x);
NodeId sigmoid(Graph& g, NodeId x);
NodeId scale(Graph& g, NodeId x, double c);
NodeId sum_all(Graph& g, NodeId x);
NodeId reshape(Graph& g, NodeId x, std::vector<Index> shape);
/// Concatenate two rank-2 tensors along columns.
NodeId concat_last_axis(Graph& g, NodeId a, NodeId b);
NodeId slice_rows(Graph& g, NodeId x, Index begin, Index count);

// -- reductions over the time axis (rank-1 input, scalar output) -------------

/// Ties route the gradient to the lowest index.
NodeId reduce_max_time(Graph& g, NodeId x);
NodeId reduce_mean_time(Graph& g, NodeId x);
NodeId reduce_min_time(Graph& g, NodeId x);

// -- losses -------------------------------------------------------------------

/// Elementwise -(y ln p + (1-y) ln(1-p)) against a constant target, natural
/// log, p clamped to [kProbClamp, 1-kProbClamp]. Gradient is zero where the
/// clamp is active.
NodeId binary_cross_entropy(Graph& g, NodeId p, double target);
/// Elementwise 0.5 * (x - target)^2.
NodeId squared_error(Graph& g, NodeId x, double target);
/// Arithmetic mean of scalar nodes.
NodeId mean_stack(Graph& g, const std::vector<NodeId>& scalars);

// -- structured ops over [N, T, F, C] activations (channels last) ------------

/// 'Same' zero-padded 2-D convolution with an odd [KH, KW, Cin, Cout] kernel;
/// preserves T and F. Bags in the batch never bleed into each other.
NodeId conv2d_same(Graph& g, NodeId x, NodeId kernel);

/// Per-channel batch normalization over (batch x time x freq). In train mode
/// statistics are computed over the valid rows only (t < lengths[n]) and the
/// running buffers are updated in place; padded rows are forced to zero so a
/// following convolution sees clean zero padding. In infer mode the running
/// statistics are used. An empty `lengths` marks every row valid.
NodeId batch_norm(Graph& g, NodeId x, NodeId gamma, NodeId beta, Tensor* running_mean,
                  Tensor* running_var, const std::vector<Index>& lengths, Mode mode, double eps,
                  double momentum);

/// 1 x k max pooling along the frequency axis; T preserved, F -> F/k.
/// Ties route the gradient to the lowest frequency index.
NodeId max_pool_freq(Graph& g, NodeId x, Index k);

/// [N, T, 1, C] with per-bag valid lengths -> ragged [sum(lengths), C];
/// padded rows are dropped.
NodeId to_sequences(Graph& g, NodeId x, const std::vector<Index>& lengths);

/// Fused GRU over a ragged batch of sequences. x is [sum(L), In] with bag b
/// occupying rows [offset_b, offset_b + L_b); w is [In, 3H], u is [H, 3H]
/// and b is [3H] with gates ordered update|reset|candidate. The initial
/// hidden state is zero. With reverse=true the scan runs from the last frame
/// to the first; row t of the output always corresponds to input row t.
NodeId gru_sequence(Graph& g, NodeId x, NodeId w, NodeId u, NodeId b,
                    const std::vector<Index>& lengths, bool reverse);

} // namespace wsed

#endif
