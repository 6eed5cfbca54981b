#ifndef WSED_LOSSES_HPP
#define WSED_LOSSES_HPP

#include <string>
#include <utility>
#include <vector>

#include "wsed/graph.hpp"
#include "wsed/model.hpp"

namespace wsed {

/// Bag-level loss family. All variants map the frame predictions of one bag
/// plus its weak recording label to a scalar:
///   fsl       mean over frames of BCE(o_j, Y)  (weak label copied to every frame)
///   max_se    0.5 * (max_j o_j - Y)^2
///   max_bce   BCE(max_j o_j, Y)
///   max_mean  mean of BCE(max, Y) and BCE(mean, Y/2)
///   max_min   mean of BCE(max, Y) and BCE(min, 0)
///   mmm       mean of BCE(max, Y), BCE(mean, Y/2) and BCE(min, 0)
/// BCE uses the natural log with inputs clamped to [1e-7, 1 - 1e-7].
enum class LossKind { kFsl, kMaxSe, kMaxBce, kMaxMean, kMaxMin, kMmm };

LossKind loss_kind_from_string(const std::string& s);
std::string loss_kind_name(LossKind kind);

/// Scalar loss plus its named sub-terms (for multi-term kinds the value is
/// the arithmetic mean of the terms).
struct BagLoss {
    LossKind kind;
    double value = 0.0;
    std::vector<std::pair<std::string, double>> terms;
};

/// Clamped binary cross-entropy between a prediction and a target in [0,1].
double bce(double p, double y);

BagLoss fsl_loss(const FramePredictions& preds, int label);
BagLoss max_se_loss(const FramePredictions& preds, int label);
BagLoss max_bce_loss(const FramePredictions& preds, int label);
BagLoss max_mean_loss(const FramePredictions& preds, int label);
BagLoss max_min_loss(const FramePredictions& preds, int label);
BagLoss mmm_loss(const FramePredictions& preds, int label);
BagLoss bag_loss(LossKind kind, const FramePredictions& preds, int label);

/// Mean of per-bag losses over a batch.
double batch_loss(LossKind kind, const std::vector<std::pair<FramePredictions, int>>& bags);

/// Differentiable versions: build the loss sub-graph on top of a rank-1
/// prediction node. Values match the plain functions exactly.
NodeId bag_loss_node(Graph& g, LossKind kind, NodeId pred, int label);
NodeId batch_loss_node(Graph& g, LossKind kind, const std::vector<NodeId>& preds,
                       const std::vector<int>& labels);

} // namespace wsed

#endif
