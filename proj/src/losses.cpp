#include "wsed/losses.hpp"

#include <algorithm>
#include <cmath>

#include "wsed/ops.hpp"

namespace wsed {

namespace {

void check_bag(const FramePredictions& preds, int label) {
    if (preds.o.size() == 0)
        throw ContractError("bag loss: empty bag '" + preds.bag_id + "'");
    if (label != 0 && label != 1) throw ContractError("bag loss: weak label must be 0 or 1");
}

BagLoss from_terms(LossKind kind, std::vector<std::pair<std::string, double>> terms) {
    BagLoss l;
    l.kind = kind;
    l.terms = std::move(terms);
    for (const auto& [name, v] : l.terms) l.value += v;
    l.value /= static_cast<double>(l.terms.size());
    return l;
}

} // namespace

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "fsl") return LossKind::kFsl;
    if (s == "max_se") return LossKind::kMaxSe;
    if (s == "max_bce") return LossKind::kMaxBce;
    if (s == "max_mean") return LossKind::kMaxMean;
    if (s == "max_min") return LossKind::kMaxMin;
    if (s == "mmm") return LossKind::kMmm;
    throw ConfigError("unknown loss kind '" + s +
                      "' (expected fsl|max_se|max_bce|max_mean|max_min|mmm)");
}

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
    case LossKind::kFsl: return "fsl";
    case LossKind::kMaxSe: return "max_se";
    case LossKind::kMaxBce: return "max_bce";
    case LossKind::kMaxMean: return "max_mean";
    case LossKind::kMaxMin: return "max_min";
    case LossKind::kMmm: return "mmm";
    }
    throw ContractError("invalid loss kind");
}

double bce(double p, double y) {
    const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

BagLoss fsl_loss(const FramePredictions& preds, int label) {
    check_bag(preds, label);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < preds.o.size(); ++i) acc += bce(preds.o[i], label);
    BagLoss l;
    l.kind = LossKind::kFsl;
    l.value = acc / static_cast<double>(preds.o.size());
    l.terms = {{"frame_bce_mean", l.value}};
    return l;
}

BagLoss max_se_loss(const FramePredictions& preds, int label) {
    check_bag(preds, label);
    const double mx = preds.o.maxCoeff();
    BagLoss l;
    l.kind = LossKind::kMaxSe;
    l.value = 0.5 * (mx - label) * (mx - label);
    l.terms = {{"max_se", l.value}};
    return l;
}

BagLoss max_bce_loss(const FramePredictions& preds, int label) {
    check_bag(preds, label);
    BagLoss l;
    l.kind = LossKind::kMaxBce;
    l.value = bce(preds.o.maxCoeff(), label);
    l.terms = {{"max", l.value}};
    return l;
}

BagLoss max_mean_loss(const FramePredictions& preds, int label) {
    check_bag(preds, label);
    return from_terms(LossKind::kMaxMean, {{"max", bce(preds.o.maxCoeff(), label)},
                                           {"mean", bce(preds.o.mean(), label / 2.0)}});
}

BagLoss max_min_loss(const FramePredictions& preds, int label) {
    check_bag(preds, label);
    return from_terms(LossKind::kMaxMin, {{"max", bce(preds.o.maxCoeff(), label)},
                                          {"min", bce(preds.o.minCoeff(), 0.0)}});
}

BagLoss mmm_loss(const FramePredictions& preds, int label) {
    check_bag(preds, label);
    return from_terms(LossKind::kMmm, {{"max", bce(preds.o.maxCoeff(), label)},
                                       {"mean", bce(preds.o.mean(), label / 2.0)},
                                       {"min", bce(preds.o.minCoeff(), 0.0)}});
}

BagLoss bag_loss(LossKind kind, const FramePredictions& preds, int label) {
    switch (kind) {
    case LossKind::kFsl: return fsl_loss(preds, label);
    case LossKind::kMaxSe: return max_se_loss(preds, label);
    case LossKind::kMaxBce: return max_bce_loss(preds, label);
    case LossKind::kMaxMean: return max_mean_loss(preds, label);
    case LossKind::kMaxMin: return max_min_loss(preds, label);
    case LossKind::kMmm: return mmm_loss(preds, label);
    }
    throw ContractError("invalid loss kind");
}

double batch_loss(LossKind kind, const std::vector<std::pair<FramePredictions, int>>& bags) {
    if (bags.empty()) throw ContractError("batch_loss: empty batch");
    double acc = 0.0;
    for (const auto& [preds, label] : bags) acc += bag_loss(kind, preds, label).value;
    return acc / static_cast<double>(bags.size());
}

NodeId bag_loss_node(Graph& g, LossKind kind, NodeId pred, int label) {
    const Tensor& pv = g.value(pred);
    if (pv.rank() != 1) throw ShapeError("bag_loss_node: expected rank-1 predictions, got " + pv.shape_str());
    if (pv.dim(0) < 1) throw ContractError("bag_loss_node: empty bag");
    if (label != 0 && label != 1) throw ContractError("bag_loss_node: weak label must be 0 or 1");
    const double y = label;
    switch (kind) {
    case LossKind::kFsl:
        return reduce_mean_time(g, binary_cross_entropy(g, pred, y));
    case LossKind::kMaxSe:
        return squared_error(g, reduce_max_time(g, pred), y);
    case LossKind::kMaxBce:
        return binary_cross_entropy(g, reduce_max_time(g, pred), y);
    case LossKind::kMaxMean:
        return mean_stack(g, {binary_cross_entropy(g, reduce_max_time(g, pred), y),
                              binary_cross_entropy(g, reduce_mean_time(g, pred), y / 2.0)});
    case LossKind::kMaxMin:
        return mean_stack(g, {binary_cross_entropy(g, reduce_max_time(g, pred), y),
                              binary_cross_entropy(g, reduce_min_time(g, pred), 0.0)});
    case LossKind::kMmm:
        return mean_stack(g, {binary_cross_entropy(g, reduce_max_time(g, pred), y),
                              binary_cross_entropy(g, reduce_mean_time(g, pred), y / 2.0),
                              binary_cross_entropy(g, reduce_min_time(g, pred), 0.0)});
    }
    throw ContractError("invalid loss kind");
}

NodeId batch_loss_node(Graph& g, LossKind kind, const std::vector<NodeId>& preds,
                       const std::vector<int>& labels) {
    if (preds.empty()) throw ContractError("batch_loss_node: empty batch");
    if (preds.size() != labels.size())
        throw ContractError("batch_loss_node: prediction/label count mismatch");
    std::vector<NodeId> per_bag;
    per_bag.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
        per_bag.push_back(bag_loss_node(g, kind, preds[i], labels[i]));
    return mean_stack(g, per_bag);
}

} // namespace wsed
