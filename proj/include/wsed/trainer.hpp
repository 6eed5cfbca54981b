#ifndef WSED_TRAINER_HPP
#define WSED_TRAINER_HPP

#include <filesystem>
#include <functional>
#include <optional>

#include "wsed/data.hpp"
#include "wsed/eval.hpp"
#include "wsed/losses.hpp"
#include "wsed/model.hpp"

namespace wsed {

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second-moment accumulators per trainable tensor, in visitor order.
struct AdamState {
    std::vector<Tensor> m, v;
    long t = 0;

    static AdamState init(ModelParams& params);
};

/// One Adam update. `grads` must be in trainable visitor order; empty
/// tensors are treated as zero gradients. The step counter is incremented
/// first, so the first call applies full bias correction.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamParams& adam);

struct TrainConfig {
    LossKind loss = LossKind::kMmm;
    long epochs = 300;
    Index batch_size = 32;
    AdamParams adam;
    std::uint64_t seed = 0;
    long checkpoint_interval = 0; // 0: only the final checkpoint
    long eval_interval = 1;       // epochs between validation passes (0: never)
    double threshold = 0.5;
    HnhAnchor anchor = HnhAnchor::kMajority;
};

/// Bags with strong frame truth used for the per-epoch F1 hook.
struct ValidationSet {
    std::vector<Bag> bags;
    std::vector<LabelledFrames> truth; // aligned with bags
};

struct EpochMetrics {
    long epoch = 0;
    double train_loss = 0.0;
    std::optional<EvalReport> val;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    std::filesystem::path final_checkpoint;
    std::filesystem::path best_checkpoint; // empty when never evaluated
    double best_f1 = -1.0;
    long best_epoch = 0;
};

/// Mini-batch training loop: half-and-half batches, forward, the selected
/// bag loss averaged over the batch, backward, one Adam step per batch.
/// Writes `metrics.csv` and checkpoints under `out_dir`. Training always
/// runs the full epoch count; the best-validation checkpoint is tracked on
/// the side and never alters the trajectory. A non-finite batch loss aborts
/// with a TrainError naming the epoch and batch.
TrainResult train(ModelParams& params, const std::vector<Bag>& train_bags,
                  const std::optional<ValidationSet>& validation, const TrainConfig& config,
                  const std::filesystem::path& out_dir,
                  const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

} // namespace wsed

#endif
