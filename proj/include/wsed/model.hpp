#ifndef WSED_MODEL_HPP
#define WSED_MODEL_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wsed/features.hpp"
#include "wsed/graph.hpp"

namespace wsed {

/// Architecture widths. The defaults are the production configuration:
/// three 3x3 conv blocks with frequency pooling 5/4/2 (40 -> 8 -> 2 -> 1),
/// two bidirectional GRU layers and two time-distributed dense layers.
/// Tests shrink the widths; the topology is fixed.
struct ModelConfig {
    Index n_mels = 40;
    Index conv_maps = 64;
    std::array<Index, 3> pools{5, 4, 2};
    Index gru_units = 64; // per direction
    Index dense_units = 64;
    double bn_eps = 1e-3;
    double bn_momentum = 0.99;

    void validate() const;
};

struct ConvBlock {
    Tensor kernel; // [3, 3, Cin, Cout]
    Tensor gamma, beta;
    Tensor running_mean, running_var;
};

struct GruDir {
    Tensor w; // [In, 3H], gates update|reset|candidate
    Tensor u; // [H, 3H]
    Tensor b; // [3H]
};

struct GruLayer {
    GruDir fwd, bwd;
};

/// All trainable weights and batch-norm state of the network.
struct ModelParams {
    ModelConfig config;
    std::uint64_t init_seed = 0;
    std::array<ConvBlock, 3> conv;
    GruLayer gru1, gru2;
    Tensor dense1_w, dense1_b;
    Tensor dense2_w, dense2_b;

    /// Visits trainable tensors in a fixed order (gradient/optimizer order).
    template <typename F>
    void for_each_trainable(F&& f) {
        for (std::size_t i = 0; i < 3; ++i) {
            const std::string p = "conv" + std::to_string(i + 1) + ".";
            f(p + "kernel", conv[i].kernel);
            f(p + "gamma", conv[i].gamma);
            f(p + "beta", conv[i].beta);
        }
        auto gru = [&](const std::string& p, GruLayer& l) {
            f(p + ".fwd.w", l.fwd.w);
            f(p + ".fwd.u", l.fwd.u);
            f(p + ".fwd.b", l.fwd.b);
            f(p + ".bwd.w", l.bwd.w);
            f(p + ".bwd.u", l.bwd.u);
            f(p + ".bwd.b", l.bwd.b);
        };
        gru("gru1", gru1);
        gru("gru2", gru2);
        f("dense1.w", dense1_w);
        f("dense1.b", dense1_b);
        f("dense2.w", dense2_w);
        f("dense2.b", dense2_b);
    }

    /// Visits everything a checkpoint must carry: trainables plus batch-norm
    /// running statistics.
    template <typename F>
    void for_each_state(F&& f) {
        for_each_trainable(f);
        for (std::size_t i = 0; i < 3; ++i) {
            const std::string p = "conv" + std::to_string(i + 1) + ".";
            f(p + "running_mean", conv[i].running_mean);
            f(p + "running_var", conv[i].running_var);
        }
    }
};

/// Per-frame sigmoid outputs for one bag.
struct FramePredictions {
    Eigen::VectorXd o;
    std::string bag_id;
};

/// Deterministic Glorot-uniform initialization (zeros for biases, unit
/// scale / zero shift for batch norm).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// One forward pass over a batch of bags.
struct CrnnForward {
    std::vector<NodeId> predictions; // rank-1 [T_b] per bag, in batch order
    std::vector<std::pair<std::string, NodeId>> params; // trainable order
};

/// Builds the network graph for a batch. In train mode batch-norm uses batch
/// statistics and updates the running buffers in `params`; in infer mode the
/// stored running statistics are used and nothing is mutated.
CrnnForward crnn_forward(Graph& g, ModelParams& params,
                         const std::vector<const FeatureMatrix*>& bags, Mode mode);

/// Convenience single-recording inference.
FramePredictions predict_frames(ModelParams& params, const FeatureMatrix& features);

/// Frame label is 1 iff o >= tau. tau must lie in (0, 1).
Eigen::VectorXi threshold(const FramePredictions& preds, double tau);

} // namespace wsed

#endif
