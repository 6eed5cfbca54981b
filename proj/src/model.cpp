#include "wsed/model.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

#include "wsed/ops.hpp"
#include "wsed/rng.hpp"

namespace wsed {

void ModelConfig::validate() const {
    if (n_mels < 1 || conv_maps < 1 || gru_units < 1 || dense_units < 1)
        throw ConfigError("model widths must be positive");
    Index f = n_mels;
    for (Index p : pools) {
        if (p < 1 || f % p != 0)
            throw ConfigError("pool chain " + std::to_string(pools[0]) + "/" + std::to_string(pools[1]) +
                              "/" + std::to_string(pools[2]) + " does not divide " +
                              std::to_string(n_mels) + " mel bands");
        f /= p;
    }
    if (f != 1)
        throw ConfigError("pool chain must reduce the frequency axis to 1, got " + std::to_string(f));
}

namespace {

void fill_glorot(Tensor& t, Index fan_in, Index fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
}

GruDir init_gru_dir(Index in_dim, Index h, Rng& rng) {
    GruDir d;
    d.w = Tensor({in_dim, 3 * h});
    fill_glorot(d.w, in_dim, h, rng); // per-gate fans
    d.u = Tensor({h, 3 * h});
    fill_glorot(d.u, h, h, rng);
    d.b = Tensor({3 * h});
    return d;
}

} // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ModelParams p;
    p.config = config;
    p.init_seed = seed;

    Index c_in = 1;
    for (std::size_t i = 0; i < 3; ++i) {
        ConvBlock& b = p.conv[i];
        b.kernel = Tensor({3, 3, c_in, config.conv_maps});
        fill_glorot(b.kernel, c_in * 9, config.conv_maps * 9, rng);
        b.gamma = Tensor({config.conv_maps});
        b.gamma.arr() = 1.0;
        b.beta = Tensor({config.conv_maps});
        b.running_mean = Tensor({config.conv_maps});
        b.running_var = Tensor({config.conv_maps});
        b.running_var.arr() = 1.0;
        c_in = config.conv_maps;
    }

    const Index h = config.gru_units;
    p.gru1.fwd = init_gru_dir(config.conv_maps, h, rng);
    p.gru1.bwd = init_gru_dir(config.conv_maps, h, rng);
    p.gru2.fwd = init_gru_dir(2 * h, h, rng);
    p.gru2.bwd = init_gru_dir(2 * h, h, rng);

    p.dense1_w = Tensor({2 * h, config.dense_units});
    fill_glorot(p.dense1_w, 2 * h, config.dense_units, rng);
    p.dense1_b = Tensor({config.dense_units});
    p.dense2_w = Tensor({config.dense_units, 1});
    fill_glorot(p.dense2_w, config.dense_units, 1, rng);
    p.dense2_b = Tensor({1});
    return p;
}

CrnnForward crnn_forward(Graph& g, ModelParams& params,
                         const std::vector<const FeatureMatrix*>& bags, Mode mode) {
    const ModelConfig& cfg = params.config;
    cfg.validate();
    if (bags.empty()) throw ContractError("crnn_forward: empty batch");

    std::vector<Index> lengths;
    lengths.reserve(bags.size());
    Index t_max = 0;
    for (const FeatureMatrix* fm : bags) {
        if (fm->f() != cfg.n_mels)
            throw ShapeError("crnn_forward: recording '" + fm->id + "' has " + std::to_string(fm->f()) +
                             " feature bands, model expects " + std::to_string(cfg.n_mels));
        if (fm->t() < 1) throw ContractError("crnn_forward: recording '" + fm->id + "' has no frames");
        lengths.push_back(fm->t());
        t_max = std::max(t_max, fm->t());
    }

    const Index n = static_cast<Index>(bags.size());
    // [N, Tmax, F, 1], zero-padded beyond each bag's length.
    Tensor input({n, t_max, cfg.n_mels, 1});
    for (Index bag = 0; bag < n; ++bag) {
        const FeatureMatrix& fm = *bags[static_cast<std::size_t>(bag)];
        std::memcpy(input.data() + bag * t_max * cfg.n_mels, fm.frames.data(),
                    static_cast<std::size_t>(fm.t() * cfg.n_mels) * sizeof(double));
    }
    NodeId x = g.constant(std::move(input));

    // Bind every trainable tensor as a graph parameter, in visitor order.
    CrnnForward out;
    const bool train = mode == Mode::kTrain;
    std::unordered_map<const Tensor*, NodeId> bound;
    params.for_each_trainable([&](const std::string& name, Tensor& t) {
        const NodeId id = train ? g.parameter(t) : g.constant(t);
        out.params.emplace_back(name, id);
        bound[&t] = id;
    });
    auto node_of = [&](const Tensor& t) { return bound.at(&t); };

    NodeId h = x;
    for (std::size_t i = 0; i < 3; ++i) {
        ConvBlock& blk = params.conv[i];
        h = conv2d_same(g, h, node_of(blk.kernel));
        h = batch_norm(g, h, node_of(blk.gamma), node_of(blk.beta), &blk.running_mean,
                       &blk.running_var, lengths, mode, cfg.bn_eps, cfg.bn_momentum);
        h = relu(g, h);
        h = max_pool_freq(g, h, cfg.pools[i]);
    }

    NodeId seq = to_sequences(g, h, lengths);
    auto bigru = [&](NodeId in, GruLayer& layer) {
        const NodeId f = gru_sequence(g, in, node_of(layer.fwd.w), node_of(layer.fwd.u),
                                      node_of(layer.fwd.b), lengths, false);
        const NodeId b = gru_sequence(g, in, node_of(layer.bwd.w), node_of(layer.bwd.u),
                                      node_of(layer.bwd.b), lengths, true);
        return concat_last_axis(g, f, b);
    };
    NodeId s = bigru(seq, params.gru1);
    s = bigru(s, params.gru2);
    s = relu(g, add_row(g, matmul(g, s, node_of(params.dense1_w)), node_of(params.dense1_b)));
    s = sigmoid(g, add_row(g, matmul(g, s, node_of(params.dense2_w)), node_of(params.dense2_b)));

    Index offset = 0;
    for (Index bag = 0; bag < n; ++bag) {
        const Index len = lengths[static_cast<std::size_t>(bag)];
        out.predictions.push_back(reshape(g, slice_rows(g, s, offset, len), {len}));
        offset += len;
    }
    return out;
}

FramePredictions predict_frames(ModelParams& params, const FeatureMatrix& features) {
    Graph g;
    const CrnnForward fwd = crnn_forward(g, params, {&features}, Mode::kInfer);
    FramePredictions p;
    p.o = g.value(fwd.predictions[0]).vec();
    p.bag_id = features.id;
    return p;
}

Eigen::VectorXi threshold(const FramePredictions& preds, double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw ContractError("threshold: tau must lie in (0,1), got " + std::to_string(tau));
    Eigen::VectorXi labels(preds.o.size());
    for (Eigen::Index i = 0; i < preds.o.size(); ++i) labels[i] = preds.o[i] >= tau ? 1 : 0;
    return labels;
}

} // namespace wsed
