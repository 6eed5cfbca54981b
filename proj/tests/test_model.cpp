#include <doctest.h>

#include <cmath>
#include <fstream>

#include "wsed/checkpoint.hpp"
#include "wsed/error.hpp"
#include "wsed/losses.hpp"
#include "wsed/model.hpp"
#include "wsed/ops.hpp"
#include "test_util.hpp"

using namespace wsed;
using test::TempDir;
using test::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.conv_maps = 3;
    cfg.gru_units = 2;
    cfg.dense_units = 3;
    return cfg;
}

FeatureMatrix random_features(Index t, Index f, Rng& rng, const std::string& id) {
    FeatureMatrix fm;
    fm.id = id;
    fm.frame_hop_seconds = 0.0115;
    fm.frames.resize(t, f);
    for (Index i = 0; i < t; ++i)
        for (Index j = 0; j < f; ++j) fm.frames(i, j) = rng.uniform(-3.0, 3.0);
    return fm;
}

bool params_equal(ModelParams& a, ModelParams& b) {
    bool equal = true;
    std::vector<const Tensor*> ta, tb;
    a.for_each_state([&](const std::string&, Tensor& t) { ta.push_back(&t); });
    b.for_each_state([&](const std::string&, Tensor& t) { tb.push_back(&t); });
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (!ta[i]->same_shape(*tb[i])) return false;
        for (Index j = 0; j < ta[i]->size(); ++j) {
            if ((*ta[i])[j] != (*tb[i])[j]) equal = false;
        }
    }
    return equal;
}

} // namespace

TEST_CASE("init_params is deterministic per seed") {
    ModelParams a = init_params(tiny_config(), 5);
    ModelParams b = init_params(tiny_config(), 5);
    CHECK(params_equal(a, b));

    ModelParams c = init_params(tiny_config(), 6);
    CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("init_params respects per-layer Glorot bounds") {
    const ModelConfig cfg; // full production widths
    ModelParams p = init_params(cfg, 3);

    auto check_bound = [](const Tensor& t, Index fan_in, Index fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        double max_abs = 0.0;
        for (Index i = 0; i < t.size(); ++i) max_abs = std::max(max_abs, std::abs(t[i]));
        CHECK(max_abs <= limit);
        CHECK(max_abs > 0.0);
    };
    Index c_in = 1;
    for (int i = 0; i < 3; ++i) {
        check_bound(p.conv[i].kernel, c_in * 9, cfg.conv_maps * 9);
        CHECK(p.conv[i].gamma.arr().minCoeff() == 1.0);
        CHECK(p.conv[i].beta.arr().maxCoeff() == 0.0);
        c_in = cfg.conv_maps;
    }
    check_bound(p.gru1.fwd.w, cfg.conv_maps, cfg.gru_units);
    check_bound(p.gru1.fwd.u, cfg.gru_units, cfg.gru_units);
    check_bound(p.gru2.bwd.w, 2 * cfg.gru_units, cfg.gru_units);
    check_bound(p.dense1_w, 2 * cfg.gru_units, cfg.dense_units);
    check_bound(p.dense2_w, cfg.dense_units, 1);
    CHECK(p.gru1.fwd.b.arr().abs().maxCoeff() == 0.0);
}

TEST_CASE("forward preserves the frame count for any T") {
    Rng rng(21);
    ModelParams params = init_params(tiny_config(), 1);
    for (Index t : {Index(8), Index(13), Index(100), Index(1024)}) {
        const FeatureMatrix fm = random_features(t, 40, rng, "len" + std::to_string(t));
        const FramePredictions preds = predict_frames(params, fm);
        CHECK(preds.o.size() == t);
        CHECK(preds.o.minCoeff() >= 0.0);
        CHECK(preds.o.maxCoeff() <= 1.0);
    }
}

TEST_CASE("forward rejects wrong feature width") {
    Rng rng(22);
    ModelParams params = init_params(tiny_config(), 1);
    const FeatureMatrix fm = random_features(10, 39, rng, "bad_width");
    CHECK_THROWS_AS(predict_frames(params, fm), ShapeError);
}

TEST_CASE("conv stack reduces 40 bands to a length-T sequence of conv maps") {
    Rng rng(23);
    ModelConfig cfg = tiny_config();
    cfg.conv_maps = 64;
    ModelParams params = init_params(cfg, 1);
    const FeatureMatrix fm = random_features(17, 40, rng, "trace");
    Graph g;
    CrnnForward fwd = crnn_forward(g, params, {&fm}, Mode::kInfer);
    // locate the ragged sequence node: rank-2 with 64 columns right after pooling
    bool found = false;
    for (NodeId id = 0; id < static_cast<NodeId>(g.node_count()); ++id) {
        const auto& node = g.node(id);
        if (std::string(node.op) == "to_sequences") {
            CHECK(node.value.rank() == 2);
            CHECK(node.value.dim(0) == 17);
            CHECK(node.value.dim(1) == 64);
            found = true;
        }
    }
    CHECK(found);
    CHECK(g.value(fwd.predictions[0]).dim(0) == 17);
}

TEST_CASE("train and infer forward agree once running stats equal batch stats") {
    Rng rng(24);
    ModelConfig cfg = tiny_config();
    cfg.bn_momentum = 0.0; // running stats become the batch stats after one pass
    ModelParams params = init_params(cfg, 9);
    const FeatureMatrix a = random_features(12, 40, rng, "a");
    const FeatureMatrix b = random_features(12, 40, rng, "b");

    Graph gt;
    CrnnForward train_fwd = crnn_forward(gt, params, {&a, &b}, Mode::kTrain);
    Graph gi;
    CrnnForward infer_fwd = crnn_forward(gi, params, {&a, &b}, Mode::kInfer);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& tv = gt.value(train_fwd.predictions[i]);
        const auto& iv = gi.value(infer_fwd.predictions[i]);
        REQUIRE(tv.size() == iv.size());
        for (Index j = 0; j < tv.size(); ++j) CHECK(tv[j] == doctest::Approx(iv[j]).epsilon(1e-9));
    }
}

TEST_CASE("gru_sequence is exactly time-symmetric") {
    Rng rng(25);
    const Index t = 9, in = 3, h = 2;
    const Tensor x = random_tensor({t, in}, rng);
    Tensor x_rev({t, in});
    for (Index i = 0; i < t; ++i)
        for (Index j = 0; j < in; ++j) x_rev[(t - 1 - i) * in + j] = x[i * in + j];
    const Tensor w = random_tensor({in, 3 * h}, rng);
    const Tensor u = random_tensor({h, 3 * h}, rng);
    const Tensor b = random_tensor({3 * h}, rng);

    Graph g;
    const NodeId fwd_on_rev =
        gru_sequence(g, g.constant(x_rev), g.constant(w), g.constant(u), g.constant(b), {t}, false);
    const NodeId bwd_on_orig =
        gru_sequence(g, g.constant(x), g.constant(w), g.constant(u), g.constant(b), {t}, true);
    const Tensor& a = g.value(fwd_on_rev);
    const Tensor& c = g.value(bwd_on_orig);
    for (Index i = 0; i < t; ++i)
        for (Index j = 0; j < h; ++j) CHECK(a[(t - 1 - i) * h + j] == c[i * h + j]);
}

TEST_CASE("time-reversing input plus swapping GRU directions reverses the output") {
    // Exact mirror construction: swap each GRU layer's direction blocks,
    // flip the conv kernels along time, and exchange the input row blocks of
    // anything consuming a [fwd|bwd] concatenation (the second GRU layer and
    // the first dense layer).
    Rng rng(26);
    ModelParams params = init_params(tiny_config(), 31);
    ModelParams mirrored = init_params(tiny_config(), 31);
    const Index h = mirrored.config.gru_units;
    auto swap_row_blocks = [h](Tensor& w) {
        RowMatrix top = w.mat().topRows(h);
        w.mat().topRows(h) = w.mat().bottomRows(h);
        w.mat().bottomRows(h) = top;
    };
    std::swap(mirrored.gru1.fwd, mirrored.gru1.bwd);
    swap_row_blocks(mirrored.gru2.fwd.w);
    swap_row_blocks(mirrored.gru2.bwd.w);
    std::swap(mirrored.gru2.fwd, mirrored.gru2.bwd);
    swap_row_blocks(mirrored.dense1_w);
    for (int blk = 0; blk < 3; ++blk) {
        Tensor& k = mirrored.conv[blk].kernel;
        Tensor flipped(k.shape());
        const Index kw = k.dim(1), ci = k.dim(2), co = k.dim(3);
        for (Index dy = 0; dy < k.dim(0); ++dy) {
            const Index src = (k.dim(0) - 1 - dy) * kw * ci * co;
            const Index dst = dy * kw * ci * co;
            for (Index r = 0; r < kw * ci * co; ++r) flipped[dst + r] = k[src + r];
        }
        k = std::move(flipped);
    }

    const FeatureMatrix fm = random_features(11, 40, rng, "fwd");
    FeatureMatrix rev = fm;
    rev.frames = fm.frames.colwise().reverse().eval();

    const FramePredictions straight = predict_frames(params, fm);
    const FramePredictions mirrored_rev = predict_frames(mirrored, rev);
    for (Index i = 0; i < 11; ++i)
        CHECK(straight.o[i] == doctest::Approx(mirrored_rev.o[10 - i]).epsilon(1e-12));
}

TEST_CASE("tiny end-to-end gradients match finite differences") {
    Rng rng(27);
    ModelConfig cfg = tiny_config();
    ModelParams params = init_params(cfg, 77);
    const FeatureMatrix a = random_features(12, 40, rng, "a");
    const FeatureMatrix b = random_features(9, 40, rng, "b");
    const std::vector<int> labels{1, 0};

    auto loss_for = [&](ModelParams& p) {
        Graph g;
        CrnnForward fwd = crnn_forward(g, p, {&a, &b}, Mode::kTrain);
        const NodeId loss = batch_loss_node(g, LossKind::kMmm, fwd.predictions, labels);
        return std::pair<Graph, CrnnForward>(std::move(g), std::move(fwd));
    };

    // analytic gradients (batch-norm running updates are irrelevant to the value)
    Graph g;
    CrnnForward fwd = crnn_forward(g, params, {&a, &b}, Mode::kTrain);
    const NodeId loss = batch_loss_node(g, LossKind::kMmm, fwd.predictions, labels);
    g.backward(loss);
    (void)loss_for;

    const double h = 1e-5;
    double worst = 0.0;
    std::size_t param_index = 0;
    params.for_each_trainable([&](const std::string& name, Tensor& theta) {
        const NodeId node = fwd.params[param_index].second;
        REQUIRE(fwd.params[param_index].first == name);
        ++param_index;
        const Tensor analytic = g.has_grad(node) ? g.grad(node) : Tensor::zeros(theta.shape());
        // probe a subset of each tensor to keep the test quick
        const Index stride = std::max<Index>(1, theta.size() / 12);
        for (Index i = 0; i < theta.size(); i += stride) {
            const double orig = theta[i];
            theta[i] = orig + h;
            Graph gp;
            CrnnForward fp = crnn_forward(gp, params, {&a, &b}, Mode::kTrain);
            const double jp =
                gp.value(batch_loss_node(gp, LossKind::kMmm, fp.predictions, labels)).scalar_value();
            theta[i] = orig - h;
            Graph gm;
            CrnnForward fm2 = crnn_forward(gm, params, {&a, &b}, Mode::kTrain);
            const double jm =
                gm.value(batch_loss_node(gm, LossKind::kMmm, fm2.predictions, labels)).scalar_value();
            theta[i] = orig;
            const double numeric = (jp - jm) / (2.0 * h);
            const double rel = std::abs(analytic[i] - numeric) /
                               std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
            worst = std::max(worst, rel);
        }
    });
    CHECK(worst <= 1e-4);
}

TEST_CASE("threshold applies the >= rule") {
    FramePredictions preds;
    preds.bag_id = "t";
    preds.o.resize(1);
    preds.o << 0.5;
    CHECK(threshold(preds, 0.5)(0) == 1);
    preds.o << 0.4999;
    CHECK(threshold(preds, 0.5)(0) == 0);
    preds.o.resize(3);
    preds.o << 0.0, 1.0, 0.7;
    const Eigen::VectorXi labels = threshold(preds, 0.5);
    CHECK(labels(0) == 0);
    CHECK(labels(1) == 1);
    CHECK(labels(2) == 1);
    CHECK_THROWS_AS(threshold(preds, 0.0), ContractError);
    CHECK_THROWS_AS(threshold(preds, 1.0), ContractError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    TempDir dir("ckpt");
    Rng rng(31);
    ModelConfig cfg = tiny_config();
    ModelParams params = init_params(cfg, 123);
    // dirty the running stats so they are exercised too
    params.conv[0].running_mean.arr() = 0.25;
    params.conv[2].running_var.arr() = 2.5;

    const auto path = dir.path() / "model.wsck";
    save_checkpoint(path, params);
    ModelParams loaded = load_checkpoint(path, cfg);
    CHECK(loaded.init_seed == 123);

    const FeatureMatrix fm = random_features(14, 40, rng, "rt");
    const FramePredictions a = predict_frames(params, fm);
    const FramePredictions b = predict_frames(loaded, fm);
    REQUIRE(a.o.size() == b.o.size());
    for (Index i = 0; i < a.o.size(); ++i) CHECK(a.o[i] == b.o[i]);

    ModelConfig other = cfg;
    other.conv_maps = 4;
    CHECK_THROWS_AS(load_checkpoint(path, other), FormatError);

    std::ofstream(dir.path() / "junk.wsck") << "nope";
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "junk.wsck", cfg), FormatError);
}
