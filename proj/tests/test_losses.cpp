#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wsed/error.hpp"
#include "wsed/losses.hpp"
#include "wsed/ops.hpp"
#include "test_util.hpp"

using namespace wsed;
using test::FdProblem;
using test::fd_check;

namespace {

FramePredictions preds_of(std::initializer_list<double> values, const std::string& id = "bag") {
    FramePredictions p;
    p.bag_id = id;
    p.o.resize(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) p.o[i++] = v;
    return p;
}

FramePredictions random_bag(Rng& rng, Index min_m = 1, Index max_m = 50) {
    FramePredictions p;
    p.bag_id = "rand";
    const Index m = min_m + static_cast<Index>(rng.index(static_cast<std::size_t>(max_m - min_m + 1)));
    p.o.resize(m);
    for (Index i = 0; i < m; ++i) p.o[i] = rng.uniform();
    return p;
}

/// Direct-formula oracle, written against the definitions rather than the
/// implementation (independent clamp + log evaluation).
double oracle_loss(LossKind kind, const Eigen::VectorXd& o, int y) {
    auto xent = [](double p, double t) {
        p = std::min(std::max(p, 1e-7), 1.0 - 1e-7);
        return -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
    };
    const double mx = o.maxCoeff();
    const double mn = o.minCoeff();
    const double mean = o.sum() / static_cast<double>(o.size());
    switch (kind) {
    case LossKind::kFsl: {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < o.size(); ++i) acc += xent(o[i], y);
        return acc / static_cast<double>(o.size());
    }
    case LossKind::kMaxSe: return 0.5 * (mx - y) * (mx - y);
    case LossKind::kMaxBce: return xent(mx, y);
    case LossKind::kMaxMean: return (xent(mx, y) + xent(mean, y / 2.0)) / 2.0;
    case LossKind::kMaxMin: return (xent(mx, y) + xent(mn, 0.0)) / 2.0;
    case LossKind::kMmm: return (xent(mx, y) + xent(mean, y / 2.0) + xent(mn, 0.0)) / 3.0;
    }
    return 0.0;
}

const std::vector<LossKind> kAllKinds{LossKind::kFsl,     LossKind::kMaxSe,  LossKind::kMaxBce,
                                      LossKind::kMaxMean, LossKind::kMaxMin, LossKind::kMmm};

} // namespace

TEST_CASE("hand-derived anchor values") {
    const double ln2 = std::log(2.0);

    CHECK(fsl_loss(preds_of({0.0, 0.0, 0.0}), 0).value <= 1e-6);
    CHECK(fsl_loss(preds_of({0.5, 0.5}), 1).value == doctest::Approx(ln2).epsilon(1e-12));
    CHECK(fsl_loss(preds_of({1.0, 0.0}), 1).value ==
          doctest::Approx(-std::log(1e-7) / 2.0).epsilon(1e-6));

    CHECK(max_se_loss(preds_of({0.2, 0.9, 0.1}), 1).value == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(max_se_loss(preds_of({0.0, 0.0, 0.0}), 0).value == 0.0);
    CHECK(max_se_loss(preds_of({1.0, 0.0, 0.0}), 1).value == 0.0);

    CHECK(max_bce_loss(preds_of({0.0, 0.0}), 0).value <= 1e-6);
    CHECK(max_bce_loss(preds_of({0.5, 0.2}), 1).value == doctest::Approx(ln2).epsilon(1e-12));
    CHECK(max_bce_loss(preds_of({1.0}), 1).value <= 1e-6);

    CHECK(mmm_loss(preds_of({0.0, 0.0, 0.0, 0.0}), 0).value <= 1e-6);
    CHECK(mmm_loss(preds_of({1.0, 0.5, 0.0}), 1).value == doctest::Approx(0.231049).epsilon(1e-5));
    CHECK(mmm_loss(preds_of({0.5, 0.5}), 1).value == doctest::Approx(ln2).epsilon(1e-9));

    CHECK(max_mean_loss(preds_of({1.0, 0.0}), 1).value == doctest::Approx(ln2 / 2.0).epsilon(1e-6));
    CHECK(max_min_loss(preds_of({1.0, 0.0}), 1).value <= 1e-6);
    CHECK(max_min_loss(preds_of({0.5, 0.5}), 0).value == doctest::Approx(ln2).epsilon(1e-12));
}

TEST_CASE("loss terms are recorded and average to the value") {
    const BagLoss l = mmm_loss(preds_of({0.9, 0.4, 0.1}), 1);
    REQUIRE(l.terms.size() == 3);
    CHECK(l.terms[0].first == "max");
    CHECK(l.terms[1].first == "mean");
    CHECK(l.terms[2].first == "min");
    const double mean_of_terms =
        (l.terms[0].second + l.terms[1].second + l.terms[2].second) / 3.0;
    CHECK(l.value == doctest::Approx(mean_of_terms).epsilon(1e-15));
}

TEST_CASE("empty bags are rejected") {
    FramePredictions empty;
    empty.bag_id = "empty";
    for (LossKind kind : kAllKinds) CHECK_THROWS_AS(bag_loss(kind, empty, 1), ContractError);
    CHECK_THROWS_AS(batch_loss(LossKind::kMmm, {}), ContractError);
}

TEST_CASE("every kind matches the direct-formula oracle on random bags") {
    Rng rng(99);
    for (int i = 0; i < 400; ++i) {
        const FramePredictions p = random_bag(rng);
        const int y = rng.uniform() < 0.5 ? 0 : 1;
        for (LossKind kind : kAllKinds) {
            const double got = bag_loss(kind, p, y).value;
            const double want = oracle_loss(kind, p.o, y);
            CHECK(std::abs(got - want) <= 1e-9);
            CHECK(got >= 0.0);
            CHECK(std::isfinite(got));
        }
    }
}

TEST_CASE("graph losses equal the value-path losses") {
    Rng rng(101);
    for (int i = 0; i < 50; ++i) {
        const FramePredictions p = random_bag(rng, 1, 20);
        const int y = rng.uniform() < 0.5 ? 0 : 1;
        for (LossKind kind : kAllKinds) {
            Graph g;
            Tensor t({p.o.size()});
            t.vec() = p.o;
            const NodeId node = bag_loss_node(g, kind, g.constant(t), y);
            CHECK(g.value(node).scalar_value() ==
                  doctest::Approx(bag_loss(kind, p, y).value).epsilon(1e-12));
        }
    }
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(103);
    for (LossKind kind : kAllKinds) {
        for (int rep = 0; rep < 4; ++rep) {
            Tensor o({6});
            for (Index i = 0; i < 6; ++i) o[i] = rng.uniform(0.05, 0.95);
            // keep max/min unique so the subgradient choice is stable
            std::sort(o.data(), o.data() + 6);
            const int y = rep % 2;
            FdProblem problem{{o}, [kind, y](Graph& g, const std::vector<NodeId>& p) {
                                  return bag_loss_node(g, kind, p[0], y);
                              }};
            const auto result = fd_check(problem, rng.next_u64(), 1e-6, 1e-2);
            INFO(loss_kind_name(kind));
            CHECK(result.max_rel_error <= 1e-6);
        }
    }
}

TEST_CASE("gradient support: max variants touch one instance, the full loss several") {
    Rng rng(105);
    for (int i = 0; i < 100; ++i) {
        const Index m = 2 + static_cast<Index>(rng.index(19));
        Tensor o({m});
        for (Index j = 0; j < m; ++j) o[j] = 0.02 + 0.96 * rng.uniform();
        for (LossKind kind : {LossKind::kMaxSe, LossKind::kMaxBce, LossKind::kMmm}) {
            Graph g;
            const NodeId pred = g.parameter(o);
            g.backward(bag_loss_node(g, kind, pred, 1));
            Index touched = 0;
            for (Index j = 0; j < m; ++j) {
                if (g.grad(pred)[j] != 0.0) ++touched;
            }
            if (kind == LossKind::kMmm)
                CHECK(touched >= 2);
            else
                CHECK(touched == 1);
        }
    }
}

TEST_CASE("losses are invariant to instance order") {
    Rng rng(107);
    for (int i = 0; i < 30; ++i) {
        FramePredictions p = random_bag(rng, 2, 30);
        const int y = rng.uniform() < 0.5 ? 0 : 1;
        FramePredictions shuffled = p;
        std::vector<double> v(shuffled.o.data(), shuffled.o.data() + shuffled.o.size());
        rng.shuffle(v);
        for (std::size_t j = 0; j < v.size(); ++j) shuffled.o[static_cast<Index>(j)] = v[j];
        for (LossKind kind : kAllKinds) {
            CHECK(bag_loss(kind, p, y).value ==
                  doctest::Approx(bag_loss(kind, shuffled, y).value).epsilon(1e-12));
        }
    }
}

TEST_CASE("raising any prediction lowers the mean term while the mean is below target") {
    Rng rng(109);
    for (int rep = 0; rep < 20; ++rep) {
        FramePredictions p = random_bag(rng, 3, 10);
        p.o *= 0.4; // keep the mean below 0.5
        const double before = mmm_loss(p, 1).terms[1].second;
        const Index j = static_cast<Index>(rng.index(static_cast<std::size_t>(p.o.size())));
        FramePredictions bumped = p;
        bumped.o[j] = std::min(1.0, bumped.o[j] + 0.05);
        const double after = mmm_loss(bumped, 1).terms[1].second;
        CHECK(after < before);
    }
}

TEST_CASE("each kind attains its minimum exactly at its notion of a perfect bag") {
    CHECK(fsl_loss(preds_of({1.0, 1.0, 1.0}), 1).value <= 1e-6);
    CHECK(max_se_loss(preds_of({0.3, 1.0}), 1).value == 0.0);
    CHECK(max_bce_loss(preds_of({0.0, 1.0}), 1).value <= 1e-6);
    CHECK(max_min_loss(preds_of({1.0, 0.0}), 1).value <= 1e-6);
    // The mean term targets 1/2, whose cross-entropy floor is ln 2, so the
    // positive-bag minimum of the full loss is ln2/3 (at max=1, mean=.5, min=0)
    // rather than 0; negative bags do reach ~0.
    const double ln2 = std::log(2.0);
    CHECK(mmm_loss(preds_of({1.0, 0.0}), 1).value == doctest::Approx(ln2 / 3.0).epsilon(1e-6));
    CHECK(mmm_loss(preds_of({0.0, 0.0}), 0).value <= 1e-6);
    Rng rng(113);
    for (int i = 0; i < 50; ++i) { // nothing scores below the positive-bag floor
        const FramePredictions p = random_bag(rng, 2, 12);
        CHECK(mmm_loss(p, 1).value >= ln2 / 3.0 - 1e-7);
    }
    // and near-misses are strictly positive / above the floor
    CHECK(mmm_loss(preds_of({0.9, 0.1}), 1).value > ln2 / 3.0 + 1e-4);
    CHECK(max_se_loss(preds_of({0.99, 0.0}), 1).value > 1e-6);
}

TEST_CASE("batch loss is the mean over bags") {
    const FramePredictions a = preds_of({0.2, 0.9, 0.1}, "a");
    const FramePredictions b = preds_of({0.4, 0.4}, "b");
    const double la = bag_loss(LossKind::kMaxSe, a, 1).value;
    const double lb = bag_loss(LossKind::kMaxSe, b, 0).value;
    CHECK(batch_loss(LossKind::kMaxSe, {{a, 1}}) == doctest::Approx(la));
    CHECK(batch_loss(LossKind::kMaxSe, {{a, 1}, {b, 0}}) == doctest::Approx((la + lb) / 2.0));

    Rng rng(111);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::pair<FramePredictions, int>> bags;
        const std::size_t n = 1 + rng.index(8);
        for (std::size_t i = 0; i < n; ++i)
            bags.emplace_back(random_bag(rng, 1, 12), rng.uniform() < 0.5 ? 0 : 1);
        for (LossKind kind : kAllKinds) {
            double acc = 0.0;
            for (const auto& [p, y] : bags) acc += oracle_loss(kind, p.o, y);
            CHECK(std::abs(batch_loss(kind, bags) - acc / static_cast<double>(n)) <= 1e-12);
        }
    }
}

TEST_CASE("loss kind names round-trip") {
    for (LossKind kind : kAllKinds) CHECK(loss_kind_from_string(loss_kind_name(kind)) == kind);
    CHECK_THROWS_AS(loss_kind_from_string("bogus"), ConfigError);
}
