#include <doctest.h>

#include <fstream>
#include <set>

#include "wsed/data.hpp"
#include "wsed/error.hpp"
#include "test_util.hpp"

using namespace wsed;
using test::TempDir;

namespace {

std::filesystem::path write_file(const TempDir& dir, const std::string& name,
                                 const std::string& body) {
    const auto path = dir.path() / name;
    std::ofstream(path) << body;
    return path;
}

} // namespace

TEST_CASE("weak manifest parsing") {
    TempDir dir("manifest");
    const auto path = write_file(dir, "weak.csv",
                                 "id,path,labels\n"
                                 "r1,a.wav,Dog;Cat\n"
                                 "r2,b.wav,\n"
                                 "r3,c.wav,Blender\n");
    const auto entries = load_weak_manifest(path);
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].id == "r1");
    CHECK(entries[0].path == "a.wav");
    CHECK(entries[0].labels == std::vector<std::string>{"Dog", "Cat"});
    CHECK(entries[1].labels.empty());
    CHECK(entries[2].labels == std::vector<std::string>{"Blender"});
}

TEST_CASE("weak manifest rejects duplicates and bad rows") {
    TempDir dir("manifest");
    const auto dup = write_file(dir, "dup.csv", "r1,a.wav,Dog\nr1,b.wav,\n");
    try {
        load_weak_manifest(dup);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("r1") != std::string::npos);
        CHECK(msg.find("row 2") != std::string::npos);
    }

    const auto missing = write_file(dir, "missing.csv", "r1,,Dog\n");
    CHECK_THROWS_AS(load_weak_manifest(missing), DataError);
    const auto short_row = write_file(dir, "short.csv", "r1,a.wav\n");
    CHECK_THROWS_AS(load_weak_manifest(short_row), DataError);
    CHECK_THROWS_AS(load_weak_manifest(dir.path() / "absent.csv"), DataError);
}

TEST_CASE("label map collapses raw labels onto one binary target") {
    std::vector<WeakManifestEntry> entries{
        {"r1", "a.wav", {"Dog"}},
        {"r2", "b.wav", {"Blender"}},
        {"r3", "c.wav", {}},
        {"r4", "d.wav", {"Cat", "Blender"}},
    };
    const LabelMap map{"mammals", {"Dog", "Cat", "Speech"}};
    const auto labelled = apply_label_map(entries, map);
    REQUIRE(labelled.size() == 4);
    CHECK(labelled[0].second == 1);
    CHECK(labelled[1].second == 0);
    CHECK(labelled[2].second == 0);
    CHECK(labelled[3].second == 1);

    // order independence + idempotence
    std::vector<WeakManifestEntry> reversed(entries.rbegin(), entries.rend());
    const auto again = apply_label_map(reversed, map);
    CHECK(again[0].first == "r4");
    CHECK(again[0].second == 1);
    CHECK(apply_label_map(entries, map) == labelled);
}

TEST_CASE("strong annotations group by id and validate times") {
    TempDir dir("strong");
    const auto path = write_file(dir, "strong.csv",
                                 "id,onset,offset\n"
                                 "r1,0.500,1.250\n"
                                 "r2,0.000,5.000\n"
                                 "r1,2.000,2.125\n");
    const auto anns = load_strong_annotations(path);
    REQUIRE(anns.size() == 2);
    CHECK(anns[0].id == "r1");
    REQUIRE(anns[0].events.size() == 2);
    CHECK(anns[0].events[1].first == doctest::Approx(2.0));

    const auto bad = write_file(dir, "bad.csv", "r1,2.0,1.0\n");
    CHECK_THROWS_AS(load_strong_annotations(bad), DataError);
    const auto nonnum = write_file(dir, "nonnum.csv", "r1,x,1.0\n");
    CHECK_THROWS_AS(load_strong_annotations(nonnum), DataError);
}

TEST_CASE("frames_from_annotation marks frames by center membership") {
    StrongAnnotation none{"r", {}};
    CHECK(frames_from_annotation(none, 10, 0.01).sum() == 0);

    StrongAnnotation whole{"r", {{0.0, 1.0}}};
    CHECK(frames_from_annotation(whole, 10, 0.01).sum() == 10);

    const double hop = 0.0115;
    StrongAnnotation ev{"r", {{1.0, 2.0}}};
    const Eigen::VectorXi frames = frames_from_annotation(ev, 433, hop);
    for (Index j = 0; j < 433; ++j) {
        const double center = (j + 0.5) * hop;
        CHECK(frames[j] == ((center >= 1.0 && center < 2.0) ? 1 : 0));
    }
}

TEST_CASE("positive frame count grows with event duration") {
    const double hop = 0.02;
    int prev = 0;
    for (double dur = 0.05; dur <= 1.0; dur += 0.05) {
        StrongAnnotation ann{"r", {{0.3, 0.3 + dur}}};
        const int count = frames_from_annotation(ann, 100, hop).sum();
        CHECK(count >= prev);
        prev = count;
    }
}

TEST_CASE("half-and-half batches are exactly balanced") {
    // 587 positive / 100 negative mirrors a strongly imbalanced corpus
    std::vector<int> labels(687, 1);
    for (int i = 0; i < 100; ++i) labels[static_cast<std::size_t>(i) * 6] = 0;
    HnhSampler sampler(labels, 32, 9);
    CHECK(sampler.batches_per_epoch() == 37); // ceil(587 / 16)

    std::set<std::size_t> positives;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) positives.insert(i);
    }
    for (int epoch = 0; epoch < 5; ++epoch) {
        std::set<std::size_t> seen_pos;
        const auto batches = sampler.next_epoch();
        REQUIRE(batches.size() == 37);
        for (const auto& batch : batches) {
            REQUIRE(batch.size() == 32);
            int pos = 0;
            for (std::size_t idx : batch) {
                if (labels[idx] == 1) {
                    ++pos;
                    seen_pos.insert(idx);
                }
            }
            CHECK(pos == 16);
        }
        CHECK(seen_pos == positives); // every positive at least once per epoch
    }
}

TEST_CASE("minority class is repeated to fill each batch") {
    std::vector<int> labels(360, 0);
    for (int i = 0; i < 200; ++i) labels[static_cast<std::size_t>(i)] = 1;
    HnhSampler sampler(labels, 32, 4); // 200 positive anchor, 160 negative minority
    CHECK(sampler.batches_per_epoch() == 13);
    const auto batches = sampler.next_epoch();
    for (const auto& batch : batches) {
        int neg = 0;
        for (std::size_t idx : batch) neg += labels[idx] == 0 ? 1 : 0;
        CHECK(neg == 16);
    }
}

TEST_CASE("a single positive and negative pair fills every batch") {
    HnhSampler sampler({1, 0}, 2, 1);
    for (int epoch = 0; epoch < 3; ++epoch) {
        for (const auto& batch : sampler.next_epoch()) {
            REQUIRE(batch.size() == 2);
            CHECK(((batch[0] == 0 && batch[1] == 1) || (batch[0] == 1 && batch[1] == 0)));
        }
    }
}

TEST_CASE("sampler balance holds over 100 epochs of random corpora") {
    Rng rng(55);
    for (int corpus = 0; corpus < 4; ++corpus) {
        const std::size_t n = 20 + rng.index(200);
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) labels.push_back(rng.uniform() < 0.7 ? 1 : 0);
        if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
        if (std::count(labels.begin(), labels.end(), 0) == 0) labels[1] = 0;
        HnhSampler sampler(labels, 8, rng.next_u64());
        std::size_t majority = std::max<std::size_t>(std::count(labels.begin(), labels.end(), 1),
                                                     std::count(labels.begin(), labels.end(), 0));
        CHECK(sampler.batches_per_epoch() == static_cast<Index>((majority + 3) / 4));
        for (int epoch = 0; epoch < 100; ++epoch) {
            for (const auto& batch : sampler.next_epoch()) {
                int pos = 0;
                for (std::size_t idx : batch) pos += labels[idx];
                CHECK(pos == 4);
            }
        }
    }
}

TEST_CASE("sampler determinism and error cases") {
    std::vector<int> labels{1, 1, 1, 0, 0, 1};
    HnhSampler a(labels, 4, 77);
    HnhSampler b(labels, 4, 77);
    for (int epoch = 0; epoch < 3; ++epoch) CHECK(a.next_epoch() == b.next_epoch());

    CHECK_THROWS_AS(HnhSampler({1, 1}, 4, 0), TrainError);
    CHECK_THROWS_AS(HnhSampler({0, 0}, 4, 0), TrainError);
    CHECK_THROWS_AS(HnhSampler(labels, 5, 0), TrainError);

    // explicit anchor selection
    HnhSampler neg_anchor(labels, 4, 3, HnhAnchor::kNegative);
    CHECK(neg_anchor.batches_per_epoch() == 1); // ceil(2/2)
    CHECK(hnh_anchor_from_string("positive") == HnhAnchor::kPositive);
    CHECK_THROWS_AS(hnh_anchor_from_string("sideways"), ConfigError);
}
