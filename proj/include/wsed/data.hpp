#ifndef WSED_DATA_HPP
#define WSED_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wsed/features.hpp"
#include "wsed/rng.hpp"

namespace wsed {

/// One row of a weak manifest: `id,path,labels` with labels semicolon-joined
/// (possibly empty for a negative recording).
struct WeakManifestEntry {
    std::string id;
    std::string path;
    std::vector<std::string> labels;
};

/// Loads a weak manifest CSV. Duplicate ids and malformed rows raise
/// DataError naming the row number.
std::vector<WeakManifestEntry> load_weak_manifest(const std::filesystem::path& path);

/// Collapses raw labels onto one binary target class: Y = 1 iff the entry's
/// label set intersects the positive set.
struct LabelMap {
    std::string target;
    std::set<std::string> positive;
};

std::vector<std::pair<std::string, int>> apply_label_map(const std::vector<WeakManifestEntry>& entries,
                                                         const LabelMap& map);

/// One recording as a bag of per-frame instances plus its weak label.
struct Bag {
    FeatureMatrix features;
    int label = 0;
    std::string id;

    Index instance_count() const { return features.t(); }
};

/// Strong (frame-level) ground truth for one recording: event intervals in
/// seconds. Events may overlap.
struct StrongAnnotation {
    std::string id;
    std::vector<std::pair<double, double>> events; // [onset, offset)
};

/// Loads `id,onset,offset` rows (one event per row); rows sharing an id are
/// grouped. Recordings without rows simply have no events.
std::vector<StrongAnnotation> load_strong_annotations(const std::filesystem::path& path);

/// Frame j is 1 iff its center time (j + 0.5) * hop lies inside any
/// [onset, offset) interval.
Eigen::VectorXi frames_from_annotation(const StrongAnnotation& ann, Index t, double hop_seconds);

/// Half-and-Half batch sampler: every batch holds exactly batch_size/2
/// positive and batch_size/2 negative bags. Epochs are anchored on the
/// majority class (each of its bags appears at least once per epoch); the
/// minority class is sampled with replacement. Deterministic for a fixed
/// seed.
enum class HnhAnchor { kMajority, kPositive, kNegative };

HnhAnchor hnh_anchor_from_string(const std::string& s);

class HnhSampler {
public:
    /// `labels[i]` is the weak label of bag i. Throws TrainError when either
    /// class is empty or batch_size is odd.
    HnhSampler(const std::vector<int>& labels, Index batch_size, std::uint64_t seed,
               HnhAnchor anchor = HnhAnchor::kMajority);

    Index batches_per_epoch() const { return batches_per_epoch_; }

    /// Bag indices for the next epoch, grouped into batches.
    std::vector<std::vector<std::size_t>> next_epoch();

private:
    std::vector<std::size_t> anchor_idx_, other_idx_;
    Index half_ = 0;
    Index batches_per_epoch_ = 0;
    Rng rng_;
};

} // namespace wsed

#endif
