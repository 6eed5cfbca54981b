#include "wsed/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "wsed/error.hpp"

namespace wsed {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, sep)) out.push_back(field);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

std::vector<WeakManifestEntry> load_weak_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open weak manifest: " + path.string());
    std::vector<WeakManifestEntry> entries;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const std::string t = strip(line);
        if (t.empty()) continue;
        if (row == 1 && t == "id,path,labels") continue; // optional header
        auto fields = split(t, ',');
        if (fields.size() != 3)
            throw DataError("weak manifest row " + std::to_string(row) + ": expected id,path,labels");
        WeakManifestEntry e;
        e.id = strip(fields[0]);
        e.path = strip(fields[1]);
        if (e.id.empty())
            throw DataError("weak manifest row " + std::to_string(row) + ": empty id");
        if (e.id.find('/') != std::string::npos || e.id.find('\\') != std::string::npos)
            throw DataError("weak manifest row " + std::to_string(row) + ": id '" + e.id +
                            "' contains a path separator");
        if (e.path.empty())
            throw DataError("weak manifest row " + std::to_string(row) + ": missing audio path for '" +
                            e.id + "'");
        if (!seen.insert(e.id).second)
            throw DataError("weak manifest row " + std::to_string(row) + ": duplicate id '" + e.id + "'");
        for (const std::string& raw : split(strip(fields[2]), ';')) {
            const std::string lab = strip(raw);
            if (!lab.empty()) e.labels.push_back(lab);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<std::pair<std::string, int>> apply_label_map(const std::vector<WeakManifestEntry>& entries,
                                                         const LabelMap& map) {
    if (map.target.empty()) throw ContractError("label map: empty target name");
    std::vector<std::pair<std::string, int>> out;
    out.reserve(entries.size());
    for (const WeakManifestEntry& e : entries) {
        const bool positive = std::any_of(e.labels.begin(), e.labels.end(), [&](const std::string& l) {
            return map.positive.count(l) > 0;
        });
        out.emplace_back(e.id, positive ? 1 : 0);
    }
    return out;
}

std::vector<StrongAnnotation> load_strong_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open strong annotation file: " + path.string());
    std::vector<StrongAnnotation> out;
    std::unordered_map<std::string, std::size_t> index;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const std::string t = strip(line);
        if (t.empty()) continue;
        if (row == 1 && t == "id,onset,offset") continue;
        auto fields = split(t, ',');
        if (fields.size() != 3)
            throw DataError("strong annotation row " + std::to_string(row) + ": expected id,onset,offset");
        const std::string id = strip(fields[0]);
        double onset = 0.0, offset = 0.0;
        try {
            onset = std::stod(fields[1]);
            offset = std::stod(fields[2]);
        } catch (const std::exception&) {
            throw DataError("strong annotation row " + std::to_string(row) + ": non-numeric time");
        }
        if (!(onset >= 0.0) || !(onset < offset))
            throw DataError("strong annotation row " + std::to_string(row) +
                            ": need 0 <= onset < offset");
        auto [it, inserted] = index.try_emplace(id, out.size());
        if (inserted) out.push_back(StrongAnnotation{id, {}});
        out[it->second].events.emplace_back(onset, offset);
    }
    return out;
}

Eigen::VectorXi frames_from_annotation(const StrongAnnotation& ann, Index t, double hop_seconds) {
    if (t < 0 || hop_seconds <= 0.0)
        throw ContractError("frames_from_annotation: invalid frame geometry");
    Eigen::VectorXi frames = Eigen::VectorXi::Zero(t);
    for (const auto& [onset, offset] : ann.events) {
        for (Index j = 0; j < t; ++j) {
            const double center = (static_cast<double>(j) + 0.5) * hop_seconds;
            if (center >= onset && center < offset) frames[j] = 1;
        }
    }
    return frames;
}

HnhAnchor hnh_anchor_from_string(const std::string& s) {
    if (s == "majority") return HnhAnchor::kMajority;
    if (s == "positive") return HnhAnchor::kPositive;
    if (s == "negative") return HnhAnchor::kNegative;
    throw ConfigError("unknown sampler anchor '" + s + "' (expected majority|positive|negative)");
}

HnhSampler::HnhSampler(const std::vector<int>& labels, Index batch_size, std::uint64_t seed,
                       HnhAnchor anchor)
    : rng_(seed) {
    if (batch_size < 2 || batch_size % 2 != 0)
        throw TrainError("half-and-half sampler requires an even batch size >= 2");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == 1 ? pos : neg).push_back(i);
    }
    if (pos.empty() || neg.empty())
        throw TrainError("half-and-half sampler needs at least one positive and one negative bag (got " +
                         std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) +
                         " negative)");
    bool anchor_positive = true;
    switch (anchor) {
    case HnhAnchor::kMajority: anchor_positive = pos.size() >= neg.size(); break;
    case HnhAnchor::kPositive: anchor_positive = true; break;
    case HnhAnchor::kNegative: anchor_positive = false; break;
    }
    anchor_idx_ = anchor_positive ? pos : neg;
    other_idx_ = anchor_positive ? neg : pos;
    half_ = batch_size / 2;
    batches_per_epoch_ =
        static_cast<Index>((anchor_idx_.size() + static_cast<std::size_t>(half_) - 1) /
                           static_cast<std::size_t>(half_));
}

std::vector<std::vector<std::size_t>> HnhSampler::next_epoch() {
    std::vector<std::size_t> order = anchor_idx_;
    rng_.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    batches.reserve(static_cast<std::size_t>(batches_per_epoch_));
    for (Index b = 0; b < batches_per_epoch_; ++b) {
        std::vector<std::size_t> batch;
        batch.reserve(static_cast<std::size_t>(2 * half_));
        for (Index i = 0; i < half_; ++i) {
            const std::size_t k = static_cast<std::size_t>(b * half_ + i);
            // Pad the final short chunk by resampling the anchor class.
            batch.push_back(k < order.size() ? order[k] : order[rng_.index(order.size())]);
        }
        for (Index i = 0; i < half_; ++i) {
            batch.push_back(other_idx_[rng_.index(other_idx_.size())]);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

} // namespace wsed
