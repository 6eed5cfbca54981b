#ifndef WSED_EVAL_HPP
#define WSED_EVAL_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wsed/model.hpp"

namespace wsed {

/// Frame-level scores micro-averaged over all frames of all recordings.
/// 0/0 ratios resolve to 0 and set the degenerate flag.
struct RecordingCounts {
    std::string id;
    long tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
    long tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool degenerate = false; // no positive frames in predictions or truth
    std::vector<RecordingCounts> per_recording;
};

/// Binary frame labels for one recording.
struct LabelledFrames {
    std::string id;
    Eigen::VectorXi frames;
};

/// Pools confusion counts over all recordings; lengths must match per id
/// (ContractError naming the recording otherwise). Recordings are matched by
/// position, ids are carried for reporting.
EvalReport frame_metrics(const std::vector<LabelledFrames>& predictions,
                         const std::vector<LabelledFrames>& truth);

/// Maximal runs of frames with score >= tau become events
/// [first_frame_start, last_frame_end).
std::vector<std::pair<double, double>> transcription_export(const FramePredictions& preds,
                                                            double hop_seconds, double tau);

/// One F1-vs-epoch series per run.
struct CurveSeries {
    std::string label;
    std::vector<std::pair<long, double>> points; // (epoch, f1)
};

/// Writes a long-form CSV (series,epoch,f1) and a deterministic SVG line
/// chart. Throws DataError("no data") when every series is empty.
void curve_emit(const std::vector<CurveSeries>& series, const std::filesystem::path& csv_path,
                const std::filesystem::path& svg_path);

std::string report_text(const EvalReport& report);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

} // namespace wsed

#endif
