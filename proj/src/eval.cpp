#include "wsed/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "wsed/error.hpp"

namespace wsed {

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

} // namespace

EvalReport frame_metrics(const std::vector<LabelledFrames>& predictions,
                         const std::vector<LabelledFrames>& truth) {
    if (predictions.size() != truth.size())
        throw ContractError("frame_metrics: got " + std::to_string(predictions.size()) +
                            " predictions for " + std::to_string(truth.size()) + " truth recordings");
    EvalReport report;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const LabelledFrames& p = predictions[i];
        const LabelledFrames& t = truth[i];
        if (p.frames.size() != t.frames.size())
            throw ContractError("frame_metrics: recording '" + p.id + "' has " +
                                std::to_string(p.frames.size()) + " predicted frames but " +
                                std::to_string(t.frames.size()) + " truth frames");
        RecordingCounts rc;
        rc.id = p.id;
        for (Eigen::Index j = 0; j < p.frames.size(); ++j) {
            const bool pp = p.frames[j] != 0;
            const bool tt = t.frames[j] != 0;
            if (pp && tt)
                ++rc.tp;
            else if (pp && !tt)
                ++rc.fp;
            else if (!pp && tt)
                ++rc.fn;
        }
        report.tp += rc.tp;
        report.fp += rc.fp;
        report.fn += rc.fn;
        report.per_recording.push_back(std::move(rc));
    }
    report.precision = (report.tp + report.fp) > 0
                           ? static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp)
                           : 0.0;
    report.recall = (report.tp + report.fn) > 0
                        ? static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fn)
                        : 0.0;
    report.f1 = (report.precision + report.recall) > 0.0
                    ? 2.0 * report.precision * report.recall / (report.precision + report.recall)
                    : 0.0;
    report.degenerate = report.tp + report.fp + report.fn == 0;
    return report;
}

std::vector<std::pair<double, double>> transcription_export(const FramePredictions& preds,
                                                            double hop_seconds, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ContractError("transcription_export: tau must lie in (0,1)");
    if (hop_seconds <= 0.0) throw ContractError("transcription_export: hop must be positive");
    std::vector<std::pair<double, double>> events;
    Eigen::Index run_start = -1;
    for (Eigen::Index j = 0; j <= preds.o.size(); ++j) {
        const bool active = j < preds.o.size() && preds.o[j] >= tau;
        if (active && run_start < 0) run_start = j;
        if (!active && run_start >= 0) {
            events.emplace_back(run_start * hop_seconds, j * hop_seconds);
            run_start = -1;
        }
    }
    return events;
}

void curve_emit(const std::vector<CurveSeries>& series, const std::filesystem::path& csv_path,
                const std::filesystem::path& svg_path) {
    std::size_t total = 0;
    for (const CurveSeries& s : series) total += s.points.size();
    if (total == 0) throw DataError("no data");

    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot write curve CSV: " + csv_path.string());
    csv << "series,epoch,f1\n";
    for (const CurveSeries& s : series) {
        for (const auto& [epoch, f1] : s.points)
            csv << s.label << ',' << epoch << ',' << fmt(f1, "%.9g") << '\n';
    }

    long e_lo = 0, e_hi = 1;
    bool first = true;
    for (const CurveSeries& s : series) {
        for (const auto& [epoch, f1] : s.points) {
            if (first) {
                e_lo = e_hi = epoch;
                first = false;
            } else {
                e_lo = std::min(e_lo, epoch);
                e_hi = std::max(e_hi, epoch);
            }
        }
    }
    if (e_hi == e_lo) e_hi = e_lo + 1;

    const double width = 800, height = 500;
    const double ml = 60, mr = 160, mt = 20, mb = 45;
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto sx = [&](double epoch) { return ml + pw * (epoch - e_lo) / static_cast<double>(e_hi - e_lo); };
    auto sy = [&](double f1) { return mt + ph * (1.0 - f1); };
    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                     "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    std::ofstream svg(svg_path);
    if (!svg) throw DataError("cannot write curve SVG: " + svg_path.string());
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double f1 = i / 5.0;
        svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << sy(f1) << "\" x2=\"" << ml << "\" y2=\""
            << sy(f1) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << sy(f1) + 4
            << "\" font-size=\"12\" text-anchor=\"end\">" << fmt(f1, "%.1f") << "</text>\n";
        const double epoch = e_lo + (e_hi - e_lo) * i / 5.0;
        svg << "<line x1=\"" << sx(epoch) << "\" y1=\"" << mt + ph << "\" x2=\"" << sx(epoch)
            << "\" y2=\"" << mt + ph + 4 << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << sx(epoch) << "\" y=\"" << mt + ph + 18
            << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt(epoch, "%.6g") << "</text>\n";
    }
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
        << "\" font-size=\"13\" text-anchor=\"middle\">epoch</text>\n";
    svg << "<text x=\"16\" y=\"" << mt + ph / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << mt + ph / 2
        << ")\">frame F1</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const CurveSeries& s = series[i];
        const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
        if (!s.points.empty()) {
            svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [epoch, f1] : s.points)
                svg << fmt(sx(static_cast<double>(epoch)), "%.2f") << ',' << fmt(sy(f1), "%.2f") << ' ';
            svg << "\"/>\n";
        }
        const double ly = mt + 16 + 18 * static_cast<double>(i);
        svg << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << ml + pw + 34
            << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
        svg << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly << "\" font-size=\"12\">" << s.label
            << "</text>\n";
    }
    svg << "</svg>\n";
}

std::string report_text(const EvalReport& report) {
    std::string out;
    out += "frames: tp=" + std::to_string(report.tp) + " fp=" + std::to_string(report.fp) +
           " fn=" + std::to_string(report.fn) + "\n";
    out += "precision=" + fmt(report.precision) + " recall=" + fmt(report.recall) +
           " f1=" + fmt(report.f1) + "\n";
    if (report.degenerate) out += "note: no positives in predictions or truth\n";
    return out;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report CSV: " + path.string());
    out << "id,tp,fp,fn\n";
    for (const RecordingCounts& rc : report.per_recording)
        out << rc.id << ',' << rc.tp << ',' << rc.fp << ',' << rc.fn << '\n';
    out << "TOTAL," << report.tp << ',' << report.fp << ',' << report.fn << '\n';
    out << "precision," << fmt(report.precision, "%.9g") << ",,\n";
    out << "recall," << fmt(report.recall, "%.9g") << ",,\n";
    out << "f1," << fmt(report.f1, "%.9g") << ",,\n";
}

} // namespace wsed
