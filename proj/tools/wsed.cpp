// Command-line surface: feature extraction, training, prediction, frame-level
// evaluation, F1-curve plotting and synthetic corpus generation.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "wsed/checkpoint.hpp"
#include "wsed/config.hpp"
#include "wsed/error.hpp"
#include "wsed/parallel.hpp"
#include "wsed/synth.hpp"
#include "wsed/trainer.hpp"

namespace {

using namespace wsed;

namespace fs = std::filesystem;

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool force = false;
};

RunConfig load_config(const GlobalArgs& args) {
    if (args.config_path.empty()) throw ConfigError("--config is required for this subcommand");
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed) cfg.train.seed = *args.seed;
    set_max_threads(cfg.threads);
    return cfg;
}

bool cache_is_fresh(const fs::path& target, const fs::path& wav, bool force) {
    if (force || !fs::exists(target)) return false;
    return !(fs::exists(wav) && fs::last_write_time(wav) > fs::last_write_time(target));
}

/// Cached features for one manifest entry; extracts and stores them when the
/// cache file is missing or stale.
FeatureMatrix cached_features(const RunConfig& cfg, const WeakManifestEntry& entry, bool force) {
    const fs::path target = cfg.feature_path(entry.id);
    const fs::path wav = cfg.audio_root / entry.path;
    if (cache_is_fresh(target, wav, force))
        return load_features(target, cfg.features.hop_seconds(), entry.id);
    AudioClip clip = decode_wav(wav);
    clip.id = entry.id;
    FeatureMatrix fm = extract_logmel(clip, cfg.features);
    fs::create_directories(cfg.feature_dir);
    save_features(target, fm);
    return fm;
}

std::vector<Bag> load_bags(const RunConfig& cfg, const fs::path& manifest) {
    const auto entries = load_weak_manifest(manifest);
    const auto labels = apply_label_map(entries, cfg.label_map);
    std::vector<Bag> bags;
    bags.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Bag bag;
        bag.features = cached_features(cfg, entries[i], false);
        bag.label = labels[i].second;
        bag.id = entries[i].id;
        bags.push_back(std::move(bag));
    }
    return bags;
}

StrongAnnotation annotation_for(const std::vector<StrongAnnotation>& annotations,
                                const std::string& id) {
    for (const StrongAnnotation& a : annotations) {
        if (a.id == id) return a;
    }
    return StrongAnnotation{id, {}};
}

int cmd_features(const GlobalArgs& args) {
    const RunConfig cfg = load_config(args);
    const auto entries = load_weak_manifest(cfg.weak_manifest);
    std::size_t written = 0, skipped = 0;
    for (const WeakManifestEntry& entry : entries) {
        const fs::path target = cfg.feature_path(entry.id);
        const fs::path wav = cfg.audio_root / entry.path;
        if (cache_is_fresh(target, wav, args.force)) {
            ++skipped;
            continue;
        }
        try {
            AudioClip clip = decode_wav(wav);
            clip.id = entry.id;
            fs::create_directories(cfg.feature_dir);
            save_features(target, extract_logmel(clip, cfg.features));
            ++written;
        } catch (const Error& e) {
            throw DataError("recording '" + entry.id + "': " + e.what());
        }
    }
    std::cout << "features: " << written << " written, " << skipped << " up to date\n";
    return 0;
}

int cmd_train(const GlobalArgs& args) {
    const RunConfig cfg = load_config(args);
    std::vector<Bag> bags = load_bags(cfg, cfg.weak_manifest);

    std::optional<ValidationSet> validation;
    if (!cfg.val_manifest.empty()) {
        ValidationSet val;
        val.bags = load_bags(cfg, cfg.val_manifest);
        const auto annotations = load_strong_annotations(cfg.val_strong);
        for (const Bag& bag : val.bags) {
            const StrongAnnotation ann = annotation_for(annotations, bag.id);
            val.truth.push_back(LabelledFrames{
                bag.id, frames_from_annotation(ann, bag.features.t(), bag.features.frame_hop_seconds)});
        }
        validation = std::move(val);
    }

    ModelParams params = init_params(cfg.model, cfg.train.seed);
    const TrainResult result = train(params, bags, validation, cfg.train, cfg.output_dir);
    std::cout << "final checkpoint: " << result.final_checkpoint.string() << '\n';
    if (!result.best_checkpoint.empty())
        std::cout << "best checkpoint: " << result.best_checkpoint.string() << " (f1 " << result.best_f1
                  << " at epoch " << result.best_epoch << ")\n";
    std::cout << "metric log: " << (cfg.output_dir / "metrics.csv").string() << '\n';
    return 0;
}

int cmd_predict(const GlobalArgs& args, const std::string& checkpoint,
                const std::string& manifest_override) {
    const RunConfig cfg = load_config(args);
    if (checkpoint.empty()) throw ConfigError("--checkpoint is required for predict");
    const fs::path manifest =
        manifest_override.empty() ? cfg.predict_manifest : fs::path(manifest_override);
    if (manifest.empty())
        throw ConfigError("predict needs a manifest (config key 'predict_manifest' or --manifest)");

    ModelParams params = load_checkpoint(checkpoint, cfg.model);
    const auto entries = load_weak_manifest(manifest);
    const fs::path pred_dir = cfg.output_dir / "predictions";
    fs::create_directories(pred_dir);
    std::ofstream trans(cfg.output_dir / "transcriptions.csv");
    if (!trans) throw DataError("cannot write transcriptions under " + cfg.output_dir.string());
    trans << "id,onset,offset\n";

    char buf[64];
    for (const WeakManifestEntry& entry : entries) {
        const FeatureMatrix fm = cached_features(cfg, entry, false);
        const FramePredictions preds = predict_frames(params, fm);
        std::ofstream out(pred_dir / (entry.id + ".csv"));
        if (!out) throw DataError("cannot write predictions for '" + entry.id + "'");
        out << "frame,score\n";
        for (Eigen::Index j = 0; j < preds.o.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", preds.o[j]);
            out << j << ',' << buf << '\n';
        }
        for (const auto& [onset, offset] :
             transcription_export(preds, fm.frame_hop_seconds, cfg.train.threshold)) {
            std::snprintf(buf, sizeof(buf), "%.6f", onset);
            trans << entry.id << ',' << buf;
            std::snprintf(buf, sizeof(buf), "%.6f", offset);
            trans << ',' << buf << '\n';
        }
    }
    std::cout << "predictions: " << pred_dir.string() << '\n';
    std::cout << "transcriptions: " << (cfg.output_dir / "transcriptions.csv").string() << '\n';
    return 0;
}

Eigen::VectorXd read_prediction_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open prediction file: " + path.string());
    std::vector<double> scores;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (row == 1 && line.rfind("frame,", 0) == 0) continue;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw FormatError(path.string() + ":" + std::to_string(row) + ": expected frame,score");
        scores.push_back(std::stod(line.substr(comma + 1)));
    }
    Eigen::VectorXd o(static_cast<Eigen::Index>(scores.size()));
    for (std::size_t i = 0; i < scores.size(); ++i) o[static_cast<Eigen::Index>(i)] = scores[i];
    return o;
}

int cmd_eval(const GlobalArgs& args, const std::string& predictions_dir,
             const std::string& strong_override, const std::string& manifest_override) {
    const RunConfig cfg = load_config(args);
    const fs::path pred_dir =
        predictions_dir.empty() ? cfg.output_dir / "predictions" : fs::path(predictions_dir);
    const fs::path strong = strong_override.empty() ? cfg.val_strong : fs::path(strong_override);
    const fs::path manifest =
        manifest_override.empty() ? cfg.predict_manifest : fs::path(manifest_override);
    if (strong.empty()) throw ConfigError("eval needs strong annotations ('val_strong' or --strong)");
    if (manifest.empty()) throw ConfigError("eval needs a manifest ('predict_manifest' or --manifest)");

    const auto entries = load_weak_manifest(manifest);
    const auto annotations = load_strong_annotations(strong);
    std::vector<LabelledFrames> predicted, truth;
    for (const WeakManifestEntry& entry : entries) {
        FramePredictions preds;
        preds.o = read_prediction_csv(pred_dir / (entry.id + ".csv"));
        preds.bag_id = entry.id;
        predicted.push_back(LabelledFrames{entry.id, threshold(preds, cfg.train.threshold)});
        const StrongAnnotation ann = annotation_for(annotations, entry.id);
        truth.push_back(LabelledFrames{
            entry.id, frames_from_annotation(ann, preds.o.size(), cfg.features.hop_seconds())});
    }
    const EvalReport report = frame_metrics(predicted, truth);
    fs::create_directories(cfg.output_dir);
    write_report_csv(cfg.output_dir / "eval_report.csv", report);
    std::cout << report_text(report);
    std::cout << "report: " << (cfg.output_dir / "eval_report.csv").string() << '\n';
    return 0;
}

/// Reads `epoch,train_loss,val_precision,val_recall,val_f1` and keeps the
/// epochs that carry a validation F1.
CurveSeries read_metric_log(const fs::path& path, const std::string& label) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open metric log: " + path.string());
    CurveSeries series;
    series.label = label;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (row == 1 && line.rfind("epoch,", 0) == 0) continue;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream is(line);
        std::string f;
        while (std::getline(is, f, ',')) fields.push_back(f);
        while (fields.size() < 5) fields.emplace_back();
        if (fields[4].empty()) continue;
        series.points.emplace_back(std::stol(fields[0]), std::stod(fields[4]));
    }
    return series;
}

int cmd_plot(const std::vector<std::string>& logs, const std::string& labels_csv,
             const std::string& csv_out, const std::string& svg_out) {
    if (logs.empty()) throw ConfigError("plot needs at least one metric log");
    std::vector<std::string> labels;
    std::istringstream is(labels_csv);
    std::string item;
    while (std::getline(is, item, ',')) labels.push_back(item);
    std::vector<CurveSeries> series;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const fs::path p(logs[i]);
        std::string label = i < labels.size() ? labels[i] : p.parent_path().filename().string();
        if (label.empty()) label = p.stem().string();
        series.push_back(read_metric_log(p, label));
    }
    curve_emit(series, csv_out, svg_out);
    std::cout << "curves: " << csv_out << ' ' << svg_out << '\n';
    return 0;
}

int cmd_synth(const GlobalArgs& args, SynthConfig synth, const std::string& out_dir,
              const std::string& snr_csv) {
    if (out_dir.empty()) throw ConfigError("--out is required for synth");
    if (args.seed) synth.seed = *args.seed;
    if (!snr_csv.empty()) {
        synth.burst_snrs_db.clear();
        std::istringstream is(snr_csv);
        std::string item;
        while (std::getline(is, item, ',')) synth.burst_snrs_db.push_back(std::stod(item));
    }
    const SynthCorpus corpus = generate_corpus(out_dir, synth);
    std::cout << "corpus: " << corpus.root.string() << '\n';
    std::cout << "weak manifest: " << corpus.weak_manifest.string() << '\n';
    std::cout << "strong annotations: " << corpus.strong_csv.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly supervised sound event detection toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs global;
    app.add_option("--config", global.config_path, "run config file");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
    app.add_flag("--force", global.force, "rebuild outputs that look up to date");

    app.add_subcommand("features", "extract and cache log mel features for the training manifest");
    app.add_subcommand("train", "train a detector with the configured loss");

    auto* predict = app.add_subcommand("predict", "write per-frame scores and transcriptions");
    std::string checkpoint, manifest_override;
    predict->add_option("--checkpoint", checkpoint, "checkpoint file");
    predict->add_option("--manifest", manifest_override, "manifest to predict (default from config)");

    auto* eval_cmd = app.add_subcommand("eval", "score predictions against strong annotations");
    std::string predictions_dir, strong_override, eval_manifest;
    eval_cmd->add_option("--predictions", predictions_dir, "directory of per-recording score CSVs");
    eval_cmd->add_option("--strong", strong_override, "strong annotation CSV");
    eval_cmd->add_option("--manifest", eval_manifest, "manifest to score (default from config)");

    auto* plot = app.add_subcommand("plot", "render F1-vs-epoch curves from metric logs");
    std::vector<std::string> plot_logs;
    std::string plot_labels, plot_csv = "f1_curves.csv", plot_svg = "f1_curves.svg";
    plot->add_option("logs", plot_logs, "metric log CSVs");
    plot->add_option("--labels", plot_labels, "comma-separated series labels");
    plot->add_option("--csv", plot_csv, "output CSV path");
    plot->add_option("--svg", plot_svg, "output SVG path");

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic tone-burst corpus");
    SynthConfig synth;
    std::string synth_out, synth_snrs;
    synth_cmd->add_option("--out", synth_out, "corpus output directory");
    synth_cmd->add_option("--pos", synth.n_pos, "positive clip count");
    synth_cmd->add_option("--neg", synth.n_neg, "negative clip count");
    synth_cmd->add_option("--seconds", synth.seconds, "clip length in seconds");
    synth_cmd->add_option("--sr", synth.sample_rate, "sample rate");
    synth_cmd->add_option("--burst-snrs", synth_snrs, "comma-separated burst SNRs in dB");
    synth_cmd->add_option("--burst-min", synth.burst_min_s, "minimum burst length (s)");
    synth_cmd->add_option("--burst-max", synth.burst_max_s, "maximum burst length (s)");
    synth_cmd->add_option("--noise-rms", synth.noise_rms, "background noise RMS");
    synth_cmd->add_option("--label", synth.positive_label, "raw label for positive clips");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*seed_opt) global.seed = seed_value;
    try {
        if (app.got_subcommand("features")) return cmd_features(global);
        if (app.got_subcommand("train")) return cmd_train(global);
        if (app.got_subcommand("predict")) return cmd_predict(global, checkpoint, manifest_override);
        if (app.got_subcommand("eval"))
            return cmd_eval(global, predictions_dir, strong_override, eval_manifest);
        if (app.got_subcommand("plot")) return cmd_plot(plot_logs, plot_labels, plot_csv, plot_svg);
        if (app.got_subcommand("synth")) return cmd_synth(global, synth, synth_out, synth_snrs);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
