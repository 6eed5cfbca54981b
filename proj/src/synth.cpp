#include "wsed/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "wsed/audio.hpp"
#include "wsed/error.hpp"
#include "wsed/rng.hpp"

namespace wsed {

namespace {

constexpr double kEdgeRampSeconds = 0.01;

struct Burst {
    double onset, offset, freq, amplitude;
};

void add_burst(Eigen::VectorXd& samples, const Burst& b, int sample_rate, Rng& rng) {
    const auto lo = static_cast<Eigen::Index>(std::floor(b.onset * sample_rate));
    const auto hi = std::min<Eigen::Index>(samples.size(),
                                           static_cast<Eigen::Index>(std::floor(b.offset * sample_rate)));
    const double ramp = kEdgeRampSeconds * sample_rate;
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (Eigen::Index i = lo; i < hi; ++i) {
        const double head = static_cast<double>(i - lo);
        const double tail = static_cast<double>(hi - 1 - i);
        double env = 1.0;
        if (head < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * head / ramp));
        if (tail < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * tail / ramp));
        samples[i] += b.amplitude * env *
                      std::sin(phase + 2.0 * M_PI * b.freq * static_cast<double>(i) / sample_rate);
    }
}

} // namespace

SynthCorpus generate_corpus(const std::filesystem::path& out_dir, const SynthConfig& cfg) {
    if (cfg.n_pos < 0 || cfg.n_neg < 0 || cfg.n_pos + cfg.n_neg == 0)
        throw ContractError("generate_corpus: need at least one clip");
    if (cfg.seconds <= 0.0 || cfg.sample_rate <= 0)
        throw ContractError("generate_corpus: invalid clip geometry");
    if (cfg.burst_snrs_db.empty())
        throw ContractError("generate_corpus: positive clips need at least one burst SNR");
    if (!(cfg.burst_min_s > 0.0 && cfg.burst_min_s <= cfg.burst_max_s))
        throw ContractError("generate_corpus: invalid burst duration range");
    const double nyquist = cfg.sample_rate / 2.0;
    if (!(cfg.freq_min_hz > 0.0 && cfg.freq_min_hz <= cfg.freq_max_hz && cfg.freq_max_hz < nyquist))
        throw ContractError("generate_corpus: burst frequencies must lie below Nyquist");
    const auto n_bursts = cfg.burst_snrs_db.size();
    if (static_cast<double>(n_bursts) * cfg.burst_max_s > cfg.seconds)
        throw ContractError("generate_corpus: bursts do not fit in the clip");

    SynthCorpus corpus;
    corpus.root = out_dir;
    corpus.wav_dir = out_dir / "wavs";
    corpus.weak_manifest = out_dir / "weak.csv";
    corpus.strong_csv = out_dir / "strong.csv";
    std::filesystem::create_directories(corpus.wav_dir);

    std::ofstream weak(corpus.weak_manifest);
    std::ofstream strong(corpus.strong_csv);
    if (!weak || !strong) throw DataError("cannot write corpus manifests under " + out_dir.string());
    weak << "id,path,labels\n";
    strong << "id,onset,offset\n";

    Rng rng(cfg.seed);
    const auto n_samples = static_cast<Eigen::Index>(std::llround(cfg.seconds * cfg.sample_rate));
    const int total = cfg.n_pos + cfg.n_neg;
    char buf[64];
    for (int clip_idx = 0; clip_idx < total; ++clip_idx) {
        const bool positive = clip_idx < cfg.n_pos;
        std::snprintf(buf, sizeof(buf), "%s%04d", positive ? "pos" : "neg",
                      positive ? clip_idx : clip_idx - cfg.n_pos);
        const std::string id = buf;

        Eigen::VectorXd samples(n_samples);
        for (Eigen::Index i = 0; i < n_samples; ++i) samples[i] = cfg.noise_rms * rng.normal();

        if (positive) {
            // One burst per SNR entry, each confined to its own slot so
            // events never overlap and truth intervals stay exact.
            const double slot = cfg.seconds / static_cast<double>(n_bursts);
            for (std::size_t k = 0; k < n_bursts; ++k) {
                Burst b;
                const double len = rng.uniform(cfg.burst_min_s, std::min(cfg.burst_max_s, slot));
                const double slack = slot - len;
                b.onset = slot * static_cast<double>(k) + rng.uniform(0.0, slack);
                b.offset = b.onset + len;
                b.freq = rng.uniform(cfg.freq_min_hz, cfg.freq_max_hz);
                // SNR against the noise power; a sine at amplitude a has power a^2/2.
                b.amplitude = cfg.noise_rms * std::sqrt(2.0) *
                              std::pow(10.0, cfg.burst_snrs_db[k] / 20.0);
                add_burst(samples, b, cfg.sample_rate, rng);
                std::snprintf(buf, sizeof(buf), "%.6f", b.onset);
                strong << id << ',' << buf;
                std::snprintf(buf, sizeof(buf), "%.6f", b.offset);
                strong << ',' << buf << '\n';
            }
        }
        const std::string wav_name = id + ".wav";
        write_wav_pcm16(corpus.wav_dir / wav_name, samples, cfg.sample_rate);
        weak << id << ",wavs/" << wav_name << ',' << (positive ? cfg.positive_label : "") << '\n';
    }
    if (!weak || !strong) throw DataError("short write to corpus manifests under " + out_dir.string());
    return corpus;
}

} // namespace wsed
