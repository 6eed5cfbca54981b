#ifndef WSED_SYNTH_HPP
#define WSED_SYNTH_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wsed {

/// Synthetic corpus: positive clips are white noise plus one tone burst per
/// configured SNR (random frequency, duration and position); negative clips
/// are pure noise. Burst intervals are written as exact strong labels, so
/// ground truth is known by construction.
struct SynthConfig {
    int n_pos = 40;
    int n_neg = 40;
    double seconds = 5.0;
    int sample_rate = 44100;
    std::vector<double> burst_snrs_db{20.0, 8.0};
    double burst_min_s = 0.4;
    double burst_max_s = 1.2;
    double freq_min_hz = 500.0;
    double freq_max_hz = 8000.0;
    double noise_rms = 0.05;
    std::uint64_t seed = 7;
    std::string positive_label = "tone";
};

struct SynthCorpus {
    std::filesystem::path root;
    std::filesystem::path wav_dir;
    std::filesystem::path weak_manifest; // weak.csv
    std::filesystem::path strong_csv;    // strong.csv
};

SynthCorpus generate_corpus(const std::filesystem::path& out_dir, const SynthConfig& config);

} // namespace wsed

#endif
