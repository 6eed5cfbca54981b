#ifndef WSED_FEATURES_HPP
#define WSED_FEATURES_HPP

#include <filesystem>
#include <string>

#include "wsed/audio.hpp"
#include "wsed/tensor.hpp"

namespace wsed {

/// Feature extraction settings. Defaults give ~23 ms windows with 50% overlap
/// at 44.1 kHz and 40 mel bands over the full band.
struct FeatureConfig {
    int sample_rate = 44100;
    Index window = 1014;
    Index hop = 507;
    Index n_mels = 40;
    double fmin = 0.0;
    double fmax = 0.0; // 0 -> sample_rate / 2
    double log_floor = 1e-10;

    double resolved_fmax() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
    double hop_seconds() const { return static_cast<double>(hop) / sample_rate; }
};

/// T x F matrix of log mel-band energies for one recording.
struct FeatureMatrix {
    RowMatrix frames;
    double frame_hop_seconds = 0.0;
    std::string id;

    Index t() const { return frames.rows(); }
    Index f() const { return frames.cols(); }
};

/// Frame count produced by the framing formula for a given signal length.
inline Index frame_count(Index length, Index window, Index hop) {
    return length < window ? 0 : 1 + (length - window) / hop;
}

/// Power spectrogram: row t holds |DFT(hamming . frame_t)|^2 / window for
/// bins 0..window/2, with interior bins doubled so that each row sums to the
/// windowed frame energy (Parseval). No center padding.
RowMatrix stft_power(const AudioClip& clip, Index window, Index hop);

/// n_mels x (n_fft/2 + 1) triangular filters with breakpoints uniformly
/// spaced on the Slaney mel scale, area-normalized (2 / bandwidth).
RowMatrix mel_filterbank(int sample_rate, Index n_fft, Index n_mels, double fmin, double fmax);

/// Log mel-band energies: ln(power . filters^T + floor), rowwise.
/// Rejects clips whose sample rate differs from the configured rate
/// (resampling is out of scope).
FeatureMatrix extract_logmel(const AudioClip& clip, const FeatureConfig& config);

/// Center frequencies (filter peaks) in Hz; strictly increasing.
Eigen::VectorXd mel_center_frequencies(int sample_rate, Index n_mels, double fmin, double fmax);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// -- feature file format -------------------------------------------------------
// magic "WSMF", u32 version=1, u32 T, u32 F, then T*F little-endian f32
// values row-major.

void save_features(const std::filesystem::path& path, const FeatureMatrix& fm);
FeatureMatrix load_features(const std::filesystem::path& path, double hop_seconds,
                            const std::string& id);

/// Plain CSV (one frame per row) for debugging.
void export_features_csv(const std::filesystem::path& path, const FeatureMatrix& fm);

} // namespace wsed

#endif
