#include "wsed/features.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "wsed/error.hpp"

namespace wsed {

namespace {

// Slaney mel scale: linear below 1 kHz, logarithmic above.
constexpr double kLinHzPerMel = 200.0 / 3.0;
constexpr double kLogBreakHz = 1000.0;
constexpr double kLogBreakMel = kLogBreakHz / kLinHzPerMel; // 15
const double kLogStep = std::log(6.4) / 27.0;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& name) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("truncated feature file: " + name);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

double hz_to_mel(double hz) {
    if (hz < kLogBreakHz) return hz / kLinHzPerMel;
    return kLogBreakMel + std::log(hz / kLogBreakHz) / kLogStep;
}

double mel_to_hz(double mel) {
    if (mel < kLogBreakMel) return mel * kLinHzPerMel;
    return kLogBreakHz * std::exp(kLogStep * (mel - kLogBreakMel));
}

RowMatrix stft_power(const AudioClip& clip, Index window, Index hop) {
    if (window < 2) throw ContractError("stft_power: window must be >= 2 samples");
    if (hop < 1) throw ContractError("stft_power: hop must be >= 1 sample");
    const Index length = clip.samples.size();
    if (length < window)
        throw ContractError("stft_power: clip '" + clip.id + "' has " + std::to_string(length) +
                            " samples, shorter than one window of " + std::to_string(window));

    const Index t_count = frame_count(length, window, hop);
    const Index k_bins = window / 2 + 1;
    RowMatrix power(t_count, k_bins);

    // Periodic Hamming window.
    Eigen::VectorXd ham(window);
    for (Index i = 0; i < window; ++i)
        ham[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / static_cast<double>(window));

    Eigen::FFT<double> fft;
    std::vector<double> frame(static_cast<std::size_t>(window));
    std::vector<std::complex<double>> spectrum;
    const double inv_n = 1.0 / static_cast<double>(window);
    const bool even = window % 2 == 0;
    for (Index t = 0; t < t_count; ++t) {
        const double* src = clip.samples.data() + t * hop;
        for (Index i = 0; i < window; ++i) frame[static_cast<std::size_t>(i)] = src[i] * ham[i];
        fft.fwd(spectrum, frame);
        for (Index k = 0; k < k_bins; ++k) {
            const double mag2 = std::norm(spectrum[static_cast<std::size_t>(k)]);
            // Interior bins carry their conjugate pair so rows obey Parseval.
            const bool paired = k != 0 && !(even && k == k_bins - 1);
            power(t, k) = (paired ? 2.0 : 1.0) * mag2 * inv_n;
        }
    }
    return power;
}

RowMatrix mel_filterbank(int sample_rate, Index n_fft, Index n_mels, double fmin, double fmax) {
    const double nyquist = sample_rate / 2.0;
    if (n_mels < 1) throw ContractError("mel_filterbank: n_mels must be >= 1");
    if (fmin < 0.0 || fmin >= fmax)
        throw ContractError("mel_filterbank: need 0 <= fmin < fmax, got fmin=" + std::to_string(fmin) +
                            " fmax=" + std::to_string(fmax));
    if (fmax > nyquist + 1e-9)
        throw ContractError("mel_filterbank: fmax " + std::to_string(fmax) + " exceeds Nyquist " +
                            std::to_string(nyquist));

    const Index k_bins = n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(fmin);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> hz_pts(static_cast<std::size_t>(n_mels + 2));
    for (Index i = 0; i < n_mels + 2; ++i) {
        const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (n_mels + 1);
        hz_pts[static_cast<std::size_t>(i)] = mel_to_hz(mel);
    }

    RowMatrix weights = RowMatrix::Zero(n_mels, k_bins);
    for (Index m = 0; m < n_mels; ++m) {
        const double lo = hz_pts[static_cast<std::size_t>(m)];
        const double mid = hz_pts[static_cast<std::size_t>(m + 1)];
        const double hi = hz_pts[static_cast<std::size_t>(m + 2)];
        const double norm = 2.0 / (hi - lo); // area normalization
        for (Index k = 0; k < k_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
            const double rising = (f - lo) / (mid - lo);
            const double falling = (hi - f) / (hi - mid);
            const double w = std::min(rising, falling);
            if (w > 0.0) weights(m, k) = w * norm;
        }
    }
    return weights;
}

Eigen::VectorXd mel_center_frequencies(int sample_rate, Index n_mels, double fmin, double fmax) {
    const double nyquist = sample_rate / 2.0;
    if (fmax > nyquist + 1e-9) throw ContractError("mel_center_frequencies: fmax exceeds Nyquist");
    const double mel_lo = hz_to_mel(fmin);
    const double mel_hi = hz_to_mel(fmax);
    Eigen::VectorXd centers(n_mels);
    for (Index m = 0; m < n_mels; ++m)
        centers[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m + 1) / (n_mels + 1));
    return centers;
}

FeatureMatrix extract_logmel(const AudioClip& clip, const FeatureConfig& config) {
    if (clip.sample_rate != config.sample_rate)
        throw DataError("recording '" + clip.id + "' has sample rate " +
                        std::to_string(clip.sample_rate) + ", config expects " +
                        std::to_string(config.sample_rate) + " (resampling not supported)");
    const RowMatrix power = stft_power(clip, config.window, config.hop);
    const RowMatrix filters = mel_filterbank(config.sample_rate, config.window, config.n_mels,
                                             config.fmin, config.resolved_fmax());
    FeatureMatrix fm;
    fm.frames = ((power * filters.transpose()).array() + config.log_floor).log();
    fm.frame_hop_seconds = config.hop_seconds();
    fm.id = clip.id;
    return fm;
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& fm) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write feature file: " + path.string());
    out.write("WSMF", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(fm.t()));
    write_u32(out, static_cast<std::uint32_t>(fm.f()));
    std::vector<float> row(static_cast<std::size_t>(fm.f()));
    for (Index t = 0; t < fm.t(); ++t) {
        for (Index j = 0; j < fm.f(); ++j) row[static_cast<std::size_t>(j)] = static_cast<float>(fm.frames(t, j));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw DataError("short write to feature file: " + path.string());
}

FeatureMatrix load_features(const std::filesystem::path& path, double hop_seconds,
                            const std::string& id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "WSMF", 4) != 0)
        throw FormatError("bad magic in feature file: " + path.string());
    const std::uint32_t version = read_u32(in, path.string());
    if (version != 1)
        throw FormatError("unsupported feature file version " + std::to_string(version) + ": " +
                          path.string());
    const std::uint32_t t_count = read_u32(in, path.string());
    const std::uint32_t f_count = read_u32(in, path.string());
    if (t_count == 0 || f_count == 0) throw FormatError("empty feature file: " + path.string());

    FeatureMatrix fm;
    fm.frames.resize(t_count, f_count);
    fm.frame_hop_seconds = hop_seconds;
    fm.id = id;
    std::vector<float> row(f_count);
    for (std::uint32_t t = 0; t < t_count; ++t) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw FormatError("truncated feature file: " + path.string());
        for (std::uint32_t j = 0; j < f_count; ++j) fm.frames(t, j) = row[j];
    }
    return fm;
}

void export_features_csv(const std::filesystem::path& path, const FeatureMatrix& fm) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write CSV file: " + path.string());
    char buf[32];
    for (Index t = 0; t < fm.t(); ++t) {
        for (Index j = 0; j < fm.f(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", fm.frames(t, j));
            out << buf << (j + 1 < fm.f() ? "," : "");
        }
        out << '\n';
    }
}

} // namespace wsed
