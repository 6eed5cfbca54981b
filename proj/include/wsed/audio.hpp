#ifndef WSED_AUDIO_HPP
#define WSED_AUDIO_HPP

#include <Eigen/Dense>

#include <filesystem>
#include <string>

namespace wsed {

/// One decoded recording: mono samples normalized to [-1, 1].
struct AudioClip {
    Eigen::VectorXd samples;
    int sample_rate = 0;
    std::string id;

    double seconds() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

/// Decodes a PCM WAV file (8/16/24/32-bit integer or 32-bit float, mono or
/// multichannel). Multichannel input is averaged to mono; integer samples are
/// scaled to [-1, 1]. The clip id defaults to the file stem.
/// Throws FormatError on malformed RIFF data and UnsupportedError on
/// unsupported codecs.
AudioClip decode_wav(const std::filesystem::path& path);

/// Writes mono samples as 16-bit PCM; values are clamped to [-1, 1] first.
void write_wav_pcm16(const std::filesystem::path& path, const Eigen::VectorXd& samples,
                     int sample_rate);

} // namespace wsed

#endif
