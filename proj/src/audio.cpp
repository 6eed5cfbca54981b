#include "wsed/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "wsed/error.hpp"

namespace wsed {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatIeeeFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

} // namespace

AudioClip decode_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open WAV file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    const std::string name = path.string();
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError("malformed RIFF header in " + name);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::size_t data_off = 0, data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t chunk_len = read_u32(bytes.data() + pos + 4);
        const unsigned char* tag = bytes.data() + pos;
        const std::size_t body = pos + 8;
        if (body + chunk_len > bytes.size())
            throw FormatError("truncated chunk in " + name);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw FormatError("short fmt chunk in " + name);
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
            if (format == kFormatExtensible) {
                if (chunk_len < 40) throw FormatError("short extensible fmt chunk in " + name);
                format = read_u16(bytes.data() + body + 24); // subformat GUID prefix
            }
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data_off = body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1); // chunks are word-aligned
    }

    if (!have_fmt || data_off == 0) throw FormatError("missing fmt/data chunk in " + name);
    if (channels == 0 || rate == 0) throw FormatError("invalid fmt fields in " + name);
    if (format != kFormatPcm && format != kFormatIeeeFloat)
        throw UnsupportedError("unsupported WAV codec tag " + std::to_string(format) + " in " + name);
    if (format == kFormatIeeeFloat && bits != 32)
        throw UnsupportedError("unsupported float width " + std::to_string(bits) + " in " + name);
    if (format == kFormatPcm && bits != 8 && bits != 16 && bits != 24 && bits != 32)
        throw UnsupportedError("unsupported PCM width " + std::to_string(bits) + " in " + name);

    const std::size_t bytes_per_sample = bits / 8;
    const std::size_t frame_bytes = bytes_per_sample * channels;
    if (frame_bytes == 0 || data_len % frame_bytes != 0)
        throw FormatError("data chunk not a whole number of frames in " + name);
    const std::size_t frames = data_len / frame_bytes;
    if (frames == 0) throw FormatError("empty data chunk in " + name);

    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.id = path.stem().string();
    clip.samples.resize(static_cast<Eigen::Index>(frames));

    const unsigned char* d = bytes.data() + data_off;
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t ch = 0; ch < channels; ++ch) {
            const unsigned char* s = d + (i * channels + ch) * bytes_per_sample;
            double v = 0.0;
            switch (bits) {
            case 8: // unsigned
                v = (static_cast<int>(s[0]) - 128) / 128.0;
                break;
            case 16: {
                const auto x = static_cast<std::int16_t>(s[0] | (s[1] << 8));
                v = x / 32768.0;
                break;
            }
            case 24: {
                std::int32_t x = s[0] | (s[1] << 8) | (s[2] << 16);
                if (x & 0x800000) x |= ~0xFFFFFF;
                v = x / 8388608.0;
                break;
            }
            case 32:
                if (format == kFormatPcm) {
                    std::int32_t x;
                    std::memcpy(&x, s, 4);
                    v = x / 2147483648.0;
                } else {
                    float f;
                    std::memcpy(&f, s, 4);
                    v = std::clamp(static_cast<double>(f), -1.0, 1.0);
                }
                break;
            default:
                break;
            }
            acc += v;
        }
        clip.samples[static_cast<Eigen::Index>(i)] = acc / channels;
    }
    return clip;
}

void write_wav_pcm16(const std::filesystem::path& path, const Eigen::VectorXd& samples,
                     int sample_rate) {
    if (sample_rate <= 0) throw ContractError("write_wav_pcm16: sample_rate must be positive");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write WAV file: " + path.string());

    const std::uint32_t n = static_cast<std::uint32_t>(samples.size());
    const std::uint32_t data_len = n * 2;
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    auto put_u16 = [&](std::uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
        out.write(reinterpret_cast<char*>(b), 2);
    };

    out.write("RIFF", 4);
    put_u32(36 + data_len);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(16);
    put_u16(kFormatPcm);
    put_u16(1); // mono
    put_u32(static_cast<std::uint32_t>(sample_rate));
    put_u32(static_cast<std::uint32_t>(sample_rate) * 2);
    put_u16(2);
    put_u16(16);
    out.write("data", 4);
    put_u32(data_len);
    for (Eigen::Index i = 0; i < samples.size(); ++i) {
        const double v = std::clamp(samples[i], -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::lrint(v * 32767.0));
        put_u16(static_cast<std::uint16_t>(q));
    }
    if (!out) throw DataError("short write to WAV file: " + path.string());
}

} // namespace wsed
