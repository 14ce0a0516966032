#pragma once

// RIFF/WAVE reading (PCM16 or float32, any rate and channel count) and float32
// mono writing. Reads are downmixed by averaging and resampled with a
// Kaiser-windowed sinc. Writes go through a temp file and a rename.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "tractmatch/dsp_core.hpp"
#include "tractmatch/error.hpp"

namespace tractmatch {

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

// zeroth-order modified Bessel function, power series
inline double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    for (int k = 1; k < 50; ++k) {
        term *= (x / (2.0 * k)) * (x / (2.0 * k));
        sum += term;
        if (term < 1e-17 * sum) break;
    }
    return sum;
}

}  // namespace detail

/// Band-limited resampling. Output length is round(n * to / from).
inline AudioBuffer resample(const AudioBuffer& in, double to_rate, int half_taps = 32, double beta = 8.6) {
    if (!(to_rate > 0.0) || !(in.sample_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "sample rates must be positive");
    if (in.sample_rate == to_rate) return in;
    const double ratio = to_rate / in.sample_rate;
    const auto n_out = static_cast<std::size_t>(std::lround(static_cast<double>(in.size()) * ratio));
    const double cutoff = std::min(1.0, ratio) * 0.95;  // relative to input Nyquist
    const double i0b = detail::bessel_i0(beta);
    const double span = half_taps / cutoff;              // kernel half-width, input samples
    AudioBuffer out{std::vector<double>(n_out, 0.0), to_rate};
    const auto n_in = static_cast<std::ptrdiff_t>(in.size());
    for (std::size_t m = 0; m < n_out; ++m) {
        const double t = static_cast<double>(m) / ratio;
        const auto lo = static_cast<std::ptrdiff_t>(std::ceil(t - span));
        const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + span));
        double acc = 0.0;
        for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(lo, 0); k <= std::min(hi, n_in - 1); ++k) {
            const double x = static_cast<double>(k) - t;
            const double arg = cutoff * x;
            const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
            const double r = x / span;
            const double w = detail::bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
            acc += in.samples[static_cast<std::size_t>(k)] * cutoff * sinc * w;
        }
        out.samples[m] = acc;
    }
    return out;
}

/// Parses WAV bytes into a mono buffer at the file's own rate.
inline AudioBuffer parse_wav(const std::string& bytes, const std::string& name = "<memory>") {
    auto bad = [&](const std::string& what) { return Error(ErrorKind::Io, name + ": malformed WAV, " + what); };
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw bad("missing RIFF/WAVE header");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = p + pos;
        const std::uint32_t size = detail::le32(chunk + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16 || body + 16 > bytes.size()) throw bad("truncated fmt chunk");
            format = detail::le16(p + body);
            channels = detail::le16(p + body + 2);
            rate = detail::le32(p + body + 4);
            bits = detail::le16(p + body + 14);
            if (format == 0xFFFE && size >= 40 && body + 26 <= bytes.size()) format = detail::le16(p + body + 24);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = p + body;
            data_size = std::min<std::size_t>(size, bytes.size() - body);
            break;
        }
        pos = body + size + (size & 1u);
    }
    if (!have_fmt) throw bad("no fmt chunk");
    if (!data) throw bad("no data chunk");
    if (channels == 0) throw bad("zero channels");
    if (rate == 0) throw bad("zero sample rate");

    const bool pcm16 = format == 1 && bits == 16;
    const bool float32 = format == 3 && bits == 32;
    if (!pcm16 && !float32)
        throw Error(ErrorKind::Io, name + ": unsupported WAV codec (format " + std::to_string(format) + ", " +
                                       std::to_string(bits) + " bits); need PCM16 or float32");

    const std::size_t width = bits / 8;
    const std::size_t frames = data_size / (width * channels);
    AudioBuffer out{std::vector<double>(frames, 0.0), static_cast<double>(rate)};
    for (std::size_t i = 0; i < frames; ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char* s = data + (i * channels + c) * width;
            if (pcm16) {
                sum += static_cast<std::int16_t>(detail::le16(s)) / 32768.0;
            } else {
                const std::uint32_t u = detail::le32(s);
                float f;
                std::memcpy(&f, &u, sizeof f);
                sum += f;
            }
        }
        out.samples[i] = sum / channels;
    }
    return out;
}

/// Reads a WAV file as mono at `target_rate`.
inline AudioBuffer wav_read(const std::filesystem::path& path, double target_rate = 48000.0) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return resample(parse_wav(bytes, path.string()), target_rate);
}

inline std::string encode_wav(const AudioBuffer& audio) {
    const auto rate = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
    const auto data_size = static_cast<std::uint32_t>(audio.size() * 4);
    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    detail::put32(out, 36 + data_size);
    out += "WAVEfmt ";
    detail::put32(out, 16);
    detail::put16(out, 3);  // IEEE float
    detail::put16(out, 1);
    detail::put32(out, rate);
    detail::put32(out, rate * 4);
    detail::put16(out, 4);
    detail::put16(out, 32);
    out += "data";
    detail::put32(out, data_size);
    for (double x : audio.samples) {
        const auto f = static_cast<float>(x);
        std::uint32_t u;
        std::memcpy(&u, &f, sizeof u);
        detail::put32(out, u);
    }
    return out;
}

/// Writes `contents` to a sibling temp file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw Error(ErrorKind::Io, "write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error(ErrorKind::Io, "cannot rename into '" + path.string() + "'");
    }
}

/// All-or-nothing variant for several outputs: everything is staged to temp
/// files first, and the renames only start once every write succeeded.
inline void write_files_atomic(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
    std::vector<std::filesystem::path> staged;
    auto cleanup = [&] {
        std::error_code ec;
        for (const auto& t : staged) std::filesystem::remove(t, ec);
    };
    for (const auto& [path, contents] : files) {
        std::filesystem::path tmp = path;
        tmp += ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            cleanup();
            throw Error(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
        }
        staged.push_back(tmp);
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            cleanup();
            throw Error(ErrorKind::Io, "write failed for '" + tmp.string() + "'");
        }
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::error_code ec;
        std::filesystem::rename(staged[i], files[i].first, ec);
        if (ec) {
            cleanup();
            throw Error(ErrorKind::Io, "cannot rename into '" + files[i].first.string() + "'");
        }
    }
}

/// Float32 mono WAV at the buffer's rate.
inline void wav_write(const std::filesystem::path& path, const AudioBuffer& audio) {
    validate(audio);
    write_file_atomic(path, encode_wav(audio));
}

}  // namespace tractmatch
