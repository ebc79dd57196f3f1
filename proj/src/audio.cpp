#include "qser/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "qser/errors.hpp"

namespace qser::audio {

namespace {

std::uint32_t le32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t le16(const unsigned char* p)
{
    return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put32(std::ostream& out, std::uint32_t v)
{
    for (int b = 0; b < 4; ++b)
        out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put16(std::ostream& out, std::uint16_t v)
{
    out.put(static_cast<char>(v & 0xFF));
    out.put(static_cast<char>(v >> 8));
}

// FFTW planning is not thread-safe; execution with new-array functions is.
std::mutex plan_mutex;

}  // namespace

Pcm read_wav(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw DataError(path.string() + " is not a RIFF/WAVE file");

    int channels = 0, rate = 0, bits = 0, format = 0;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;
    for (std::size_t pos = 12; pos + 8 <= bytes.size();) {
        const std::uint32_t size = le32(&bytes[pos + 4]);
        const unsigned char* body = &bytes[pos + 8];
        const std::size_t avail = bytes.size() - pos - 8;
        if (std::memcmp(&bytes[pos], "fmt ", 4) == 0 && size >= 16 && avail >= 16) {
            format = le16(body);
            channels = le16(body + 2);
            rate = static_cast<int>(le32(body + 4));
            bits = le16(body + 14);
        } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
            data = body;
            data_size = std::min<std::size_t>(size, avail);
        }
        pos += 8 + size + (size & 1);
    }
    if (format != 1 || bits != 16)
        throw DataError(path.string() + ": only 16-bit PCM WAV is supported (format " + std::to_string(format) +
                        ", " + std::to_string(bits) + " bits)");
    if (channels != 1 && channels != 2)
        throw DataError(path.string() + ": only mono or stereo WAV is supported");
    if (!data || rate <= 0)
        throw DataError(path.string() + " has no audio data");

    Pcm pcm;
    pcm.sample_rate = rate;
    const std::size_t frames = data_size / (2 * static_cast<std::size_t>(channels));
    pcm.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            const auto v = static_cast<std::int16_t>(le16(data + (i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) * 2));
            acc += static_cast<double>(v) / 32768.0;
        }
        pcm.samples[i] = acc / channels;
    }
    return pcm;
}

void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, int sample_rate)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + path.string());
    const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    out.write("RIFF", 4);
    put32(out, 36 + data_bytes);
    out.write("WAVEfmt ", 8);
    put32(out, 16);
    put16(out, 1);
    put16(out, 1);
    put32(out, static_cast<std::uint32_t>(sample_rate));
    put32(out, static_cast<std::uint32_t>(sample_rate) * 2);
    put16(out, 2);
    put16(out, 16);
    out.write("data", 4);
    put32(out, data_bytes);
    for (double s : samples) {
        const double c = std::clamp(s, -1.0, 1.0) * 32767.0;
        put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c))));
    }
}

std::vector<double> resample_linear(const std::vector<double>& samples, int from_rate, int to_rate)
{
    if (from_rate <= 0 || to_rate <= 0)
        throw DataError("sample rates must be positive");
    if (from_rate == to_rate || samples.empty())
        return samples;
    const double ratio = static_cast<double>(from_rate) / to_rate;
    const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(samples.size() - 1) / ratio)) + 1;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * ratio;
        const auto k = static_cast<std::size_t>(t);
        const double f = t - static_cast<double>(k);
        out[i] = k + 1 < samples.size() ? samples[k] * (1.0 - f) + samples[k + 1] * f : samples[k];
    }
    return out;
}

std::vector<double> hamming(std::size_t n)
{
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

std::vector<float> magnitude_spectrogram(const std::vector<double>& fragment, const StftParams& p)
{
    if (p.window == 0 || p.hop == 0 || p.bins > p.window / 2 + 1 || p.frames == 0)
        throw ConfigError("invalid STFT parameters");
    std::vector<double> x(fragment);
    if (x.size() < std::max(p.fragment, p.window))
        x.resize(std::max(p.fragment, p.window), 0.0);
    const std::size_t n_frames = std::min(p.frames, 1 + (x.size() - p.window) / p.hop);
    const auto window = hamming(p.window);

    std::vector<float> spec(p.frames * p.bins, 0.0f);
    double* in = fftw_alloc_real(p.window);
    fftw_complex* out = fftw_alloc_complex(p.window / 2 + 1);
    fftw_plan plan;
    {
        std::lock_guard lock(plan_mutex);
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(p.window), in, out, FFTW_ESTIMATE);
    }
    for (std::size_t f = 0; f < n_frames; ++f) {
        for (std::size_t i = 0; i < p.window; ++i)
            in[i] = x[f * p.hop + i] * window[i];
        fftw_execute(plan);
        for (std::size_t b = 0; b < p.bins; ++b)
            spec[f * p.bins + b] = static_cast<float>(std::hypot(out[b][0], out[b][1]));
    }
    {
        std::lock_guard lock(plan_mutex);
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
    return spec;
}

std::vector<std::vector<float>> preprocess(const Pcm& pcm, const StftParams& p)
{
    if (pcm.samples.empty())
        throw DataError("cannot preprocess an empty signal");
    const auto signal = resample_linear(pcm.samples, pcm.sample_rate, target_rate);
    std::vector<std::vector<float>> out;
    for (std::size_t start = 0; start < signal.size(); start += p.fragment) {
        const std::size_t end = std::min(signal.size(), start + p.fragment);
        std::vector<double> frag(signal.begin() + static_cast<std::ptrdiff_t>(start),
                                 signal.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(magnitude_spectrogram(frag, p));
    }
    return out;
}

}  // namespace qser::audio
