#pragma once

#include <filesystem>
#include <vector>

namespace qser::audio {

inline constexpr int target_rate = 16000;

struct Pcm {
    std::vector<double> samples;  // mono, in [-1, 1]
    int sample_rate = target_rate;
};

/// 16-bit PCM WAV; stereo is downmixed by averaging. Anything else is a
/// DataError.
Pcm read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, int sample_rate);

/// Linear interpolation onto a new rate.
std::vector<double> resample_linear(const std::vector<double>& samples, int from_rate, int to_rate);

struct StftParams {
    std::size_t window = 256;  // 16 ms at 16 kHz
    std::size_t hop = 128;     // 50% overlap
    std::size_t bins = 128;    // of window/2+1; the Nyquist bin is dropped
    std::size_t frames = 512;  // zero-padded/truncated
    std::size_t fragment = 4 * target_rate;
};

/// Periodic Hamming window of length n.
std::vector<double> hamming(std::size_t n);

/// Magnitude spectrogram of one fragment, frames x bins row-major, frames
/// zero-padded to p.frames. The fragment is zero-padded to p.fragment first.
std::vector<float> magnitude_spectrogram(const std::vector<double>& fragment, const StftParams& p = {});

/// Splits the signal (resampled to 16 kHz) into non-overlapping 4 s
/// fragments, zero-padding the last, and returns one raw magnitude
/// spectrogram per fragment. Throws DataError on an empty signal.
std::vector<std::vector<float>> preprocess(const Pcm& pcm, const StftParams& p = {});

}  // namespace qser::audio
