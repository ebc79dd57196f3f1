#include "qser/audio.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "qser/corpus.hpp"
#include "qser/errors.hpp"

namespace fs = std::filesystem;
namespace audio = qser::audio;

namespace {

std::vector<double> sine(double freq, double seconds, int rate, double amp = 0.5)
{
    std::vector<double> x(static_cast<std::size_t>(seconds * rate));
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
    return x;
}

std::size_t argmax_bin(const std::vector<float>& spec, std::size_t frame, std::size_t bins = 128)
{
    auto first = spec.begin() + static_cast<std::ptrdiff_t>(frame * bins);
    return static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(bins)) - first);
}

fs::path temp_file(const std::string& name)
{
    return fs::temp_directory_path() / ("qser_audio_" + name);
}

void put16(std::ofstream& out, std::uint16_t v)
{
    out.put(static_cast<char>(v & 0xFF));
    out.put(static_cast<char>(v >> 8));
}

void put32(std::ofstream& out, std::uint32_t v)
{
    put16(out, static_cast<std::uint16_t>(v & 0xFFFF));
    put16(out, static_cast<std::uint16_t>(v >> 16));
}

// Minimal RIFF writer for formats write_wav does not produce.
void write_raw_wav(const fs::path& p, int channels, int bits, const std::vector<std::int16_t>& frames)
{
    std::ofstream out(p, std::ios::binary);
    const auto bytes = static_cast<std::uint32_t>(frames.size() * static_cast<std::size_t>(bits / 8));
    out.write("RIFF", 4);
    put32(out, 36 + bytes);
    out.write("WAVEfmt ", 8);
    put32(out, 16);
    put16(out, 1);
    put16(out, static_cast<std::uint16_t>(channels));
    put32(out, 16000);
    put32(out, static_cast<std::uint32_t>(16000 * channels * bits / 8));
    put16(out, static_cast<std::uint16_t>(channels * bits / 8));
    put16(out, static_cast<std::uint16_t>(bits));
    out.write("data", 4);
    put32(out, bytes);
    for (auto s : frames) {
        if (bits == 16)
            put16(out, static_cast<std::uint16_t>(s));
        else
            out.put(static_cast<char>(s));
    }
}

}  // namespace

TEST(Stft, OneKilohertzLandsInBinSixteen)
{
    const auto spec = audio::magnitude_spectrogram(sine(1000.0, 4.0, 16000));
    ASSERT_EQ(spec.size(), 512u * 128u);
    // 1 + (64000 - 256) / 128 = 499 frames carry signal.
    for (std::size_t f = 0; f < 499; ++f)
        ASSERT_EQ(argmax_bin(spec, f), 16u) << "frame " << f;
    for (std::size_t f = 499; f < 512; ++f)
        EXPECT_EQ(*std::max_element(spec.begin() + static_cast<std::ptrdiff_t>(f * 128),
                                    spec.begin() + static_cast<std::ptrdiff_t>((f + 1) * 128)),
                  0.0f);
}

TEST(Stft, BinSpacingIsSixtyTwoPointFiveHertz)
{
    for (int bin : {4, 30, 100, 127}) {
        const auto spec = audio::magnitude_spectrogram(sine(62.5 * bin, 1.0, 16000));
        EXPECT_EQ(argmax_bin(spec, 10), static_cast<std::size_t>(bin));
    }
}

TEST(Stft, HammingIsPeriodic)
{
    const auto w = audio::hamming(256);
    EXPECT_NEAR(w[0], 0.08, 1e-12);
    EXPECT_NEAR(w[128], 1.0, 1e-12);
    EXPECT_NEAR(w[1], w[255], 1e-12);
}

TEST(Preprocess, SixSecondsGiveTwoFragments)
{
    audio::Pcm pcm{sine(1000.0, 6.0, 16000), 16000};
    const auto frags = audio::preprocess(pcm);
    ASSERT_EQ(frags.size(), 2u);
    for (const auto& f : frags)
        EXPECT_EQ(f.size(), 512u * 128u);
    // Two seconds of signal fill 1 + (32000 - 256) / 128 = 249 frames; the rest is padding.
    EXPECT_EQ(argmax_bin(frags[1], 100), 16u);
    for (std::size_t f = 250; f < 512; ++f)
        EXPECT_EQ(frags[1][f * 128 + 16], 0.0f) << f;
}

TEST(Preprocess, ShortInputIsOnePaddedFragment)
{
    audio::Pcm pcm{sine(500.0, 0.5, 16000), 16000};
    EXPECT_EQ(audio::preprocess(pcm).size(), 1u);
}

TEST(Preprocess, SilenceIsHandled)
{
    audio::Pcm pcm{std::vector<double>(64000, 0.0), 16000};
    const auto frags = audio::preprocess(pcm);
    ASSERT_EQ(frags.size(), 1u);
    EXPECT_TRUE(std::all_of(frags[0].begin(), frags[0].end(), [](float v) { return v == 0.0f; }));

    // Zero dynamic range: min-max normalization yields zeros rather than NaN.
    qser::data::LabeledSet set;
    set.item_shape = {1, 512, 128};
    set.push(frags[0], {});
    const auto stats = qser::corpus::compute_stats(set, {0});
    qser::corpus::normalize(set, stats, qser::corpus::NormMode::minmax);
    EXPECT_TRUE(std::all_of(set.values.begin(), set.values.end(), [](float v) { return v == 0.0f; }));
}

TEST(Preprocess, EmptySignalIsDataError)
{
    EXPECT_THROW(audio::preprocess(audio::Pcm{}), qser::DataError);
}

TEST(Preprocess, OtherRatesAreResampled)
{
    audio::Pcm pcm{sine(1000.0, 4.0, 44100), 44100};
    const auto frags = audio::preprocess(pcm);
    ASSERT_EQ(frags.size(), 1u);
    EXPECT_EQ(argmax_bin(frags[0], 200), 16u);
}

TEST(Resample, LengthAndEndpoints)
{
    const std::vector<double> x = {0.0, 1.0, 2.0, 3.0};
    const auto up = audio::resample_linear(x, 8000, 16000);
    ASSERT_EQ(up.size(), 7u);
    EXPECT_DOUBLE_EQ(up[1], 0.5);
    EXPECT_DOUBLE_EQ(up.back(), 3.0);
    EXPECT_THROW(audio::resample_linear(x, 0, 16000), qser::DataError);
}

TEST(Wav, RoundTripWithinQuantization)
{
    const auto p = temp_file("rt.wav");
    const auto x = sine(440.0, 0.1, 16000, 0.8);
    audio::write_wav(p, x, 16000);
    const auto pcm = audio::read_wav(p);
    EXPECT_EQ(pcm.sample_rate, 16000);
    ASSERT_EQ(pcm.samples.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_NEAR(pcm.samples[i], x[i], 1.5 / 32768.0);  // written at 32767, read at 32768
    fs::remove(p);
}

TEST(Wav, StereoIsAveraged)
{
    const auto p = temp_file("stereo.wav");
    write_raw_wav(p, 2, 16, {16384, 0, -16384, -16384});
    const auto pcm = audio::read_wav(p);
    ASSERT_EQ(pcm.samples.size(), 2u);
    EXPECT_DOUBLE_EQ(pcm.samples[0], 0.25);
    EXPECT_DOUBLE_EQ(pcm.samples[1], -0.5);
    fs::remove(p);
}

TEST(Wav, UnsupportedEncodingsAreDataErrors)
{
    const auto p = temp_file("u8.wav");
    write_raw_wav(p, 1, 8, {1, 2, 3});
    EXPECT_THROW(audio::read_wav(p), qser::DataError);
    std::ofstream(p, std::ios::trunc) << "not a wav";
    EXPECT_THROW(audio::read_wav(p), qser::DataError);
    fs::remove(p);
    EXPECT_THROW(audio::read_wav(p), qser::DataError);
}
