#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "qser/audio.hpp"
#include "qser/dataset.hpp"

namespace qser::corpus {

/// minmax: [0,1] scaling for the RH-emo / quaternion path.
/// zscore: zero mean, unit variance for the real baseline path.
enum class NormMode { minmax, zscore };
NormMode parse_norm_mode(const std::string& s);

/// Scalar constants over every value of the training split.
struct NormStats {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double std = 0.0;
};

struct Entry {
    std::string source;  // file path, or "synth:<class>:<index>"
    data::EmotionTarget target;
    std::string split;   // train | val | test
};

struct Manifest {
    std::uint64_t seed = 0;
    std::vector<Entry> entries;
    NormStats train_stats;

    std::vector<std::size_t> indices(const std::string& split) const;
    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
};

/// Raw (unnormalized) magnitude spectrograms aligned with manifest entries.
struct Corpus {
    Manifest manifest;
    data::LabeledSet raw;  // items [1, 512, 128]

    data::LabeledSet split(const std::string& name) const;
};

NormStats compute_stats(const data::LabeledSet& set, std::vector<std::size_t> indices);

/// Applies training-split constants. minmax clamps to [0,1] and outputs
/// zeros when max == min; zscore outputs zeros when std == 0.
void normalize(data::LabeledSet& set, const NormStats& stats, NormMode mode);
data::LabeledSet normalized(const data::LabeledSet& set, const NormStats& stats, NormMode mode);

/// Assigns 70/20/10 splits with the manifest seed and recomputes the
/// training-split constants.
void assign_splits(Corpus& c);

/// Fixed label set per synthetic class. Valence follows the harmonic stack
/// (full vs odd-only), arousal the modulation rate, dominance the pitch
/// register.
data::EmotionTarget synth_target(int cls);
/// Four seconds of the class pattern at 16 kHz with per-sample jitter.
std::vector<double> synth_waveform(int cls, Rng& jitter);
/// n_per_class items per class, class-interleaved, split 70/20/10.
Corpus synth_corpus(std::size_t n_per_class, std::uint64_t seed);

struct LabeledFile {
    std::filesystem::path path;
    data::EmotionTarget target;
};
/// One entry per 4 s fragment of every file.
Corpus corpus_from_wavs(const std::vector<LabeledFile>& files, std::uint64_t seed);

/// manifest.json + spectrograms.qck inside dir.
void save(const Corpus& c, const std::filesystem::path& dir);
Corpus load(const std::filesystem::path& dir);

}  // namespace qser::corpus
