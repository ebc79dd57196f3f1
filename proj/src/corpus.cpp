#include "qser/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "qser/checkpoint.hpp"
#include "qser/errors.hpp"

namespace qser::corpus {

using data::EmotionTarget;
using data::LabeledSet;

NormMode parse_norm_mode(const std::string& s)
{
    if (s == "minmax")
        return NormMode::minmax;
    if (s == "zscore")
        return NormMode::zscore;
    throw ConfigError("normalization must be minmax or zscore, got '" + s + "'");
}

std::vector<std::size_t> Manifest::indices(const std::string& split) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split)
            out.push_back(i);
    return out;
}

nlohmann::json Manifest::to_json() const
{
    nlohmann::json j;
    j["seed"] = seed;
    j["train_stats"] = {{"min", train_stats.min}, {"max", train_stats.max}, {"mean", train_stats.mean},
                        {"std", train_stats.std}};
    auto& arr = j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"source", e.source},
                       {"class", e.target.discrete},
                       {"valence", e.target.valence},
                       {"arousal", e.target.arousal},
                       {"dominance", e.target.dominance},
                       {"split", e.split}});
    return j;
}

Manifest Manifest::from_json(const nlohmann::json& j)
{
    try {
        Manifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        const auto& s = j.at("train_stats");
        m.train_stats = {s.at("min").get<double>(), s.at("max").get<double>(), s.at("mean").get<double>(),
                         s.at("std").get<double>()};
        for (const auto& e : j.at("entries")) {
            Entry entry;
            entry.source = e.at("source").get<std::string>();
            entry.target = {e.at("class").get<int>(), e.at("valence").get<int>(), e.at("arousal").get<int>(),
                            e.at("dominance").get<int>()};
            data::validate(entry.target);
            entry.split = e.at("split").get<std::string>();
            if (entry.split != "train" && entry.split != "val" && entry.split != "test")
                throw DataError("manifest entry " + entry.source + " has unknown split '" + entry.split + "'");
            m.entries.push_back(std::move(entry));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

LabeledSet Corpus::split(const std::string& name) const
{
    return raw.subset(manifest.indices(name));
}

NormStats compute_stats(const LabeledSet& set, std::vector<std::size_t> indices)
{
    // Fixed summation order, so the constants do not depend on how the
    // split was enumerated.
    std::sort(indices.begin(), indices.end());
    if (indices.empty())
        throw DataError("cannot compute normalization constants from an empty split");
    NormStats s;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i : indices)
        for (float v : set.item(i)) {
            s.min = std::min(s.min, static_cast<double>(v));
            s.max = std::max(s.max, static_cast<double>(v));
            sum += v;
            ++count;
        }
    s.mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t i : indices)
        for (float v : set.item(i))
            sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(count));
    return s;
}

void normalize(LabeledSet& set, const NormStats& stats, NormMode mode)
{
    if (mode == NormMode::minmax) {
        const double range = stats.max - stats.min;
        for (float& v : set.values)
            v = range > 0.0 ? static_cast<float>(std::clamp((v - stats.min) / range, 0.0, 1.0)) : 0.0f;
    } else {
        for (float& v : set.values)
            v = stats.std > 0.0 ? static_cast<float>((v - stats.mean) / stats.std) : 0.0f;
    }
}

LabeledSet normalized(const LabeledSet& set, const NormStats& stats, NormMode mode)
{
    LabeledSet out = set;
    normalize(out, stats, mode);
    return out;
}

void assign_splits(Corpus& c)
{
    const auto split = data::split_70_20_10(c.manifest.entries.size(), c.manifest.seed);
    for (std::size_t i : split.train)
        c.manifest.entries[i].split = "train";
    for (std::size_t i : split.val)
        c.manifest.entries[i].split = "val";
    for (std::size_t i : split.test)
        c.manifest.entries[i].split = "test";
    c.manifest.train_stats = compute_stats(c.raw, split.train);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct Pattern {
    double f0;       // Hz
    bool odd_only;   // harmonic stack
    double am_rate;  // Hz
};

// Order: neutral, angry, happy, sad.
constexpr Pattern patterns[4] = {
    {180.0, false, 1.0},
    {260.0, true, 6.0},
    {420.0, false, 5.0},
    {600.0, true, 1.5},
};

}  // namespace

EmotionTarget synth_target(int cls)
{
    if (cls < 0 || cls >= 4)
        throw DataError("synthetic class must be in [0,4)");
    const Pattern& p = patterns[cls];
    return {cls, p.odd_only ? 0 : 1, p.am_rate > 3.0 ? 1 : 0, p.f0 < 300.0 ? 1 : 0};
}

std::vector<double> synth_waveform(int cls, Rng& jitter)
{
    synth_target(cls);
    const Pattern& p = patterns[cls];
    const double f0 = p.f0 * (1.0 + 0.03 * jitter.uniform(-1.0, 1.0));
    const double rate = p.am_rate * (1.0 + 0.1 * jitter.uniform(-1.0, 1.0));
    const double gain = 0.25 * (1.0 + 0.2 * jitter.uniform(-1.0, 1.0));
    const double am_phase = jitter.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<double> phases;
    std::vector<double> freqs;
    for (int h = 1; h * f0 < 4000.0; ++h) {
        if (p.odd_only && h % 2 == 0)
            continue;
        freqs.push_back(h * f0);
        phases.push_back(jitter.uniform(0.0, 2.0 * std::numbers::pi));
    }
    const std::size_t n = 4 * static_cast<std::size_t>(audio::target_rate);
    std::vector<double> x(n);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / audio::target_rate;
        double s = 0.0;
        for (std::size_t k = 0; k < freqs.size(); ++k)
            s += std::sin(two_pi * freqs[k] * t + phases[k]) / static_cast<double>(k + 1);
        const double envelope = 0.5 * (1.0 + std::sin(two_pi * rate * t + am_phase));
        x[i] = gain * envelope * s / 2.0 + 0.005 * jitter.uniform(-1.0, 1.0);
    }
    return x;
}

Corpus synth_corpus(std::size_t n_per_class, std::uint64_t seed)
{
    if (n_per_class == 0)
        throw ConfigError("synthetic corpus needs at least one item per class");
    Corpus c;
    c.manifest.seed = seed;
    c.raw.item_shape = {1, 512, 128};
    Rng root(seed);
    for (std::size_t i = 0; i < 4 * n_per_class; ++i) {
        const int cls = static_cast<int>(i % 4);
        Rng jitter = root.fork(i);
        const auto spec = audio::magnitude_spectrogram(synth_waveform(cls, jitter));
        const auto target = synth_target(cls);
        c.raw.push(spec, target);
        c.manifest.entries.push_back({"synth:" + std::to_string(cls) + ":" + std::to_string(i), target, ""});
    }
    assign_splits(c);
    return c;
}

Corpus corpus_from_wavs(const std::vector<LabeledFile>& files, std::uint64_t seed)
{
    if (files.empty())
        throw DataError("no audio files given");
    Corpus c;
    c.manifest.seed = seed;
    c.raw.item_shape = {1, 512, 128};
    for (const auto& f : files) {
        data::validate(f.target);
        const auto fragments = audio::preprocess(audio::read_wav(f.path));
        for (std::size_t k = 0; k < fragments.size(); ++k) {
            c.raw.push(fragments[k], f.target);
            c.manifest.entries.push_back({f.path.string() + "#" + std::to_string(k), f.target, ""});
        }
    }
    assign_splits(c);
    return c;
}

void save(const Corpus& c, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json");
        if (!out)
            throw DataError("cannot write " + (dir / "manifest.json").string());
        out << c.manifest.to_json().dump(1) << '\n';
    }
    ckpt::Checkpoint k;
    k.fingerprint = "corpus";
    Shape shape{c.raw.size()};
    shape.insert(shape.end(), c.raw.item_shape.begin(), c.raw.item_shape.end());
    k.tensors.push_back({"spectrograms", Tensor<float>(shape, c.raw.values), false});
    ckpt::save(k, dir / "spectrograms.qck");
}

Corpus load(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw DataError("no corpus manifest in " + dir.string());
    Corpus c;
    try {
        c.manifest = Manifest::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse " + (dir / "manifest.json").string() + ": " + e.what());
    }
    const auto k = ckpt::load(dir / "spectrograms.qck");
    const auto* t = k.find("spectrograms");
    if (!t || t->rank() != 4 || t->dim(0) != c.manifest.entries.size())
        throw DataError("corpus spectrograms do not match the manifest in " + dir.string());
    c.raw.item_shape = {t->dim(1), t->dim(2), t->dim(3)};
    c.raw.values.assign(t->values().begin(), t->values().end());
    for (const auto& e : c.manifest.entries)
        c.raw.targets.push_back(e.target);
    return c;
}

}  // namespace qser::corpus
