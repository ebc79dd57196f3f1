// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. `acceptance 3 7` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "qser/audio.hpp"
#include "qser/checkpoint.hpp"
#include "qser/corpus.hpp"
#include "qser/errors.hpp"
#include "qser/experiment.hpp"
#include "qser/ops.hpp"
#include "qser/qnn.hpp"
#include "qser/quat.hpp"
#include "qser/rhemo.hpp"
#include "qser/zoo.hpp"

namespace fs = std::filesystem;
using qser::Rng;
using qser::Shape;
using qser::Tensor;
namespace audio = qser::audio;
namespace ckpt = qser::ckpt;
namespace corpus = qser::corpus;
namespace data = qser::data;
namespace nn = qser::nn;
namespace ops = qser::ops;
namespace qnn = qser::qnn;
namespace quat = qser::quat;
namespace rhemo = qser::rhemo;
namespace xp = qser::exp;
namespace zoo = qser::zoo;
using ops::Pair;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failed checks; the first few messages make the detail line.
struct Report {
    std::vector<std::string> failures;
    std::vector<std::string> notes;

    bool check(bool ok, const std::string& what)
    {
        if (!ok)
            failures.push_back(what);
        return ok;
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data())
        v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

Tensor<double> param(Shape s, Rng& rng, double lo = -1, double hi = 1)
{
    auto t = random_tensor<double>(std::move(s), rng, lo, hi);
    t.set_requires_grad();
    return t;
}

nn::Context eval_ctx;

// ---------------------------------------------------------------------------
// Shared data. The 200-item corpus and the trained RH-emo feed 7, 8 and 9.

const corpus::Corpus& main_corpus()
{
    static const corpus::Corpus c = corpus::synth_corpus(50, 7);
    return c;
}

// Pretraining source for the pretrained rows: same generator, other seed.
const corpus::Corpus& source_corpus()
{
    static const corpus::Corpus c = corpus::synth_corpus(50, 8);
    return c;
}

data::LabeledSet minmax_split(const corpus::Corpus& c, const std::string& name)
{
    return corpus::normalized(c.split(name), c.manifest.train_stats, corpus::NormMode::minmax);
}

rhemo::TrainConfig rhemo_schedule()
{
    rhemo::TrainConfig tc;
    tc.stage1.max_epochs = 10;
    tc.stage2.lr = 1e-5;
    tc.stage2.max_epochs = 50;
    tc.seed = 7;
    return tc;
}

struct TrainedRhemo {
    rhemo::RhEmoConfig config;
    std::unique_ptr<rhemo::RhEmoModel<float>> model;
    rhemo::TwoStageResult result;
    ckpt::Checkpoint checkpoint;
    double seconds = 0.0;
};

TrainedRhemo& trained_rhemo()
{
    static TrainedRhemo t = [] {
        TrainedRhemo r;
        const auto t0 = Clock::now();
        Rng rng(7);
        r.model = std::make_unique<rhemo::RhEmoModel<float>>(r.config, rng);
        r.result = rhemo::train_two_stage(*r.model, rhemo_schedule(), minmax_split(main_corpus(), "train"),
                                          minmax_split(main_corpus(), "val"));
        r.checkpoint = ckpt::capture(*r.model, r.config.fingerprint());
        r.seconds = seconds_since(t0);
        return r;
    }();
    return t;
}

// Nearest class centroid on flattened spectrograms.
double nearest_centroid_accuracy(const data::LabeledSet& train, const data::LabeledSet& test)
{
    const std::size_t d = train.item_numel();
    std::vector<std::vector<double>> centroid(4, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(4, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto k = static_cast<std::size_t>(train.targets[i].discrete);
        const auto x = train.item(i);
        for (std::size_t j = 0; j < d; ++j)
            centroid[k][j] += x[j];
        ++count[k];
    }
    for (std::size_t k = 0; k < 4; ++k)
        for (auto& v : centroid[k])
            v /= static_cast<double>(std::max<std::size_t>(count[k], 1));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto x = test.item(i);
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t k = 0; k < 4; ++k) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                dist += (x[j] - centroid[k][j]) * (x[j] - centroid[k][j]);
            if (dist < best_d) {
                best_d = dist;
                best = k;
            }
        }
        correct += static_cast<int>(best) == test.targets[i].discrete;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<float> flat(const std::vector<nn::NamedTensor<float>>& ts, const std::string& prefix)
{
    std::vector<float> out;
    for (const auto& nt : ts)
        if (nt.name.starts_with(prefix))
            out.insert(out.end(), nt.tensor.values().begin(), nt.tensor.values().end());
    return out;
}

std::vector<float> flat(const ckpt::Checkpoint& c, const std::string& prefix)
{
    std::vector<float> out;
    for (const auto& t : c.tensors)
        if (t.name.starts_with(prefix))
            out.insert(out.end(), t.tensor.values().begin(), t.tensor.values().end());
    return out;
}

std::string file_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// 1

void quaternion_oracles(Report& rep)
{
    const auto t0 = Clock::now();
    Rng rng(101);
    auto draw = [&] {
        return quat::Quaternion(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    };
    auto diff = [](const quat::Quaternion& a, const quat::Quaternion& b) {
        double m = 0.0;
        for (std::size_t c = 0; c < 4; ++c)
            m = std::max(m, std::abs(a[c] - b[c]));
        return m;
    };
    double matrix_err = 0, norm_err = 0, assoc_err = 0, conj_err = 0;
    const int pairs = 1000;
    for (int n = 0; n < pairs; ++n) {
        const auto q = draw(), p = draw(), r = draw();
        const auto qp = quat::hamilton(q, p);
        const auto mv = quat::to_matrix(q).apply(p.components());
        matrix_err = std::max(matrix_err, diff(qp, quat::Quaternion(mv[0], mv[1], mv[2], mv[3])));
        norm_err = std::max(norm_err, std::abs(qp.norm() - q.norm() * p.norm()));
        assoc_err = std::max(assoc_err, diff(quat::hamilton(qp, r), quat::hamilton(q, quat::hamilton(p, r))));
        conj_err = std::max(conj_err,
                            diff(quat::conjugate(qp), quat::hamilton(quat::conjugate(p), quat::conjugate(q))));
    }
    const double secs = seconds_since(t0);
    rep.check(matrix_err < 1e-12, "hamilton vs matrix form " + fmt(matrix_err));
    rep.check(norm_err < 1e-12, "norm multiplicativity " + fmt(norm_err));
    rep.check(assoc_err < 1e-12, "associativity " + fmt(assoc_err));
    rep.check(conj_err < 1e-12, "conjugation " + fmt(conj_err));
    rep.check(secs < 1.0, "runtime " + fmt(secs) + " s");
    rep.note(std::to_string(pairs) + " pairs, max errors " + fmt(matrix_err) + "/" + fmt(norm_err) + "/" +
             fmt(assoc_err) + "/" + fmt(conj_err));
}

// ---------------------------------------------------------------------------
// 2

template <typename T>
double conv_equivalence(int cases, Rng& rng)
{
    double worst = 0.0;
    for (int trial = 0; trial < cases; ++trial) {
        const std::size_t in_q = 1 + rng.below(3), out_q = 1 + rng.below(3);
        const Pair k{1 + 2 * rng.below(2), 1 + 2 * rng.below(2)};
        const Pair s{1 + rng.below(2), 1 + rng.below(2)};
        const Pair p{k.h / 2, k.w / 2};
        qnn::QuatConv2d<T> layer(in_q, out_q, k, s, p, true, rng);
        for (auto& v : layer.bias.data())
            v = static_cast<T>(rng.uniform(-1, 1));
        auto x = random_tensor<T>({2, 4 * in_q, 5 + rng.below(4), 4 + rng.below(4)}, rng);
        auto y = layer.forward(x, eval_ctx);
        auto ref = ops::conv2d(x, layer.assemble_block_weights(), layer.bias, s, p);
        if (y.shape() != ref.shape())
            return INFINITY;
        for (std::size_t i = 0; i < y.numel(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(y.data()[i]) - static_cast<double>(ref.data()[i])));
    }
    return worst;
}

template <typename T>
double transpose_equivalence(int cases, Rng& rng)
{
    double worst = 0.0;
    for (int trial = 0; trial < cases; ++trial) {
        const std::size_t in_q = 1 + rng.below(3), out_q = 1 + rng.below(3);
        const Pair s{1 + rng.below(2), 1 + rng.below(2)};
        const Pair op{rng.below(s.h), rng.below(s.w)};
        qnn::QuatConvTranspose2d<T> layer(in_q, out_q, {3, 3}, s, {1, 1}, op, true, rng);
        for (auto& v : layer.bias.data())
            v = static_cast<T>(rng.uniform(-1, 1));
        auto x = random_tensor<T>({2, 4 * in_q, 3 + rng.below(4), 3 + rng.below(4)}, rng);
        auto y = layer.forward(x, eval_ctx);
        auto ref = ops::conv_transpose2d(x, layer.assemble_block_weights(), layer.bias, s, Pair{1, 1}, op);
        if (y.shape() != ref.shape())
            return INFINITY;
        for (std::size_t i = 0; i < y.numel(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(y.data()[i]) - static_cast<double>(ref.data()[i])));
    }
    return worst;
}

template <typename T>
double dense_equivalence(int cases, Rng& rng)
{
    double worst = 0.0;
    for (int trial = 0; trial < cases; ++trial) {
        const std::size_t in_q = 1 + rng.below(6), out_q = 1 + rng.below(6);
        qnn::QuatDense<T> layer(in_q, out_q, true, rng);
        for (auto& v : layer.bias.data())
            v = static_cast<T>(rng.uniform(-1, 1));
        auto x = random_tensor<T>({3, 4 * in_q}, rng);
        auto y = layer.forward(x, eval_ctx);
        auto ref = ops::dense(x, layer.assemble_block_weights(), layer.bias);
        if (y.shape() != ref.shape())
            return INFINITY;
        for (std::size_t i = 0; i < y.numel(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(y.data()[i]) - static_cast<double>(ref.data()[i])));
    }
    return worst;
}

void layer_equivalence(Report& rep)
{
    const auto t0 = Clock::now();
    const int cases = 100;
    Rng rng(202);
    struct Row {
        const char* name;
        double f32, f64;
    };
    const Row rows[] = {
        {"conv", conv_equivalence<float>(cases, rng), conv_equivalence<double>(cases, rng)},
        {"tconv", transpose_equivalence<float>(cases, rng), transpose_equivalence<double>(cases, rng)},
        {"dense", dense_equivalence<float>(cases, rng), dense_equivalence<double>(cases, rng)},
    };
    std::string detail = std::to_string(cases) + " cases per layer and precision;";
    for (const auto& r : rows) {
        rep.check(r.f32 < 1e-5, std::string(r.name) + " float " + fmt(r.f32));
        rep.check(r.f64 < 1e-12, std::string(r.name) + " double " + fmt(r.f64));
        detail += std::string(" ") + r.name + " " + fmt(r.f32) + "/" + fmt(r.f64);
    }
    const double secs = seconds_since(t0);
    rep.check(secs < 30.0, "runtime " + fmt(secs) + " s");
    rep.note(detail);
}

// ---------------------------------------------------------------------------
// 3

// Projects a tensor to a scalar with fixed random weights so every output
// element carries a distinct upstream gradient.
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed)
{
    Rng rng(seed);
    auto v = random_tensor<double>({1, y.numel()}, rng);
    return ops::dense(ops::reshape(y, {1, y.numel()}), v, Tensor<double>{});
}

void gradient_checks(Report& rep)
{
    const auto t0 = Clock::now();
    std::size_t suites = 0, fewest = SIZE_MAX;
    double worst = 0.0;
    auto run = [&](const std::string& name, std::vector<nn::NamedTensor<double>> params,
                   const std::function<Tensor<double>()>& fn, std::uint64_t seed) {
        const auto r = qser::testing::check_gradients(std::move(params), fn, 100, seed);
        ++suites;
        fewest = std::min(fewest, r.checked);
        worst = std::max(worst, r.max_rel_error);
        rep.check(r.checked >= 100, name + ": only " + std::to_string(r.checked) + " samples");
        rep.check(r.max_rel_error < 1e-4, name + ": " + fmt(r.max_rel_error) + " at " + r.worst);
    };

    Rng rng(303);
    {
        auto x = param({2, 3, 6, 5}, rng), w = param({4, 3, 3, 3}, rng), b = param({4}, rng);
        run("conv2d", {{"x", x}, {"w", w}, {"b", b}}, [&] { return project(ops::conv2d(x, w, b, {2, 1}, {1, 1}), 1); },
            1);
    }
    {
        auto x = param({2, 3, 4, 3}, rng), w = param({3, 2, 3, 3}, rng), b = param({2}, rng);
        run("conv_transpose2d", {{"x", x}, {"w", w}, {"b", b}},
            [&] { return project(ops::conv_transpose2d(x, w, b, {2, 1}, {1, 1}, {1, 0}), 2); }, 2);
    }
    {
        auto x = param({3, 6}, rng), w = param({5, 6}, rng), b = param({5}, rng);
        run("dense+sigmoid", {{"x", x}, {"w", w}, {"b", b}}, [&] { return project(ops::sigmoid(ops::dense(x, w, b)), 3); },
            3);
        run("dense+softmax", {{"x", x}, {"w", w}, {"b", b}}, [&] { return project(ops::softmax(ops::dense(x, w, b)), 4); },
            4);
        run("dense+relu", {{"x", x}, {"w", w}, {"b", b}}, [&] { return project(ops::relu(ops::dense(x, w, b)), 5); }, 5);
    }
    {
        auto x = param({2, 2, 6, 6}, rng);
        run("maxpool2d", {{"x", x}}, [&] { return project(ops::maxpool2d(x, Pair{3, 3}, Pair{2, 2}, Pair{1, 1}), 6); }, 6);
        run("adaptive_avg_pool2d", {{"x", x}}, [&] { return project(ops::adaptive_avg_pool2d(x, Pair{4, 3}), 7); }, 7);
    }
    {
        auto x = param({4, 3, 3, 3}, rng), g = param({3}, rng, 0.5, 1.5), b = param({3}, rng);
        Tensor<double> rm({3}, 0.0), rv({3}, 1.0);
        run("batchnorm train", {{"x", x}, {"gamma", g}, {"beta", b}},
            [&] { return project(ops::batchnorm(x, g, b, rm, rv, true, 0.1, 1e-5), 8); }, 8);
        run("batchnorm eval", {{"x", x}, {"gamma", g}, {"beta", b}},
            [&] { return project(ops::batchnorm(x, g, b, rm, rv, false, 0.1, 1e-5), 9); }, 9);
    }
    {
        auto x = param({2, 4, 3, 3}, rng, 0.1, 0.9);
        auto target = random_tensor<double>({2, 1, 3, 3}, rng, 0.0, 1.0);
        run("channel_mean+bce", {{"x", x}}, [&] { return ops::bce_loss(ops::channel_mean(x), target); }, 10);
        auto logits = param({5, 4}, rng);
        const int labels[] = {0, 3, 2, 1, 3};
        run("softmax+ce", {{"logits", logits}},
            [&] { return ops::ce_loss(ops::softmax(logits), std::span<const int>(labels)); }, 11);
    }
    {
        auto x = param({2, 8, 2, 3}, rng), y = param({2, 8, 2, 3}, rng);
        run("quat_flatten", {{"x", x}}, [&] { return project(ops::quat_flatten(x), 12); }, 12);
        run("select_channel", {{"x", x}}, [&] { return project(ops::select_channel(x, 5), 13); }, 13);
        run("add+scale", {{"x", x}, {"y", y}}, [&] { return project(ops::add(x, ops::scale(y, -0.7)), 14); }, 14);
        run("split_mean", {{"x", x}}, [&] { return project(qnn::split_mean(ops::reshape(x, {4, 4, 2, 3})), 15); }, 15);
    }
    {
        qnn::QuatConv2d<double> layer(2, 2, {3, 3}, {1, 2}, {1, 1}, true, rng);
        auto x = param({2, 8, 5, 5}, rng);
        auto params = layer.named_tensors();
        params.push_back({"x", x, true});
        run("QuatConv2d", params, [&] { return project(layer.forward(x, eval_ctx), 16); }, 16);
    }
    {
        qnn::QuatConvTranspose2d<double> layer(2, 1, {3, 3}, {2, 1}, {1, 1}, {1, 0}, true, rng);
        auto x = param({2, 8, 3, 4}, rng);
        auto params = layer.named_tensors();
        params.push_back({"x", x, true});
        run("QuatConvTranspose2d", params, [&] { return project(layer.forward(x, eval_ctx), 17); }, 17);
    }
    {
        qnn::QuatDense<double> layer(3, 2, true, rng);
        auto x = param({4, 12}, rng);
        auto params = layer.named_tensors();
        params.push_back({"x", x, true});
        run("QuatDense", params, [&] { return project(layer.forward(x, eval_ctx), 18); }, 18);
    }
    {
        // Full model loss on a 16x8 input (same topology, embedding 4x2x4),
        // inference mode. Fresh biases are zero, which parks ReLUs fed by
        // zero activations on their kink, so they are moved off it.
        rhemo::RhEmoConfig cfg;
        cfg.input_h = 16;
        cfg.input_w = 8;
        cfg.head_hidden = 4;
        rhemo::RhEmoModel<double> m(cfg, rng);
        for (auto& nt : m.named_tensors())
            if (nt.name.ends_with(".bias") || nt.name.ends_with(".beta"))
                for (auto& v : nt.tensor.data())
                    v = rng.uniform(0.05, 0.3);
        const auto x = random_tensor<double>({2, 1, 16, 8}, rng, 0.05, 0.95);
        const std::vector<data::EmotionTarget> t = {{1, 1, 0, 1}, {2, 0, 1, 0}};
        m.set_requires_grad(true);
        run("RH-emo loss (alpha 100, beta 0.01)", m.parameters(),
            [&] {
                auto z = m.encode(x, eval_ctx);
                return rhemo::rhemo_loss(x, m.reconstruct(z, eval_ctx), m.classify(z, eval_ctx), t, {100.0, 0.01})
                    .total;
            },
            19);
    }
    const double secs = seconds_since(t0);
    rep.check(secs < 120.0, "runtime " + fmt(secs) + " s");
    rep.note(std::to_string(suites) + " checks, >= " + std::to_string(fewest) + " samples each, worst rel error " +
             fmt(worst));
}

// ---------------------------------------------------------------------------
// 4

void parameter_accounting(Report& rep)
{
    const auto t0 = Clock::now();
    bool quarter = true;
    for (const qnn::LayerShape s : {qnn::LayerShape{4096, 4096, 1, 1, true, false},
                                     qnn::LayerShape{64, 128, 3, 3, true, false},
                                     qnn::LayerShape{4, 8, 5, 3, false, false}}) {
        auto q = s;
        q.quaternion = true;
        quarter = quarter && 4 * qnn::layer_weight_count(q) == qnn::layer_weight_count(s);
    }
    rep.check(quarter, "paired layer weight ratio is not exactly 0.25");

    auto ratio = [](zoo::ArchSpec (*make)(zoo::Mode, std::size_t)) {
        const auto r = zoo::audit_params(make(zoo::Mode::real, 4));
        const auto q = zoo::audit_params(make(zoo::Mode::quaternion, 4));
        return q.ratio_to(r);
    };
    const double vgg = ratio(zoo::vgg16), alex = ratio(zoo::alexnet), resnet = ratio(zoo::resnet50);
    rep.check(vgg >= 0.05 && vgg <= 0.08, "VGG16 ratio " + fmt(vgg));
    rep.check(alex >= 0.20 && alex <= 0.30, "AlexNet ratio " + fmt(alex));
    rep.check(resnet >= 0.20 && resnet <= 0.30, "ResNet-50 ratio " + fmt(resnet));
    const double secs = seconds_since(t0);
    rep.check(secs < 5.0, "runtime " + fmt(secs) + " s");
    rep.note("ratios VGG16 " + fmt(vgg) + ", AlexNet " + fmt(alex) + ", ResNet-50 " + fmt(resnet));
}

// ---------------------------------------------------------------------------
// 5

void shape_chain(Report& rep)
{
    rhemo::RhEmoConfig cfg;
    cfg.head_hidden = 8;  // heads are not on this path
    Rng rng(505);
    rhemo::RhEmoModel<float> m(cfg, rng);
    const auto x = random_tensor<float>({1, 1, 512, 128}, rng, 0.0, 1.0);
    const auto z = m.encode(x, eval_ctx);
    const auto y = m.decode(z, eval_ctx);
    const auto r = qnn::split_mean(y);
    rep.check(z.shape() == Shape{1, 4, 64, 64}, "embedding shape");
    rep.check(y.shape() == Shape{1, 4, 512, 128}, "decoder output shape");
    rep.check(r.shape() == Shape{1, 1, 512, 128}, "split_mean shape");
    rep.check(4 * z.numel() == x.numel(), "embedding is not a quarter of the input");
    rep.check(4 * qser::shape_numel(cfg.embedding_shape()) == 512u * 128u, "configured embedding size");
    rep.note("1x512x128 -> 4x64x64 -> 4x512x128 -> 1x512x128, embedding/input = " +
             fmt(static_cast<double>(z.numel()) / static_cast<double>(x.numel())));
}

// ---------------------------------------------------------------------------
// 6

void loss_reproduction(Report& rep)
{
    const std::vector<double> xs = {0.0, 0.25, 1.0, 0.6, 0.1, 0.9, 0.5, 0.3};
    const std::vector<double> ys = {0.2, 0.3, 0.7, 0.5, 0.15, 0.8, 0.45, 0.4};
    Tensor<double> x({2, 1, 2, 2}, xs), y({2, 1, 2, 2}, ys);
    rhemo::Predictions<double> p;
    p.discrete = Tensor<double>({2, 4}, std::vector<double>{0.1, 0.6, 0.2, 0.1, 0.25, 0.25, 0.4, 0.1});
    p.valence = Tensor<double>({2, 1}, std::vector<double>{0.8, 0.3});
    p.arousal = Tensor<double>({2, 1}, std::vector<double>{0.4, 0.9});
    p.dominance = Tensor<double>({2, 1}, std::vector<double>{0.55, 0.05});
    const std::vector<data::EmotionTarget> t = {{1, 1, 0, 1}, {2, 0, 1, 0}};

    auto bce = [](double p, double y) { return -(y * std::log(p) + (1 - y) * std::log(1 - p)); };
    double recon = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
        recon += bce(ys[i], xs[i]);
    recon /= 8.0;
    const double ce = -(std::log(0.6) + std::log(0.4)) / 2.0;
    const double vad = (bce(0.8, 1) + bce(0.3, 0)) / 2.0 + (bce(0.4, 0) + bce(0.9, 1)) / 2.0 +
                       (bce(0.55, 1) + bce(0.05, 0)) / 2.0;
    const double expected = recon + 0.01 * (ce + 100.0 * vad);
    const double got = rhemo::rhemo_loss(x, y, p, t, {100.0, 0.01}).total.item();
    rep.check(std::abs(got - expected) < 1e-6, "micro-case " + fmt(got) + " vs " + fmt(expected));

    Rng rng(606);
    bool beta_zero = true;
    double alpha_err = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto xr = random_tensor<double>({3, 1, 2, 2}, rng, 0.0, 1.0);
        const auto yr = random_tensor<double>({3, 1, 2, 2}, rng, 0.05, 0.95);
        rhemo::Predictions<double> pr;
        pr.discrete = ops::softmax(random_tensor<double>({3, 4}, rng));
        for (std::size_t h = 1; h < 4; ++h)
            pr.head(h) = random_tensor<double>({3, 1}, rng, 0.05, 0.95);
        std::vector<data::EmotionTarget> tr;
        for (int i = 0; i < 3; ++i)
            tr.push_back({static_cast<int>(rng.below(4)), static_cast<int>(rng.below(2)),
                          static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))});
        const auto zero = rhemo::rhemo_loss(xr, yr, pr, tr, {rng.uniform(0.0, 500.0), 0.0});
        beta_zero = beta_zero && zero.total.item() == ops::bce_loss(yr, xr).item();

        const double beta = rng.uniform(0.001, 1.0), alpha = rng.uniform(1.0, 200.0);
        const auto a = rhemo::rhemo_loss(xr, yr, pr, tr, {alpha, beta});
        const auto b = rhemo::rhemo_loss(xr, yr, pr, tr, {2.0 * alpha, beta});
        const double terms = a.valence + a.arousal + a.dominance;
        // L(2a) - L(a) = a * beta * (bce_v + bce_a + bce_d)
        const double rel = std::abs((b.total.item() - a.total.item()) - alpha * beta * terms) / b.total.item();
        alpha_err = std::max(alpha_err, rel);
    }
    rep.check(beta_zero, "beta=0 total differs from the reconstruction BCE");
    rep.check(alpha_err < 1e-12, "alpha linearity residual " + fmt(alpha_err));
    rep.note("micro-case error " + fmt(std::abs(got - expected)) + ", alpha-linearity residual " + fmt(alpha_err));
}

// ---------------------------------------------------------------------------
// 7

void two_stage_training(Report& rep)
{
    const auto& c = main_corpus();
    rep.check(c.raw.size() == 200, "corpus has " + std::to_string(c.raw.size()) + " items");
    auto& tr = trained_rhemo();
    std::vector<double> recon;
    for (const auto& e : tr.result.history)
        if (e.stage == 1)
            recon.push_back(e.val.reconstruction);
    bool monotone = recon.size() >= 5;
    for (std::size_t i = 1; i < 5 && i < recon.size(); ++i)
        monotone = monotone && recon[i] < recon[i - 1];
    std::string curve;
    for (std::size_t i = 0; i < std::min<std::size_t>(5, recon.size()); ++i)
        curve += (i ? " " : "") + fmt(recon[i]);
    rep.check(monotone, "stage-1 val reconstruction not decreasing: " + curve);

    const auto train = minmax_split(c, "train");
    const auto test = minmax_split(c, "test");
    const auto ev = rhemo::evaluate(*tr.model, test, {100.0, 0.01}, 20);
    const double oracle = nearest_centroid_accuracy(train, test);
    rep.check(oracle >= 0.9, "nearest-centroid oracle " + fmt(oracle) + " does not support the 0.9 floor");
    rep.check(ev.accuracy[0] >= 0.9, "discrete test accuracy " + fmt(ev.accuracy[0]));
    rep.check(tr.seconds < 900.0, "runtime " + fmt(tr.seconds) + " s");
    rep.note("stage-1 val recon " + curve + "; stages ran " + std::to_string(tr.result.stage1.epochs_run) + "+" +
             std::to_string(tr.result.stage2.epochs_run) + " epochs; discrete test acc " + fmt(ev.accuracy[0]) +
             " (oracle " + fmt(oracle) + ")");
}

// ---------------------------------------------------------------------------
// 8

xp::ExperimentConfig matrix_config(xp::Row row)
{
    xp::ExperimentConfig cfg;
    cfg.row = row;
    cfg.arch = "mini-cnn";
    cfg.fit.lr = 1e-3;
    cfg.fit.max_epochs = 60;
    cfg.seed = 8;
    return cfg;
}

// Every non-final tensor of a fresh transfer_init target must equal the source.
bool transfer_keeps_body(xp::Row row, const ckpt::Checkpoint& source, std::string& why)
{
    Rng rng(88);
    const auto cfg = matrix_config(row);
    xp::SerModel m(cfg.arch_spec(), cfg.rhemo, rng);
    zoo::transfer_init(m.network(), source, true);
    const auto target = xp::network_checkpoint(m);
    std::size_t body = 0;
    for (const auto& s : source.tensors) {
        if (s.name.starts_with("final."))
            continue;
        const auto* t = target.find(s.name);
        if (!t || t->values() != s.tensor.values()) {
            why = s.name;
            return false;
        }
        ++body;
    }
    return body > 0;
}

void row_matrix(Report& rep)
{
    const auto rh = &trained_rhemo().checkpoint;
    std::string detail;
    auto run = [&](xp::Row row, const corpus::Corpus& c, const ckpt::Checkpoint* pretrained) {
        return xp::run_experiment(matrix_config(row), xp::Inputs{&c, rh, pretrained});
    };
    const auto real = run(xp::Row::real, main_corpus(), nullptr);
    const auto real_src = xp::network_checkpoint(*run(xp::Row::real, source_corpus(), nullptr).model);
    const auto real_pre = run(xp::Row::real_pretrained, main_corpus(), &real_src);
    const auto quat_row = run(xp::Row::rhemo_quat, main_corpus(), nullptr);
    const auto quat_src = xp::network_checkpoint(*run(xp::Row::rhemo_quat, source_corpus(), nullptr).model);
    const auto quat_pre = run(xp::Row::rhemo_quat_pretrained, main_corpus(), &quat_src);

    for (const auto* r : {&real, &real_pre, &quat_row, &quat_pre}) {
        rep.check(r->metrics.test_count > 0 && std::isfinite(r->metrics.test_loss), r->metrics.row + " incomplete");
        detail += (detail.empty() ? "" : ", ") + r->metrics.row + " " + fmt(r->metrics.test_accuracy);
    }
    rep.check(quat_row.metrics.test_accuracy >= 0.9, "rhemo+quat test accuracy " + fmt(quat_row.metrics.test_accuracy));
    rep.check(quat_pre.metrics.test_accuracy >= 0.9,
              "rhemo+quat-pretrained test accuracy " + fmt(quat_pre.metrics.test_accuracy));
    std::string why;
    rep.check(transfer_keeps_body(xp::Row::real_pretrained, real_src, why), "real transfer_init changed " + why);
    rep.check(transfer_keeps_body(xp::Row::rhemo_quat_pretrained, quat_src, why),
              "quaternion transfer_init changed " + why);
    rep.note("test accuracy " + detail);
}

// ---------------------------------------------------------------------------
// 9

void ablations(Report& rep)
{
    const auto& c = main_corpus();
    const auto train = minmax_split(c, "train");
    const auto val = minmax_split(c, "val");
    rhemo::TrainConfig tc = rhemo_schedule();
    tc.stage1.max_epochs = 1;
    tc.stage2.max_epochs = 1;
    std::string ran;
    for (auto v : rhemo::ablation_variants) {
        const auto rec = xp::run_rhemo_variant(v, rhemo::RhEmoConfig{}, tc, train, val);
        rep.check(std::isfinite(rec.val_loss) && rec.epochs > 0, rhemo::variant_name(v) + " did not train");
        ran += (ran.empty() ? "" : ", ") + rhemo::variant_name(v);
    }

    rhemo::RhEmoConfig enc_cfg;
    enc_cfg.head_hidden = 8;
    Rng rng(909);
    rhemo::RhEmoModel<float> enc(enc_cfg, rng);
    const auto source = ckpt::capture(enc, enc_cfg.fingerprint());
    auto cfg = matrix_config(xp::Row::rhemo_quat);
    cfg.fit.max_epochs = 1;
    cfg.encoder = xp::EncoderMode::no_pretrain;
    const auto scratch = xp::run_experiment(cfg, xp::Inputs{&c, nullptr, nullptr});
    rep.check(scratch.metrics.history.size() == 1 && std::isfinite(scratch.metrics.test_loss), "no-pretrain run");
    cfg.encoder = xp::EncoderMode::frozen;
    const auto frozen = xp::run_experiment(cfg, xp::Inputs{&c, &source, nullptr});
    rep.check(frozen.metrics.history.size() == 1 && std::isfinite(frozen.metrics.test_loss), "frozen run");
    rep.check(flat(frozen.model->named_tensors(), "encoder.") == flat(source, "encoder."),
              "frozen encoder tensors changed");
    rep.note(ran + ", no-pretrain, frozen-encoder");
}

// ---------------------------------------------------------------------------
// 10

void determinism_and_persistence(Report& rep)
{
    const auto& c = main_corpus();
    auto cfg = matrix_config(xp::Row::rhemo_quat);
    cfg.fit.max_epochs = 3;
    rhemo::RhEmoConfig enc_cfg;
    enc_cfg.head_hidden = 8;
    Rng rng(1010);
    rhemo::RhEmoModel<float> enc(enc_cfg, rng);
    const auto source = ckpt::capture(enc, enc_cfg.fingerprint());
    const xp::Inputs in{&c, &source, nullptr};
    const auto a = xp::run_experiment(cfg, in);
    const auto b = xp::run_experiment(cfg, in);
    rep.check(a.metrics.same_results(b.metrics), "same-seed metrics differ");

    const auto dir = fs::temp_directory_path() / "qser_acceptance";
    fs::create_directories(dir);
    ckpt::save(a.checkpoint, dir / "first.ckpt");
    const auto loaded = ckpt::load(dir / "first.ckpt");
    ckpt::save(loaded, dir / "second.ckpt");
    const auto first = file_bytes(dir / "first.ckpt");
    rep.check(!first.empty() && first == file_bytes(dir / "second.ckpt"), "save/load/save bytes differ");
    const auto ev = xp::evaluate_checkpoint(loaded, c);
    rep.check(ev.accuracy == a.metrics.test_accuracy,
              "evaluate gives " + fmt(ev.accuracy) + " vs recorded " + fmt(a.metrics.test_accuracy));
    rep.check(ev.loss == a.metrics.test_loss, "evaluate loss differs from recorded test loss");
    fs::remove_all(dir);
    rep.note(std::to_string(first.size()) + "-byte checkpoint; test accuracy " + fmt(ev.accuracy) + " replayed");
}

// ---------------------------------------------------------------------------
// 11

std::vector<double> sine(double freq, double seconds, int rate)
{
    std::vector<double> x(static_cast<std::size_t>(seconds * rate));
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = 0.5 * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
    return x;
}

void preprocessing(Report& rep)
{
    const std::size_t bins = 128;
    const auto four = audio::preprocess(audio::Pcm{sine(1000.0, 4.0, 16000), 16000});
    // 1 + (64000 - 256) / 128 = 499 frames carry signal.
    bool peak16 = four.size() == 1;
    for (std::size_t f = 0; peak16 && f < 499; ++f) {
        const auto first = four[0].begin() + static_cast<std::ptrdiff_t>(f * bins);
        peak16 = std::max_element(first, first + static_cast<std::ptrdiff_t>(bins)) - first == 16;
    }
    rep.check(peak16, "1 kHz peak is not bin 16 in every signal frame");

    const auto six = audio::preprocess(audio::Pcm{sine(1000.0, 6.0, 16000), 16000});
    rep.check(six.size() == 2, "6 s gave " + std::to_string(six.size()) + " fragments");

    const auto silent = audio::preprocess(audio::Pcm{std::vector<double>(64000, 0.0), 16000});
    bool zeros = silent.size() == 1 && std::all_of(silent[0].begin(), silent[0].end(), [](float v) { return v == 0; });
    data::LabeledSet set;
    set.item_shape = {1, 512, 128};
    for (const auto& f : silent)
        set.push(f, {});
    corpus::normalize(set, corpus::compute_stats(set, {0}), corpus::NormMode::minmax);
    zeros = zeros && std::all_of(set.values.begin(), set.values.end(), [](float v) { return v == 0; });
    rhemo::RhEmoConfig cfg;
    cfg.head_hidden = 8;
    Rng rng(1111);
    rhemo::RhEmoModel<float> m(cfg, rng);
    const auto z = m.encode(data::gather<float>(set, std::vector<std::size_t>{0}), eval_ctx);
    const bool finite = std::all_of(z.data().begin(), z.data().end(), [](float v) { return std::isfinite(v); });
    rep.check(zeros && finite, "silent input not handled cleanly");
    rep.note("1 kHz -> bin 16, 6 s -> " + std::to_string(six.size()) + " fragments, silence -> zeros");
}

struct Criterion {
    int id;
    const char* name;
    void (*run)(Report&);
};

const Criterion criteria[] = {
    {1, "quaternion algebra oracles", quaternion_oracles},
    {2, "layer equivalence", layer_equivalence},
    {3, "gradient correctness", gradient_checks},
    {4, "parameter accounting", parameter_accounting},
    {5, "shape chain", shape_chain},
    {6, "RH-emo loss reproduction", loss_reproduction},
    {7, "two-stage training", two_stage_training},
    {8, "Mini-CNN row matrix", row_matrix},
    {9, "ablation constructibility", ablations},
    {10, "determinism and persistence", determinism_and_persistence},
    {11, "preprocessing", preprocessing},
};

}  // namespace

int main(int argc, char** argv)
{
    std::set<int> only;
    for (int i = 1; i < argc; ++i)
        only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.contains(c.id))
            continue;
        Report rep;
        const auto t0 = Clock::now();
        try {
            c.run(rep);
        } catch (const std::exception& e) {
            rep.failures.push_back(std::string("exception: ") + e.what());
        }
        const bool ok = rep.failures.empty();
        failed += !ok;
        std::string detail;
        for (const auto& s : ok ? rep.notes : rep.failures)
            detail += (detail.empty() ? "" : "; ") + s;
        std::cout << (ok ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << fmt(seconds_since(t0))
                  << " s): " << detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
