#include "qser/rhemo.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "qser/errors.hpp"
#include "qser/optim.hpp"

namespace qser::rhemo {

using data::EmotionTarget;
using data::LabeledSet;
using nn::Context;
using ops::Pair;

Shape RhEmoConfig::embedding_shape() const
{
    return {4, input_h / 8, input_w / 2};
}

std::size_t RhEmoConfig::head_in_features() const
{
    const std::size_t plane = (input_h / 8) * (input_w / 2);
    return head_input == HeadInput::single_channel ? plane : 4 * plane;
}

bool RhEmoConfig::any_head() const
{
    return heads[0] || heads[1] || heads[2] || heads[3];
}

void RhEmoConfig::validate() const
{
    if (input_h == 0 || input_w == 0 || input_h % 8 != 0 || input_w % 2 != 0)
        throw ConfigError("rhemo input must be a positive multiple of 8 frames by 2 bins, got " +
                          std::to_string(input_h) + "x" + std::to_string(input_w));
    if (head_hidden == 0)
        throw ConfigError("rhemo head_hidden must be positive");
    if (decoder == DecoderKind::none && !any_head())
        throw ConfigError("rhemo config has neither a decoder nor a classification head");
    if (!(bn_eps > 0.0) || bn_momentum < 0.0 || bn_momentum > 1.0)
        throw ConfigError("rhemo batchnorm eps must be positive and momentum in [0,1]");
}

std::string RhEmoConfig::fingerprint() const
{
    std::ostringstream s;
    s << "rhemo/in=" << input_h << "x" << input_w << "/hidden=" << head_hidden << "/decoder=" << to_string(decoder)
      << "/heads=";
    for (bool h : heads)
        s << (h ? '1' : '0');
    s << "/head_input=" << to_string(head_input);
    return s.str();
}

RhEmoConfig variant_config(Variant v, RhEmoConfig base)
{
    switch (v) {
    case Variant::full:
        break;
    case Variant::real_decoder:
        base.decoder = DecoderKind::real;
        break;
    case Variant::reconstruction_only:
        base.heads = {false, false, false, false};
        break;
    case Variant::emotion_only:
        base.decoder = DecoderKind::none;
        break;
    case Variant::discrete_only:
        base.heads = {true, false, false, false};
        break;
    case Variant::vad_only:
        base.heads = {false, true, true, true};
        break;
    }
    return base;
}

std::string variant_name(Variant v)
{
    switch (v) {
    case Variant::full: return "full";
    case Variant::real_decoder: return "real-decoder";
    case Variant::reconstruction_only: return "reconstruction-only";
    case Variant::emotion_only: return "emotion-only";
    case Variant::discrete_only: return "discrete-only";
    case Variant::vad_only: return "vad-only";
    }
    return "?";
}

Variant parse_variant(const std::string& name)
{
    for (Variant v : {Variant::full, Variant::real_decoder, Variant::reconstruction_only, Variant::emotion_only,
                      Variant::discrete_only, Variant::vad_only})
        if (variant_name(v) == name)
            return v;
    throw ConfigError("unknown rhemo variant '" + name + "'");
}

std::string to_string(DecoderKind k)
{
    switch (k) {
    case DecoderKind::quaternion: return "quaternion";
    case DecoderKind::real: return "real";
    case DecoderKind::none: return "none";
    }
    return "?";
}

DecoderKind parse_decoder(const std::string& s)
{
    if (s == "quaternion")
        return DecoderKind::quaternion;
    if (s == "real")
        return DecoderKind::real;
    if (s == "none")
        return DecoderKind::none;
    throw ConfigError("decoder must be quaternion, real or none, got '" + s + "'");
}

std::string to_string(HeadInput h)
{
    return h == HeadInput::single_channel ? "single" : "full";
}

HeadInput parse_head_input(const std::string& s)
{
    if (s == "single")
        return HeadInput::single_channel;
    if (s == "full")
        return HeadInput::full_embedding;
    throw ConfigError("head_input must be single or full, got '" + s + "'");
}

template <typename T>
const Tensor<T>& Predictions<T>::head(std::size_t h) const
{
    switch (h) {
    case 0: return discrete;
    case 1: return valence;
    case 2: return arousal;
    case 3: return dominance;
    }
    throw UsageError("head index out of range");
}

template <typename T>
Tensor<T>& Predictions<T>::head(std::size_t h)
{
    return const_cast<Tensor<T>&>(std::as_const(*this).head(h));
}

// ---------------------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const RhEmoConfig& config, Rng& rng) : config_(config)
{
    config_.validate();
    const Pair k3{3, 3}, s1{1, 1}, p1{1, 1};

    // Encoder blocks: conv(3x3, same) -> ReLU -> max-pool, channel counts
    // 1, 2, 4. Batch norm sits after the first block's pool.
    body_.template emplace<nn::Conv2d<T>>("conv1", 1, 1, k3, s1, p1, true, rng);
    body_.template emplace<nn::ReLU<T>>("relu1");
    body_.template emplace<nn::MaxPool<T>>("pool1", Pair{2, 2}, Pair{2, 2});
    body_.template emplace<nn::BatchNorm<T>>("bn1", 1, config_.bn_momentum, config_.bn_eps);
    body_.template emplace<nn::Conv2d<T>>("conv2", 1, 2, k3, s1, p1, true, rng);
    body_.template emplace<nn::ReLU<T>>("relu2");
    body_.template emplace<nn::MaxPool<T>>("pool2", Pair{2, 1}, Pair{2, 1});
    body_.template emplace<nn::Conv2d<T>>("conv3", 2, 4, k3, s1, p1, true, rng);
    body_.template emplace<nn::ReLU<T>>("relu3");
    body_.template emplace<nn::MaxPool<T>>("pool3", Pair{2, 1}, Pair{2, 1});
}

template <typename T>
Tensor<T> Encoder<T>::forward(const Tensor<T>& x, Context& ctx)
{
    const Shape want{1, config_.input_h, config_.input_w};
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != want)
        throw ShapeError("rhemo encode: expected [N," + std::to_string(want[0]) + "," + std::to_string(want[1]) +
                         "," + std::to_string(want[2]) + "], got " + shape_str(x.shape()));
    auto z = body_.forward(x, ctx);
    const Shape emb = config_.embedding_shape();
    if (Shape(z.shape().begin() + 1, z.shape().end()) != emb)
        throw ShapeError("rhemo encode produced " + shape_str(z.shape()));
    return z;
}

template <typename T>
void Encoder<T>::collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out)
{
    body_.collect(prefix, out);
}

template <typename T>
RhEmoModel<T>::RhEmoModel(const RhEmoConfig& config, Rng& rng) : config_(config), encoder_(config, rng)
{
    const Pair k3{3, 3}, p1{1, 1};

    // Decoder: strides undo the pools in reverse order; output padding makes
    // each stride-2 axis exactly double.
    const Pair up_t{2, 1}, op_t{1, 0}, up_tf{2, 2}, op_tf{1, 1};
    if (config_.decoder == DecoderKind::quaternion) {
        decoder_.template emplace<qnn::QuatConvTranspose2d<T>>("tconv1", 1, 2, k3, up_t, p1, op_t, true, rng);
        decoder_.template emplace<nn::ReLU<T>>("relu1");
        decoder_.template emplace<qnn::QuatConvTranspose2d<T>>("tconv2", 2, 1, k3, up_t, p1, op_t, true, rng);
        decoder_.template emplace<nn::ReLU<T>>("relu2");
        decoder_.template emplace<qnn::SplitBatchNorm<T>>("bn2", 4, config_.bn_momentum, config_.bn_eps);
        decoder_.template emplace<qnn::QuatConvTranspose2d<T>>("tconv3", 1, 1, k3, up_tf, p1, op_tf, true, rng);
        decoder_.template emplace<nn::Sigmoid<T>>("sigmoid");
    } else if (config_.decoder == DecoderKind::real) {
        decoder_.template emplace<nn::ConvTranspose2d<T>>("tconv1", 4, 8, k3, up_t, p1, op_t, true, rng);
        decoder_.template emplace<nn::ReLU<T>>("relu1");
        decoder_.template emplace<nn::ConvTranspose2d<T>>("tconv2", 8, 4, k3, up_t, p1, op_t, true, rng);
        decoder_.template emplace<nn::ReLU<T>>("relu2");
        decoder_.template emplace<nn::BatchNorm<T>>("bn2", 4, config_.bn_momentum, config_.bn_eps);
        decoder_.template emplace<nn::ConvTranspose2d<T>>("tconv3", 4, 1, k3, up_tf, p1, op_tf, true, rng);
        decoder_.template emplace<nn::Sigmoid<T>>("sigmoid");
    }

    const std::size_t in = config_.head_in_features(), hidden = config_.head_hidden;
    for (std::size_t h = 0; h < 4; ++h) {
        if (!config_.heads[h])
            continue;
        auto head = std::make_unique<nn::Sequential<T>>();
        head->template emplace<nn::Dense<T>>("fc1", in, hidden, true, rng);
        head->template emplace<nn::ReLU<T>>("relu1");
        dropouts_.push_back(&head->template emplace<nn::Dropout<T>>("drop1", 0.0));
        head->template emplace<nn::Dense<T>>("fc2", hidden, hidden, true, rng);
        head->template emplace<nn::ReLU<T>>("relu2");
        dropouts_.push_back(&head->template emplace<nn::Dropout<T>>("drop2", 0.0));
        head->template emplace<nn::Dense<T>>("fc3", hidden, h == 0 ? std::size_t{4} : std::size_t{1}, true, rng);
        heads_[h] = std::move(head);
    }
}

template <typename T>
Tensor<T> RhEmoModel<T>::encode(const Tensor<T>& x, Context& ctx)
{
    return encoder_.forward(x, ctx);
}

template <typename T>
Tensor<T> RhEmoModel<T>::decode(const Tensor<T>& z, Context& ctx)
{
    if (config_.decoder == DecoderKind::none)
        throw UsageError("rhemo decode: this variant has no decoder");
    const Shape emb = config_.embedding_shape();
    if (z.rank() != 4 || Shape(z.shape().begin() + 1, z.shape().end()) != emb)
        throw ShapeError("rhemo decode: expected [N," + shape_str(emb).substr(1) + ", got " + shape_str(z.shape()));
    auto y = decoder_.forward(z, ctx);
    const std::size_t channels = config_.decoder == DecoderKind::quaternion ? 4 : 1;
    if (y.shape() != Shape{z.dim(0), channels, config_.input_h, config_.input_w})
        throw ShapeError("rhemo decode produced " + shape_str(y.shape()));
    return y;
}

template <typename T>
Tensor<T> RhEmoModel<T>::reconstruct(const Tensor<T>& z, Context& ctx)
{
    auto y = decode(z, ctx);
    return config_.decoder == DecoderKind::quaternion ? qnn::split_mean(y) : y;
}

template <typename T>
Predictions<T> RhEmoModel<T>::classify(const Tensor<T>& z, Context& ctx)
{
    const Shape emb = config_.embedding_shape();
    if (z.rank() != 4 || Shape(z.shape().begin() + 1, z.shape().end()) != emb)
        throw ShapeError("rhemo classify: bad embedding shape " + shape_str(z.shape()));
    Predictions<T> p;
    const std::size_t n = z.dim(0);
    Tensor<T> full;
    if (config_.head_input == HeadInput::full_embedding)
        full = ops::flatten(z);
    for (std::size_t h = 0; h < 4; ++h) {
        if (!heads_[h])
            continue;
        Tensor<T> in = config_.head_input == HeadInput::single_channel
                           ? ops::reshape(ops::select_channel(z, h), {n, config_.head_in_features()})
                           : full;
        auto logits = heads_[h]->forward(in, ctx);
        p.head(h) = h == 0 ? ops::softmax(logits) : ops::sigmoid(logits);
    }
    return p;
}

template <typename T>
void RhEmoModel<T>::set_dropout(double rate)
{
    if (!(rate >= 0.0 && rate < 1.0))
        throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
    for (auto* d : dropouts_)
        d->rate = rate;
}

template <typename T>
std::vector<nn::NamedTensor<T>> RhEmoModel<T>::encoder_tensors()
{
    std::vector<nn::NamedTensor<T>> out;
    encoder_.collect("encoder.", out);
    return out;
}

template <typename T>
std::vector<nn::NamedTensor<T>> RhEmoModel<T>::head_tensors()
{
    std::vector<nn::NamedTensor<T>> out;
    for (std::size_t h = 0; h < 4; ++h)
        if (heads_[h])
            heads_[h]->collect(std::string("heads.") + head_names[h] + ".", out);
    return out;
}

template <typename T>
void RhEmoModel<T>::collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out)
{
    encoder_.collect(prefix + "encoder.", out);
    decoder_.collect(prefix + "decoder.", out);
    for (std::size_t h = 0; h < 4; ++h)
        if (heads_[h])
            heads_[h]->collect(prefix + "heads." + head_names[h] + ".", out);
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Tensor<T> binary_targets(std::span<const EmotionTarget> targets, std::size_t head)
{
    Tensor<T> t({targets.size(), 1});
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const int v = head == 1 ? targets[i].valence : head == 2 ? targets[i].arousal : targets[i].dominance;
        t.data()[i] = static_cast<T>(v);
    }
    return t;
}

namespace {

template <typename T>
double checked(const Tensor<T>& term, const char* name)
{
    const double v = static_cast<double>(term.item());
    if (!std::isfinite(v))
        throw NumericalError(std::string("rhemo loss: ") + name + " term is not finite");
    return v;
}

template <typename T>
Tensor<T> plus(const Tensor<T>& a, const Tensor<T>& b)
{
    return a.defined() ? ops::add(a, b) : b;
}

}  // namespace

template <typename T>
LossTerms<T> rhemo_loss(const Tensor<T>& x, const Tensor<T>& y_r, const Predictions<T>& preds,
                        std::span<const EmotionTarget> targets, const LossWeights& w)
{
    if (!(w.alpha >= 0.0) || !(w.beta >= 0.0))
        throw ConfigError("loss weights alpha and beta must be nonnegative");
    LossTerms<T> out;
    Tensor<T> recon;
    if (y_r.defined()) {
        recon = ops::bce_loss(y_r, x);
        out.reconstruction = checked(recon, "reconstruction");
    }

    // Classification part: CE + alpha * (BCE_v + BCE_a + BCE_d).
    Tensor<T> cls;
    if (preds.discrete.defined()) {
        std::vector<int> labels(targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i)
            labels[i] = targets[i].discrete;
        cls = ops::ce_loss(preds.discrete, std::span<const int>(labels));
        out.discrete = checked(cls, "discrete");
    }
    Tensor<T> vad;
    double* vad_out[3] = {&out.valence, &out.arousal, &out.dominance};
    for (std::size_t h = 1; h < 4; ++h) {
        if (!preds.head(h).defined())
            continue;
        auto term = ops::bce_loss(preds.head(h), binary_targets<T>(targets, h));
        *vad_out[h - 1] = checked(term, head_names[h]);
        vad = plus(vad, term);
    }
    if (vad.defined())
        cls = plus(cls, ops::scale(vad, w.alpha));

    if (cls.defined())
        out.total = plus(recon, ops::scale(cls, w.beta));
    else if (recon.defined())
        out.total = recon;
    else
        throw UsageError("rhemo loss: no reconstruction and no predictions");
    checked(out.total, "total");
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::span<const EmotionTarget> batch_targets(const LabeledSet& set, const std::vector<std::size_t>& idx,
                                             std::vector<EmotionTarget>& buffer)
{
    buffer.clear();
    for (std::size_t i : idx)
        buffer.push_back(set.targets[i]);
    return buffer;
}

bool starts_with(const std::string& s, const std::string& prefix)
{
    return s.compare(0, prefix.size(), prefix) == 0;
}

std::string fmt(double v)
{
    if (std::isnan(v))
        return "-";
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

}  // namespace

Evaluation evaluate(RhEmoModel<float>& model, const LabeledSet& set, const LossWeights& w, std::size_t batch_size,
                    bool with_heads)
{
    if (set.size() == 0)
        throw DataError("rhemo evaluate: empty set");
    NoGradGuard no_grad;
    Context ctx;
    const auto& cfg = model.config();
    const bool heads = with_heads && cfg.any_head();
    const bool decoder = cfg.decoder != DecoderKind::none;
    Evaluation ev;
    std::array<std::size_t, 4> correct{};
    std::vector<EmotionTarget> buf;
    for (const auto& idx : data::make_batches(set.size(), batch_size, nullptr)) {
        auto x = data::gather<float>(set, idx);
        auto targets = batch_targets(set, idx, buf);
        auto z = model.encode(x, ctx);
        Tensor<float> y_r = decoder ? model.reconstruct(z, ctx) : Tensor<float>{};
        Predictions<float> p = heads ? model.classify(z, ctx) : Predictions<float>{};
        if (!decoder && !heads)
            throw ConfigError("rhemo evaluate: nothing to evaluate");
        const auto terms = rhemo_loss(x, y_r, p, targets, w);
        const double b = static_cast<double>(idx.size());
        ev.loss += terms.total.item() * b;
        ev.reconstruction += terms.reconstruction * b;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (p.discrete.defined()) {
                auto row = p.discrete.data().subspan(i * 4, 4);
                const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
                correct[0] += arg == targets[i].discrete;
            }
            for (std::size_t h = 1; h < 4; ++h)
                if (p.head(h).defined()) {
                    const int want = h == 1 ? targets[i].valence : h == 2 ? targets[i].arousal : targets[i].dominance;
                    correct[h] += (p.head(h).data()[i] > 0.5f ? 1 : 0) == want;
                }
        }
        ev.count += idx.size();
    }
    ev.loss /= static_cast<double>(ev.count);
    ev.reconstruction /= static_cast<double>(ev.count);
    for (std::size_t h = 0; h < 4; ++h)
        ev.accuracy[h] = heads && cfg.heads[h]
                             ? static_cast<double>(correct[h]) / static_cast<double>(ev.count)
                             : std::numeric_limits<double>::quiet_NaN();
    return ev;
}

StageSummary train_stage(RhEmoModel<float>& model, int stage, const StageConfig& sc, const TrainConfig& tc,
                         const LabeledSet& train, const LabeledSet& val, std::vector<EpochRecord>& history)
{
    if (train.size() == 0 || val.size() == 0)
        throw DataError("rhemo training needs non-empty train and validation splits");
    if (!(sc.lr > 0.0) || sc.max_epochs == 0)
        throw ConfigError("rhemo stage " + std::to_string(stage) + ": lr and max_epochs must be positive");
    const auto& cfg = model.config();
    const bool use_heads = sc.beta > 0.0 && cfg.any_head();
    const bool use_decoder = cfg.decoder != DecoderKind::none;
    if (!use_heads && !use_decoder)
        throw ConfigError("rhemo stage " + std::to_string(stage) + " has no loss term to optimize (beta is 0 and "
                          "there is no decoder)");
    model.set_dropout(sc.dropout);
    const LossWeights weights{sc.alpha, sc.beta};

    std::vector<nn::NamedTensor<float>> params, tracked;
    for (auto& nt : model.named_tensors()) {
        const bool head = starts_with(nt.name, "heads.");
        if (head && !use_heads)
            continue;
        tracked.push_back(nt);
        if (nt.trainable)
            params.push_back(nt);
    }
    optim::Adam<float> adam(params, {sc.lr});

    Rng rng(tc.seed * 1000003ull + static_cast<std::uint64_t>(stage));
    Rng shuffle_rng = rng.fork(1), dropout_rng = rng.fork(2);

    StageSummary summary;
    summary.stage = stage;
    summary.best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<Buffer<float>> best(tracked.size());
    std::vector<EmotionTarget> buf;
    for (std::size_t epoch = 1; epoch <= sc.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        double total = 0.0;
        for (const auto& idx : data::make_batches(train.size(), tc.batch_size, &shuffle_rng)) {
            auto x = data::gather<float>(train, idx);
            auto targets = batch_targets(train, idx, buf);
            Context ctx{true, &dropout_rng};
            GradTape tape;
            auto z = model.encode(x, ctx);
            Tensor<float> y_r = use_decoder ? model.reconstruct(z, ctx) : Tensor<float>{};
            Predictions<float> p = use_heads ? model.classify(z, ctx) : Predictions<float>{};
            LossTerms<float> terms;
            try {
                terms = rhemo_loss(x, y_r, p, targets, weights);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " (stage " + std::to_string(stage) + ", epoch " +
                                     std::to_string(epoch) + ")");
            }
            tape.backward(terms.total);
            adam.step();
            adam.zero_grad();
            total += terms.total.item() * static_cast<double>(idx.size());
        }

        EpochRecord rec;
        rec.stage = stage;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(train.size());
        rec.val = evaluate(model, val, weights, tc.batch_size, cfg.any_head());
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!std::isfinite(rec.val.loss))
            throw NumericalError("rhemo stage " + std::to_string(stage) + ": validation loss is not finite at epoch " +
                                 std::to_string(epoch));
        history.push_back(rec);
        if (tc.log)
            *tc.log << "stage " << stage << " epoch " << epoch << " train " << fmt(rec.train_loss) << " val "
                    << fmt(rec.val.loss) << " recon " << fmt(rec.val.reconstruction) << " acc "
                    << fmt(rec.val.accuracy[0]) << "/" << fmt(rec.val.accuracy[1]) << "/" << fmt(rec.val.accuracy[2])
                    << "/" << fmt(rec.val.accuracy[3]) << " (" << fmt(rec.seconds) << "s)\n";

        summary.epochs_run = epoch;
        if (rec.val.loss < summary.best_val_loss) {
            summary.best_val_loss = rec.val.loss;
            summary.best_epoch = epoch;
            for (std::size_t i = 0; i < tracked.size(); ++i)
                best[i] = tracked[i].tensor.values();
        } else if (epoch - summary.best_epoch >= sc.patience) {
            summary.early_stopped = true;
            break;
        }
    }
    for (std::size_t i = 0; i < tracked.size(); ++i)
        tracked[i].tensor.values() = best[i];
    return summary;
}

TwoStageResult train_two_stage(RhEmoModel<float>& model, const TrainConfig& tc, const LabeledSet& train,
                               const LabeledSet& val, const std::function<void(const StageSummary&)>& on_stage_end)
{
    TwoStageResult result;
    StageConfig s1 = tc.stage1;
    s1.beta = 0.0;  // stage 1 is reconstruction only
    if (model.config().decoder != DecoderKind::none) {
        result.stage1 = train_stage(model, 1, s1, tc, train, val, result.history);
        if (on_stage_end)
            on_stage_end(result.stage1);
    }
    result.stage2 = train_stage(model, 2, tc.stage2, tc, train, val, result.history);
    if (on_stage_end)
        on_stage_end(result.stage2);
    return result;
}

LabeledSet extract_embeddings(RhEmoModel<float>& model, const LabeledSet& spectrograms, std::size_t batch_size)
{
    NoGradGuard no_grad;
    Context ctx;
    LabeledSet out;
    out.item_shape = model.config().embedding_shape();
    out.values.reserve(spectrograms.size() * out.item_numel());
    for (const auto& idx : data::make_batches(spectrograms.size(), batch_size, nullptr)) {
        auto z = model.encode(data::gather<float>(spectrograms, idx), ctx);
        out.values.insert(out.values.end(), z.data().begin(), z.data().end());
        for (std::size_t i : idx)
            out.targets.push_back(spectrograms.targets[i]);
    }
    return out;
}

#define QSER_RHEMO_INSTANTIATE(T)                                                                               \
    template struct Predictions<T>;                                                                             \
    template class Encoder<T>;                                                                                  \
    template class RhEmoModel<T>;                                                                               \
    template LossTerms<T> rhemo_loss(const Tensor<T>&, const Tensor<T>&, const Predictions<T>&,                 \
                                     std::span<const EmotionTarget>, const LossWeights&);                       \
    template Tensor<T> binary_targets(std::span<const EmotionTarget>, std::size_t);

QSER_RHEMO_INSTANTIATE(float)
QSER_RHEMO_INSTANTIATE(double)

}  // namespace qser::rhemo
