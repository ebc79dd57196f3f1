#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qser/dataset.hpp"
#include "qser/nn.hpp"
#include "qser/qnn.hpp"

/// RH-emo: real convolutional encoder, four per-channel emotion heads and a
/// quaternion transposed-convolution decoder.
namespace qser::rhemo {

enum class DecoderKind { quaternion, real, none };
enum class HeadInput { single_channel, full_embedding };

inline constexpr std::array<const char*, 4> head_names = {"discrete", "valence", "arousal", "dominance"};

struct RhEmoConfig {
    std::size_t input_h = 512;  // time frames
    std::size_t input_w = 128;  // frequency bins
    std::size_t head_hidden = 4096;
    DecoderKind decoder = DecoderKind::quaternion;
    std::array<bool, 4> heads{true, true, true, true};
    HeadInput head_input = HeadInput::single_channel;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    /// {4, H/8, W/2}; 4x64x64 for the default input.
    Shape embedding_shape() const;
    std::size_t head_in_features() const;
    bool any_head() const;
    /// Throws ConfigError on an unusable combination.
    void validate() const;
    /// Architecture identity used to match checkpoints.
    std::string fingerprint() const;
};

/// The ablation variants plus the unaltered network.
enum class Variant { full, real_decoder, reconstruction_only, emotion_only, discrete_only, vad_only };
inline constexpr std::array<Variant, 5> ablation_variants = {Variant::real_decoder, Variant::reconstruction_only,
                                                             Variant::emotion_only, Variant::discrete_only,
                                                             Variant::vad_only};
RhEmoConfig variant_config(Variant v, RhEmoConfig base = {});
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

std::string to_string(DecoderKind k);
DecoderKind parse_decoder(const std::string& s);
std::string to_string(HeadInput h);
HeadInput parse_head_input(const std::string& s);

struct LossWeights {
    double alpha = 100.0;
    double beta = 0.01;
};

/// Head outputs; a removed head leaves its tensor undefined.
template <typename T>
struct Predictions {
    Tensor<T> discrete;   // [N,4] probabilities
    Tensor<T> valence;    // [N,1] in (0,1)
    Tensor<T> arousal;
    Tensor<T> dominance;

    const Tensor<T>& head(std::size_t h) const;
    Tensor<T>& head(std::size_t h);
};

/// The encoder on its own: three conv blocks with 1, 2 and 4 output
/// channels. Downstream SER models use it without the heads and decoder;
/// tensor names match RhEmoModel's "encoder." subtree.
template <typename T>
class Encoder final : public nn::Layer<T> {
public:
    Encoder(const RhEmoConfig& config, Rng& rng);

    /// [N,1,H,W] -> [N,4,H/8,W/2].
    Tensor<T> forward(const Tensor<T>& x, nn::Context& ctx) override;
    void collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) override;

    const RhEmoConfig& config() const { return config_; }

private:
    RhEmoConfig config_;
    nn::Sequential<T> body_;
};

template <typename T>
class RhEmoModel final : public nn::Module<T> {
public:
    RhEmoModel(const RhEmoConfig& config, Rng& rng);

    /// [N,1,H,W] -> [N,4,H/8,W/2].
    Tensor<T> encode(const Tensor<T>& x, nn::Context& ctx);
    /// Embedding -> [N,4,H,W] (quaternion decoder) or [N,1,H,W] (real).
    Tensor<T> decode(const Tensor<T>& z, nn::Context& ctx);
    /// Decoder output mapped back to one channel: split_mean for the
    /// quaternion decoder, identity for the real one.
    Tensor<T> reconstruct(const Tensor<T>& z, nn::Context& ctx);
    Predictions<T> classify(const Tensor<T>& z, nn::Context& ctx);

    void set_dropout(double rate);
    const RhEmoConfig& config() const { return config_; }
    Encoder<T>& encoder() { return encoder_; }
    /// Tensors under "encoder.".
    std::vector<nn::NamedTensor<T>> encoder_tensors();
    std::vector<nn::NamedTensor<T>> head_tensors();

    void collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) override;

private:
    RhEmoConfig config_;
    Encoder<T> encoder_;
    nn::Sequential<T> decoder_;
    std::array<std::unique_ptr<nn::Sequential<T>>, 4> heads_;
    std::vector<nn::Dropout<T>*> dropouts_;
};

template <typename T>
struct LossTerms {
    Tensor<T> total;
    double reconstruction = 0.0;
    double discrete = 0.0;
    double valence = 0.0;
    double arousal = 0.0;
    double dominance = 0.0;
};

/// BCE(x, y_r) + beta * (CE(p, t) + alpha * (BCE_v + BCE_a + BCE_d)), each
/// term a batch mean. An undefined y_r or head drops that term. Throws
/// NumericalError naming the first non-finite term.
template <typename T>
LossTerms<T> rhemo_loss(const Tensor<T>& x, const Tensor<T>& y_r, const Predictions<T>& preds,
                        std::span<const data::EmotionTarget> targets, const LossWeights& w);

/// Labels of a batch as the [N,1] binary target of head h (1..3).
template <typename T>
Tensor<T> binary_targets(std::span<const data::EmotionTarget> targets, std::size_t head);

struct StageConfig {
    double lr = 1e-3;
    double beta = 0.0;
    double alpha = 100.0;
    double dropout = 0.0;
    std::size_t patience = 100;
    std::size_t max_epochs = 1000;
};

struct TrainConfig {
    StageConfig stage1{1e-3, 0.0, 100.0, 0.0, 100, 1000};
    StageConfig stage2{1e-6, 0.01, 100.0, 0.5, 30, 1000};
    std::size_t batch_size = 20;
    std::uint64_t seed = 0;
    std::ostream* log = nullptr;
};

struct Evaluation {
    double loss = 0.0;
    double reconstruction = 0.0;
    std::array<double, 4> accuracy{};  // NaN for removed heads
    std::size_t count = 0;
};

struct EpochRecord {
    int stage = 1;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    Evaluation val;
    double seconds = 0.0;
};

struct StageSummary {
    int stage = 1;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    bool early_stopped = false;
};

/// Loss terms averaged over the set plus per-head accuracies (inference
/// mode). Heads are only run when the weights give them a nonzero share.
Evaluation evaluate(RhEmoModel<float>& model, const data::LabeledSet& set, const LossWeights& w,
                    std::size_t batch_size, bool with_heads = true);

/// One stage: fresh Adam, early stopping on total validation loss, best
/// parameters restored on exit. Parameters without a path to the loss are
/// left out of the optimizer.
StageSummary train_stage(RhEmoModel<float>& model, int stage, const StageConfig& sc, const TrainConfig& tc,
                         const data::LabeledSet& train, const data::LabeledSet& val,
                         std::vector<EpochRecord>& history);

struct TwoStageResult {
    StageSummary stage1, stage2;
    std::vector<EpochRecord> history;
};

/// Stage 1 (reconstruction, beta 0) then stage 2 from the stage-1 weights.
/// on_stage_end runs after each stage with the best weights in place, so the
/// caller can checkpoint. Stage 1 is skipped when there is no decoder.
TwoStageResult train_two_stage(RhEmoModel<float>& model, const TrainConfig& tc, const data::LabeledSet& train,
                               const data::LabeledSet& val,
                               const std::function<void(const StageSummary&)>& on_stage_end = {});

/// Inference-mode embeddings, [4,H/8,W/2] items with the input labels.
data::LabeledSet extract_embeddings(RhEmoModel<float>& model, const data::LabeledSet& spectrograms,
                                    std::size_t batch_size = 20);

}  // namespace qser::rhemo
