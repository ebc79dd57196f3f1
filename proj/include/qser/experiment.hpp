#pragma once

#include <array>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "qser/checkpoint.hpp"
#include "qser/corpus.hpp"
#include "qser/rhemo.hpp"
#include "qser/zoo.hpp"

/// SER experiments: the four input/init rows, reduced-data runs and the
/// RH-emo ablations.
namespace qser::exp {

/// real: z-scored spectrograms into a real CNN.
/// rhemo+quat: min-max spectrograms through the RH-emo encoder into a
/// quaternion CNN. The -pretrained rows start the CNN from a checkpoint
/// trained on another corpus, classifier excluded.
enum class Row { real, real_pretrained, rhemo_quat, rhemo_quat_pretrained };
inline constexpr std::array<Row, 4> all_rows = {Row::real, Row::real_pretrained, Row::rhemo_quat,
                                                Row::rhemo_quat_pretrained};
std::string to_string(Row r);
Row parse_row(const std::string& s);
zoo::Mode row_mode(Row r);
bool row_pretrained(Row r);
/// The row whose trained network serves as the pretrained init for r.
Row base_row(Row r);

/// fine-tune: pretrained encoder, trained along with the CNN.
/// frozen: pretrained encoder, never updated (inference mode throughout).
/// no-pretrain: randomly initialized encoder, trained along with the CNN.
enum class EncoderMode { fine_tune, frozen, no_pretrain };
std::string to_string(EncoderMode m);
EncoderMode parse_encoder_mode(const std::string& s);

struct FitConfig {
    double lr = 1e-5;
    std::size_t batch_size = 20;
    std::size_t patience = 20;
    std::size_t max_epochs = 1000;
};

/// Spectrogram classifier: optional RH-emo encoder feeding a zoo network.
/// Tensors live under "encoder." and "net.".
class SerModel final : public nn::Module<float> {
public:
    /// The encoder is built iff the arch is in quaternion mode.
    SerModel(const zoo::ArchSpec& spec, const rhemo::RhEmoConfig& encoder_config, Rng& rng);

    /// [N,1,H,W] -> [N,num_classes] logits.
    Tensor<float> forward(const Tensor<float>& x, nn::Context& ctx);
    void collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) override;

    zoo::Network<float>& network() { return *net_; }
    /// Null for real-mode models.
    rhemo::Encoder<float>* encoder() { return encoder_.get(); }
    void set_frozen_encoder(bool frozen) { frozen_ = frozen; }
    bool frozen_encoder() const { return frozen_; }
    const zoo::ArchSpec& spec() const { return net_->spec(); }
    std::string fingerprint() const;

private:
    std::unique_ptr<rhemo::Encoder<float>> encoder_;
    std::unique_ptr<zoo::Network<float>> net_;
    std::string encoder_id_;
    bool frozen_ = false;
};

/// Copies the "encoder.*" tensors of an RH-emo checkpoint into the model.
void load_encoder(SerModel& model, const ckpt::Checkpoint& rhemo_ckpt);
/// The network's tensors alone, named as zoo::transfer_init expects.
ckpt::Checkpoint network_checkpoint(SerModel& model);

struct ClassifierEval {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t count = 0;
};
ClassifierEval evaluate(SerModel& model, const data::LabeledSet& set, std::size_t batch_size);

struct FitEpoch {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;  // running, in training mode
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

struct FitResult {
    std::vector<FitEpoch> history;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    bool early_stopped = false;
};

/// Adam on softmax cross-entropy with early stopping on validation loss;
/// the best weights are restored on exit. A frozen encoder is left out of
/// the optimizer.
FitResult fit(SerModel& model, const FitConfig& fc, const data::LabeledSet& train, const data::LabeledSet& val,
              std::uint64_t seed, std::ostream* log = nullptr);

struct SplitData {
    data::LabeledSet train, val, test;
};
/// Normalized splits with the manifest's training constants. A fraction
/// below 1 draws that share of train+val (seeded), re-split 7:2; the test
/// split is never touched.
SplitData prepare_data(const corpus::Corpus& c, corpus::NormMode mode, double fraction, std::uint64_t seed);
inline constexpr std::array<double, 5> reduced_fractions = {0.01, 0.10, 0.25, 0.50, 1.0};

struct ExperimentConfig {
    Row row = Row::rhemo_quat;
    std::string arch = "mini-cnn";
    std::size_t num_classes = 4;
    EncoderMode encoder = EncoderMode::fine_tune;
    FitConfig fit;
    double data_fraction = 1.0;
    std::uint64_t seed = 0;
    /// Only the input extent matters; it must match the RH-emo checkpoint.
    rhemo::RhEmoConfig rhemo;

    zoo::ArchSpec arch_spec() const;
    nlohmann::json to_json() const;
};

/// Prerequisite checkpoints. rhemo is required by quaternion rows unless
/// the encoder is not pretrained; pretrained by the -pretrained rows.
struct Inputs {
    const corpus::Corpus* corpus = nullptr;
    const ckpt::Checkpoint* rhemo = nullptr;
    const ckpt::Checkpoint* pretrained = nullptr;
};

struct MetricsRecord {
    std::string row;
    std::string arch;
    std::string encoder;
    double data_fraction = 1.0;
    std::uint64_t seed = 0;
    std::vector<FitEpoch> history;
    std::size_t best_epoch = 0;
    double train_accuracy = 0.0;  // at the best epoch
    double val_loss = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    std::size_t test_count = 0;
    std::size_t parameter_count = 0;
    double seconds = 0.0;

    nlohmann::json to_json() const;
    static MetricsRecord from_json(const nlohmann::json& j);
    /// One line per epoch, with a header.
    std::string history_csv() const;
    static std::string summary_csv_header();
    std::string summary_csv_row() const;
    /// Everything but wall-clock times, for determinism checks.
    bool same_results(const MetricsRecord& other) const;
};

struct ExperimentResult {
    MetricsRecord metrics;
    std::unique_ptr<SerModel> model;
    /// Best-validation weights, with the config, arch and metrics in meta.
    ckpt::Checkpoint checkpoint;
};

/// Trains one row and scores the test split once, on the best checkpoint.
/// Throws DataError when a prerequisite checkpoint is missing.
ExperimentResult run_experiment(const ExperimentConfig& config, const Inputs& inputs, std::ostream* log = nullptr);

/// Rebuilds a model from a run_experiment checkpoint.
std::unique_ptr<SerModel> model_from_checkpoint(const ckpt::Checkpoint& c);
/// Test-split score of a run_experiment checkpoint on its corpus.
ClassifierEval evaluate_checkpoint(const ckpt::Checkpoint& c, const corpus::Corpus& corpus);

struct AblationRecord {
    std::string name;
    std::size_t epochs = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::array<double, 4> accuracy{};  // NaN for removed heads
    double seconds = 0.0;
};
/// Builds an RH-emo variant and trains it with the given stage settings.
AblationRecord run_rhemo_variant(rhemo::Variant v, const rhemo::RhEmoConfig& base, const rhemo::TrainConfig& tc,
                                 const data::LabeledSet& train, const data::LabeledSet& val);

}  // namespace qser::exp
