#include "qser/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "qser/errors.hpp"
#include "qser/optim.hpp"

namespace qser::exp {

using data::LabeledSet;
using nn::Context;

std::string to_string(Row r)
{
    switch (r) {
    case Row::real:
        return "real";
    case Row::real_pretrained:
        return "real-pretrained";
    case Row::rhemo_quat:
        return "rhemo+quat";
    case Row::rhemo_quat_pretrained:
        return "rhemo+quat-pretrained";
    }
    return "?";
}

Row parse_row(const std::string& s)
{
    for (Row r : all_rows)
        if (to_string(r) == s)
            return r;
    throw ConfigError("unknown experiment row '" + s +
                      "' (real, real-pretrained, rhemo+quat, rhemo+quat-pretrained)");
}

zoo::Mode row_mode(Row r)
{
    return r == Row::real || r == Row::real_pretrained ? zoo::Mode::real : zoo::Mode::quaternion;
}

bool row_pretrained(Row r)
{
    return r == Row::real_pretrained || r == Row::rhemo_quat_pretrained;
}

Row base_row(Row r)
{
    return row_mode(r) == zoo::Mode::real ? Row::real : Row::rhemo_quat;
}

std::string to_string(EncoderMode m)
{
    switch (m) {
    case EncoderMode::fine_tune:
        return "fine-tune";
    case EncoderMode::frozen:
        return "frozen";
    case EncoderMode::no_pretrain:
        return "no-pretrain";
    }
    return "?";
}

EncoderMode parse_encoder_mode(const std::string& s)
{
    for (auto m : {EncoderMode::fine_tune, EncoderMode::frozen, EncoderMode::no_pretrain})
        if (to_string(m) == s)
            return m;
    throw ConfigError("unknown encoder mode '" + s + "' (fine-tune, frozen, no-pretrain)");
}

// ---------------------------------------------------------------------------
// Model

namespace {

/// Exposes a module's tensors under an extra name prefix, so checkpoints
/// written by a larger model can be restored into a part of it.
class Prefixed final : public nn::Module<float> {
public:
    Prefixed(nn::Module<float>& inner, std::string prefix) : inner_(inner), prefix_(std::move(prefix)) {}
    void collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) override
    {
        inner_.collect(prefix + prefix_, out);
    }

private:
    nn::Module<float>& inner_;
    std::string prefix_;
};

}  // namespace

SerModel::SerModel(const zoo::ArchSpec& spec, const rhemo::RhEmoConfig& encoder_config, Rng& rng)
{
    Rng enc_rng = rng.fork(1), net_rng = rng.fork(2);
    if (spec.mode == zoo::Mode::quaternion) {
        encoder_ = std::make_unique<rhemo::Encoder<float>>(encoder_config, enc_rng);
        if (encoder_config.embedding_shape() != spec.input_shape())
            throw ConfigError("encoder embedding " + shape_str(encoder_config.embedding_shape()) + " does not fit " +
                              spec.name + " input " + shape_str(spec.input_shape()));
        encoder_id_ = "/encoder=" + std::to_string(encoder_config.input_h) + "x" +
                      std::to_string(encoder_config.input_w);
    }
    net_ = zoo::build<float>(spec, net_rng);
}

Tensor<float> SerModel::forward(const Tensor<float>& x, Context& ctx)
{
    if (!encoder_)
        return net_->forward(x, ctx);
    if (!frozen_)
        return net_->forward(encoder_->forward(x, ctx), ctx);
    Tensor<float> z;
    {
        NoGradGuard no_grad;
        Context enc_ctx{false, ctx.rng};  // running statistics stay put
        z = encoder_->forward(x, enc_ctx);
    }
    return net_->forward(z, ctx);
}

void SerModel::collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out)
{
    if (encoder_)
        encoder_->collect(prefix + "encoder.", out);
    net_->collect(prefix + "net.", out);
}

std::string SerModel::fingerprint() const
{
    return "ser/" + net_->spec().fingerprint() + encoder_id_;
}

void load_encoder(SerModel& model, const ckpt::Checkpoint& rhemo_ckpt)
{
    if (!model.encoder())
        throw ConfigError("real-mode models have no encoder to load");
    Prefixed view(*model.encoder(), "encoder.");
    ckpt::restore(view, rhemo_ckpt, "");
}

ckpt::Checkpoint network_checkpoint(SerModel& model)
{
    return ckpt::capture(model.network(), model.spec().fingerprint());
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<int> batch_labels(const LabeledSet& set, const std::vector<std::size_t>& idx)
{
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (std::size_t i : idx)
        labels.push_back(set.targets[i].discrete);
    return labels;
}

std::size_t count_correct(const Tensor<float>& logits, const std::vector<int>& labels)
{
    const std::size_t k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto row = logits.data().subspan(i * k, k);
        correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[i];
    }
    return correct;
}

void check_labels(const SerModel& model, const LabeledSet& set)
{
    for (const auto& t : set.targets)
        if (t.discrete < 0 || static_cast<std::size_t>(t.discrete) >= model.spec().num_classes)
            throw DataError("class label " + std::to_string(t.discrete) + " outside the classifier's " +
                            std::to_string(model.spec().num_classes) + " classes");
}

}  // namespace

ClassifierEval evaluate(SerModel& model, const LabeledSet& set, std::size_t batch_size)
{
    if (set.size() == 0)
        throw DataError("cannot evaluate on an empty set");
    check_labels(model, set);
    NoGradGuard no_grad;
    Context ctx;
    ClassifierEval ev;
    std::size_t correct = 0;
    for (const auto& idx : data::make_batches(set.size(), batch_size, nullptr)) {
        const auto labels = batch_labels(set, idx);
        const auto logits = model.forward(data::gather<float>(set, idx), ctx);
        ev.loss += ops::ce_loss(ops::softmax(logits), std::span<const int>(labels)).item() *
                   static_cast<double>(idx.size());
        correct += count_correct(logits, labels);
        ev.count += idx.size();
    }
    ev.loss /= static_cast<double>(ev.count);
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.count);
    return ev;
}

FitResult fit(SerModel& model, const FitConfig& fc, const LabeledSet& train, const LabeledSet& val,
              std::uint64_t seed, std::ostream* log)
{
    if (train.size() == 0 || val.size() == 0)
        throw DataError("training needs non-empty train and validation splits");
    if (!(fc.lr > 0.0) || fc.batch_size == 0 || fc.max_epochs == 0)
        throw ConfigError("lr, batch_size and max_epochs must be positive");
    check_labels(model, train);

    std::vector<nn::NamedTensor<float>> params, tracked;
    for (auto& nt : model.named_tensors()) {
        if (model.frozen_encoder() && nt.name.rfind("encoder.", 0) == 0)
            continue;
        tracked.push_back(nt);
        if (nt.trainable)
            params.push_back(nt);
    }
    optim::Adam<float> adam(params, {fc.lr});
    Rng rng(seed * 1000003ull + 11);
    Rng shuffle_rng = rng.fork(1), dropout_rng = rng.fork(2);

    FitResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<Buffer<float>> best(tracked.size());
    for (std::size_t epoch = 1; epoch <= fc.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        double total = 0.0;
        std::size_t correct = 0;
        for (const auto& idx : data::make_batches(train.size(), fc.batch_size, &shuffle_rng)) {
            const auto labels = batch_labels(train, idx);
            Context ctx{true, &dropout_rng};
            GradTape tape;
            const auto logits = model.forward(data::gather<float>(train, idx), ctx);
            const auto loss = ops::ce_loss(ops::softmax(logits), std::span<const int>(labels));
            if (!std::isfinite(loss.item()))
                throw NumericalError("classifier loss is not finite at epoch " + std::to_string(epoch));
            tape.backward(loss);
            adam.step();
            adam.zero_grad();
            total += loss.item() * static_cast<double>(idx.size());
            correct += count_correct(logits, labels);
        }
        FitEpoch rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(train.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        const auto ev = evaluate(model, val, fc.batch_size);
        rec.val_loss = ev.loss;
        rec.val_accuracy = ev.accuracy;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!std::isfinite(rec.val_loss))
            throw NumericalError("validation loss is not finite at epoch " + std::to_string(epoch));
        result.history.push_back(rec);
        if (log)
            *log << "epoch " << epoch << " train " << std::setprecision(6) << rec.train_loss << " acc "
                 << rec.train_accuracy << " val " << rec.val_loss << " acc " << rec.val_accuracy << " ("
                 << rec.seconds << "s)\n";

        if (rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            for (std::size_t i = 0; i < tracked.size(); ++i)
                best[i] = tracked[i].tensor.values();
        } else if (epoch - result.best_epoch >= fc.patience) {
            result.early_stopped = true;
            break;
        }
    }
    for (std::size_t i = 0; i < tracked.size(); ++i)
        tracked[i].tensor.values() = best[i];
    return result;
}

// ---------------------------------------------------------------------------
// Data

SplitData prepare_data(const corpus::Corpus& c, corpus::NormMode mode, double fraction, std::uint64_t seed)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("data fraction must lie in (0, 1]");
    SplitData d;
    d.test = corpus::normalized(c.split("test"), c.manifest.train_stats, mode);
    if (fraction == 1.0) {
        d.train = corpus::normalized(c.split("train"), c.manifest.train_stats, mode);
        d.val = corpus::normalized(c.split("val"), c.manifest.train_stats, mode);
        return d;
    }
    auto pool = c.manifest.indices("train");
    const auto val = c.manifest.indices("val");
    pool.insert(pool.end(), val.begin(), val.end());
    Rng rng(seed ^ 0x5DEECE66Dull);
    rng.shuffle(pool);
    const auto keep = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(fraction * pool.size())));
    if (keep > pool.size())
        throw DataError("corpus too small for a reduced-data run");
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(keep * 2.0 / 9.0)));
    std::vector<std::size_t> tr(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep - n_val));
    std::vector<std::size_t> va(pool.begin() + static_cast<std::ptrdiff_t>(keep - n_val),
                                pool.begin() + static_cast<std::ptrdiff_t>(keep));
    d.train = corpus::normalized(c.raw.subset(tr), c.manifest.train_stats, mode);
    d.val = corpus::normalized(c.raw.subset(va), c.manifest.train_stats, mode);
    return d;
}

// ---------------------------------------------------------------------------
// Experiments

zoo::ArchSpec ExperimentConfig::arch_spec() const
{
    return zoo::by_name(arch, row_mode(row), num_classes);
}

nlohmann::json ExperimentConfig::to_json() const
{
    return {{"row", to_string(row)},
            {"arch", arch},
            {"num_classes", num_classes},
            {"encoder", to_string(encoder)},
            {"lr", fit.lr},
            {"batch_size", fit.batch_size},
            {"patience", fit.patience},
            {"max_epochs", fit.max_epochs},
            {"data_fraction", data_fraction},
            {"seed", seed},
            {"rhemo_input", {rhemo.input_h, rhemo.input_w}}};
}

namespace {

nlohmann::json epoch_json(const FitEpoch& e)
{
    return {{"epoch", e.epoch},           {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy},
            {"val_loss", e.val_loss},     {"val_accuracy", e.val_accuracy}, {"seconds", e.seconds}};
}

std::string num(double v)
{
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

}  // namespace

nlohmann::json MetricsRecord::to_json() const
{
    auto hist = nlohmann::json::array();
    for (const auto& e : history)
        hist.push_back(epoch_json(e));
    return {{"row", row},
            {"arch", arch},
            {"encoder", encoder},
            {"data_fraction", data_fraction},
            {"seed", seed},
            {"history", hist},
            {"best_epoch", best_epoch},
            {"train_accuracy", train_accuracy},
            {"val_loss", val_loss},
            {"test_loss", test_loss},
            {"test_accuracy", test_accuracy},
            {"test_count", test_count},
            {"parameter_count", parameter_count},
            {"seconds", seconds}};
}

MetricsRecord MetricsRecord::from_json(const nlohmann::json& j)
{
    try {
        MetricsRecord m;
        m.row = j.at("row").get<std::string>();
        m.arch = j.at("arch").get<std::string>();
        m.encoder = j.at("encoder").get<std::string>();
        m.data_fraction = j.at("data_fraction").get<double>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& e : j.at("history"))
            m.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                                 e.at("train_accuracy").get<double>(), e.at("val_loss").get<double>(),
                                 e.at("val_accuracy").get<double>(), e.at("seconds").get<double>()});
        m.best_epoch = j.at("best_epoch").get<std::size_t>();
        m.train_accuracy = j.at("train_accuracy").get<double>();
        m.val_loss = j.at("val_loss").get<double>();
        m.test_loss = j.at("test_loss").get<double>();
        m.test_accuracy = j.at("test_accuracy").get<double>();
        m.test_count = j.at("test_count").get<std::size_t>();
        m.parameter_count = j.at("parameter_count").get<std::size_t>();
        m.seconds = j.at("seconds").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed metrics record: ") + e.what());
    }
}

std::string MetricsRecord::history_csv() const
{
    std::ostringstream s;
    s << "row,arch,epoch,train_loss,train_accuracy,val_loss,val_accuracy,seconds\n";
    for (const auto& e : history)
        s << row << ',' << arch << ',' << e.epoch << ',' << num(e.train_loss) << ',' << num(e.train_accuracy) << ','
          << num(e.val_loss) << ',' << num(e.val_accuracy) << ',' << num(e.seconds) << '\n';
    return s.str();
}

std::string MetricsRecord::summary_csv_header()
{
    return "row,arch,encoder,data_fraction,seed,epochs,best_epoch,parameters,train_accuracy,val_loss,test_loss,"
           "test_accuracy,seconds";
}

std::string MetricsRecord::summary_csv_row() const
{
    std::ostringstream s;
    s << row << ',' << arch << ',' << encoder << ',' << num(data_fraction) << ',' << seed << ',' << history.size()
      << ',' << best_epoch << ',' << parameter_count << ',' << num(train_accuracy) << ',' << num(val_loss) << ','
      << num(test_loss) << ',' << num(test_accuracy) << ',' << num(seconds);
    return s.str();
}

bool MetricsRecord::same_results(const MetricsRecord& o) const
{
    if (history.size() != o.history.size())
        return false;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto &a = history[i], &b = o.history[i];
        if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.train_accuracy != b.train_accuracy ||
            a.val_loss != b.val_loss || a.val_accuracy != b.val_accuracy)
            return false;
    }
    return row == o.row && arch == o.arch && encoder == o.encoder && best_epoch == o.best_epoch &&
           train_accuracy == o.train_accuracy && val_loss == o.val_loss && test_loss == o.test_loss &&
           test_accuracy == o.test_accuracy && test_count == o.test_count && parameter_count == o.parameter_count;
}

namespace {

corpus::NormMode norm_for(zoo::Mode m)
{
    return m == zoo::Mode::real ? corpus::NormMode::zscore : corpus::NormMode::minmax;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const Inputs& inputs, std::ostream* log)
{
    if (!inputs.corpus)
        throw DataError("experiment needs a corpus");
    const auto start = std::chrono::steady_clock::now();
    const auto spec = config.arch_spec();
    const bool quaternion = spec.mode == zoo::Mode::quaternion;

    Rng rng(config.seed);
    auto model = std::make_unique<SerModel>(spec, config.rhemo, rng);
    if (quaternion) {
        if (config.encoder != EncoderMode::no_pretrain) {
            if (!inputs.rhemo)
                throw DataError("row " + to_string(config.row) + " needs a pretrained RH-emo checkpoint");
            load_encoder(*model, *inputs.rhemo);
        }
        model->set_frozen_encoder(config.encoder == EncoderMode::frozen);
    }
    if (row_pretrained(config.row)) {
        if (!inputs.pretrained)
            throw DataError("row " + to_string(config.row) + " needs a pretrained CNN checkpoint");
        zoo::transfer_init(model->network(), *inputs.pretrained, true);
    }
    if (log)
        *log << "experiment " << config.to_json().dump() << '\n';

    const auto d = prepare_data(*inputs.corpus, norm_for(spec.mode), config.data_fraction, config.seed);
    const auto fr = fit(*model, config.fit, d.train, d.val, config.seed, log);

    // Test metrics: once, on the restored best weights.
    const auto test = evaluate(*model, d.test, config.fit.batch_size);

    ExperimentResult out;
    auto& m = out.metrics;
    m.row = to_string(config.row);
    m.arch = spec.name;
    m.encoder = quaternion ? to_string(config.encoder) : "none";
    m.data_fraction = config.data_fraction;
    m.seed = config.seed;
    m.history = fr.history;
    m.best_epoch = fr.best_epoch;
    m.train_accuracy = fr.history.at(fr.best_epoch - 1).train_accuracy;
    m.val_loss = fr.best_val_loss;
    m.test_loss = test.loss;
    m.test_accuracy = test.accuracy;
    m.test_count = test.count;
    m.parameter_count = model->parameter_count();
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log)
        *log << "test accuracy " << m.test_accuracy << " on " << m.test_count << " items (best epoch "
             << m.best_epoch << ")\n";

    out.checkpoint = ckpt::capture(*model, model->fingerprint());
    out.checkpoint.meta = {{"config", config.to_json()}, {"arch", spec.to_json()}, {"metrics", m.to_json()}};
    if (quaternion)
        out.checkpoint.meta["rhemo"] = {{"input_h", config.rhemo.input_h}, {"input_w", config.rhemo.input_w}};
    out.model = std::move(model);
    return out;
}

std::unique_ptr<SerModel> model_from_checkpoint(const ckpt::Checkpoint& c)
{
    if (!c.meta.contains("arch"))
        throw DataError("checkpoint carries no architecture");
    const auto spec = zoo::ArchSpec::from_json(c.meta["arch"]);
    rhemo::RhEmoConfig rc;
    if (c.meta.contains("rhemo")) {
        rc.input_h = c.meta["rhemo"].at("input_h").get<std::size_t>();
        rc.input_w = c.meta["rhemo"].at("input_w").get<std::size_t>();
    }
    Rng rng(0);
    auto model = std::make_unique<SerModel>(spec, rc, rng);
    ckpt::restore(*model, c, model->fingerprint());
    return model;
}

ClassifierEval evaluate_checkpoint(const ckpt::Checkpoint& c, const corpus::Corpus& corpus)
{
    auto model = model_from_checkpoint(c);
    const std::size_t batch = c.meta.contains("config") ? c.meta["config"].value("batch_size", std::size_t{20}) : 20;
    const auto test = corpus::normalized(corpus.split("test"), corpus.manifest.train_stats, norm_for(model->spec().mode));
    return evaluate(*model, test, batch);
}

AblationRecord run_rhemo_variant(rhemo::Variant v, const rhemo::RhEmoConfig& base, const rhemo::TrainConfig& tc,
                                 const LabeledSet& train, const LabeledSet& val)
{
    const auto start = std::chrono::steady_clock::now();
    const auto cfg = rhemo::variant_config(v, base);
    Rng rng(tc.seed);
    rhemo::RhEmoModel<float> model(cfg, rng);
    const auto result = rhemo::train_two_stage(model, tc, train, val);
    AblationRecord r;
    r.name = rhemo::variant_name(v);
    r.epochs = result.history.size();
    r.train_loss = result.history.back().train_loss;
    const auto& last = result.stage2;
    r.val_loss = last.best_val_loss;
    const auto ev = rhemo::evaluate(model, val, {tc.stage2.alpha, tc.stage2.beta}, tc.batch_size, true);
    r.accuracy = ev.accuracy;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace qser::exp
