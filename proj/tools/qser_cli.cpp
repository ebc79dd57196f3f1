// qser: command-line front end for corpus preparation, RH-emo pretraining,
// SER experiments, parameter audits and ablations.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "qser/config.hpp"
#include "qser/errors.hpp"
#include "qser/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qser;

namespace {

constexpr int exit_config = 2;
constexpr int exit_data = 3;
constexpr int exit_numerical = 4;

void write_text(const fs::path& path, const std::string& text)
{
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << text;
}

corpus::Corpus load_corpus(const json& cfg)
{
    const auto dir = config::corpus_dir(cfg);
    std::cerr << "corpus " << dir.string() << '\n';
    return corpus::load(dir);
}

fs::path rhemo_stage_path(const json& cfg, int stage)
{
    return config::run_dir(cfg) / ("rhemo_stage" + std::to_string(stage) + ".qck");
}

std::string fmt(double v)
{
    if (std::isnan(v))
        return "-";
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

std::string history_csv(const std::vector<rhemo::EpochRecord>& history)
{
    std::ostringstream s;
    s << std::setprecision(17);
    s << "stage,epoch,train_loss,val_loss,val_reconstruction,acc_discrete,acc_valence,acc_arousal,acc_dominance,"
         "seconds\n";
    for (const auto& r : history) {
        s << r.stage << ',' << r.epoch << ',' << r.train_loss << ',' << r.val.loss << ',' << r.val.reconstruction;
        for (double a : r.val.accuracy)
            s << ',' << a;
        s << ',' << r.seconds << '\n';
    }
    return s.str();
}

// ---------------------------------------------------------------------------

int cmd_synth(json cfg, std::size_t n, std::uint64_t seed, const std::string& out)
{
    if (n == 0)
        n = cfg["corpus"]["n_per_class"].get<std::size_t>();
    else
        cfg["corpus"]["n_per_class"] = n;
    if (seed == ~0ull)
        seed = cfg["corpus"]["seed"].get<std::uint64_t>();
    const auto c = corpus::synth_corpus(n, seed);
    const fs::path dir = out.empty() ? config::corpus_dir(cfg) : fs::path(out);
    corpus::save(c, dir);
    std::cout << "synthetic corpus: " << c.manifest.entries.size() << " items (train "
              << c.manifest.indices("train").size() << ", val " << c.manifest.indices("val").size() << ", test "
              << c.manifest.indices("test").size() << ") -> " << dir.string() << '\n';
    return 0;
}

data::EmotionTarget parse_target(const std::vector<std::string>& fields, std::size_t line)
{
    data::EmotionTarget t;
    const auto where = "list line " + std::to_string(line);
    t.discrete = -1;
    for (std::size_t k = 0; k < data::class_names.size(); ++k)
        if (fields[1] == data::class_names[k])
            t.discrete = static_cast<int>(k);
    try {
        if (t.discrete < 0)
            t.discrete = std::stoi(fields[1]);
        t.valence = std::stoi(fields[2]);
        t.arousal = std::stoi(fields[3]);
        t.dominance = std::stoi(fields[4]);
    } catch (const std::exception&) {
        throw DataError(where + ": labels must be a class and three 0/1 values");
    }
    data::validate(t);
    return t;
}

int cmd_preprocess(const json& cfg, const std::string& list, const std::string& out)
{
    std::ifstream in(list);
    if (!in)
        throw DataError("cannot open file list " + list);
    std::vector<corpus::LabeledFile> files;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');)
            fields.push_back(f);
        if (fields.size() != 5)
            throw DataError("list line " + std::to_string(n) + ": expected path,class,valence,arousal,dominance");
        fs::path path = fields[0];
        if (path.is_relative())
            path = fs::path(list).parent_path() / path;
        files.push_back({path, parse_target(fields, n)});
    }
    const auto c = corpus::corpus_from_wavs(files, cfg["corpus"]["seed"].get<std::uint64_t>());
    const fs::path dir = out.empty() ? config::corpus_dir(cfg) : fs::path(out);
    corpus::save(c, dir);
    std::cout << files.size() << " files -> " << c.manifest.entries.size() << " fragments -> " << dir.string()
              << '\n';
    return 0;
}

int cmd_pretrain_rhemo(const json& cfg, int stage)
{
    if (stage != 1 && stage != 2)
        throw ConfigError("--stage must be 1 or 2");
    const auto c = load_corpus(cfg);
    const auto train = corpus::normalized(c.split("train"), c.manifest.train_stats, corpus::NormMode::minmax);
    const auto val = corpus::normalized(c.split("val"), c.manifest.train_stats, corpus::NormMode::minmax);
    const auto rc = config::rhemo_config(cfg);
    auto tc = config::train_config(cfg);
    tc.log = &std::cerr;

    Rng rng(tc.seed);
    rhemo::RhEmoModel<float> model(rc, rng);
    if (stage == 2)
        ckpt::restore(model, ckpt::load(rhemo_stage_path(cfg, 1)), rc.fingerprint());

    std::vector<rhemo::EpochRecord> history;
    rhemo::StageSummary summary;
    if (stage == 1) {
        if (rc.decoder == rhemo::DecoderKind::none)
            throw ConfigError("stage 1 trains the decoder; this configuration has none");
        auto s1 = tc.stage1;
        s1.beta = 0.0;
        summary = rhemo::train_stage(model, 1, s1, tc, train, val, history);
    } else {
        summary = rhemo::train_stage(model, 2, tc.stage2, tc, train, val, history);
    }

    auto k = ckpt::capture(model, rc.fingerprint());
    k.meta = {{"stage", stage},
              {"epochs_run", summary.epochs_run},
              {"best_epoch", summary.best_epoch},
              {"best_val_loss", summary.best_val_loss},
              {"early_stopped", summary.early_stopped},
              {"seed", tc.seed},
              {"config", cfg}};
    const auto path = rhemo_stage_path(cfg, stage);
    fs::create_directories(path.parent_path());
    ckpt::save(k, path);
    write_text(path.parent_path() / ("rhemo_stage" + std::to_string(stage) + ".csv"), history_csv(history));
    const auto& best = history.at(summary.best_epoch - 1).val;
    std::cout << "stage " << stage << ": " << summary.epochs_run << " epochs, best " << summary.best_epoch
              << " (val loss " << fmt(summary.best_val_loss) << ", reconstruction " << fmt(best.reconstruction)
              << ", accuracy " << fmt(best.accuracy[0]) << "/" << fmt(best.accuracy[1]) << "/"
              << fmt(best.accuracy[2]) << "/" << fmt(best.accuracy[3]) << ") -> " << path.string() << '\n';
    return 0;
}

int cmd_extract(const json& cfg, const std::string& checkpoint, const std::string& out)
{
    const auto c = load_corpus(cfg);
    const auto rc = config::rhemo_config(cfg);
    Rng rng(0);
    rhemo::RhEmoModel<float> model(rc, rng);
    const fs::path src = checkpoint.empty() ? rhemo_stage_path(cfg, 2) : fs::path(checkpoint);
    ckpt::restore(model, ckpt::load(src), rc.fingerprint());
    const auto all = corpus::normalized(c.raw, c.manifest.train_stats, corpus::NormMode::minmax);
    const auto emb = rhemo::extract_embeddings(model, all, cfg["rhemo"]["batch_size"].get<std::size_t>());

    ckpt::Checkpoint k;
    k.fingerprint = "embeddings/" + rc.fingerprint();
    Shape shape{emb.size()};
    shape.insert(shape.end(), emb.item_shape.begin(), emb.item_shape.end());
    k.tensors.push_back({"embeddings", Tensor<float>(shape, emb.values), false});
    k.meta = {{"source_checkpoint", src.string()}, {"manifest", c.manifest.to_json()}};
    const fs::path dst = out.empty() ? config::run_dir(cfg) / "embeddings.qck" : fs::path(out);
    fs::create_directories(dst.parent_path().empty() ? fs::path(".") : dst.parent_path());
    ckpt::save(k, dst);
    std::cout << emb.size() << " embeddings " << shape_str(shape) << " -> " << dst.string() << '\n';
    return 0;
}

void save_experiment(exp::ExperimentResult& r, const fs::path& dir)
{
    fs::create_directories(dir);
    ckpt::save(r.checkpoint, dir / "model.qck");
    ckpt::save(exp::network_checkpoint(*r.model), dir / "network.qck");
    write_text(dir / "metrics.json", r.metrics.to_json().dump(1) + "\n");
    write_text(dir / "history.csv", r.metrics.history_csv());
    write_text(dir / "summary.csv", exp::MetricsRecord::summary_csv_header() + "\n" + r.metrics.summary_csv_row() + "\n");
}

int cmd_train(const json& cfg, const std::string& out, bool reduced)
{
    const auto c = load_corpus(cfg);
    const auto ec = config::experiment_config(cfg);
    const auto& e = cfg["experiment"];

    ckpt::Checkpoint rhemo_ckpt, pre_ckpt;
    exp::Inputs in{&c, nullptr, nullptr};
    if (exp::row_mode(ec.row) == zoo::Mode::quaternion && ec.encoder != exp::EncoderMode::no_pretrain) {
        const auto p = e["rhemo_checkpoint"].get<std::string>();
        rhemo_ckpt = ckpt::load(p.empty() ? rhemo_stage_path(cfg, 2) : fs::path(p));
        in.rhemo = &rhemo_ckpt;
    }
    if (exp::row_pretrained(ec.row)) {
        const auto p = e["pretrained_checkpoint"].get<std::string>();
        if (p.empty())
            throw DataError("row " + exp::to_string(ec.row) +
                            " needs experiment.pretrained_checkpoint (a network.qck from a run on another corpus)");
        pre_ckpt = ckpt::load(p);
        in.pretrained = &pre_ckpt;
    }

    const fs::path dir = out.empty() ? config::run_dir(cfg) / (exp::to_string(ec.row) + "_" + ec.arch) : fs::path(out);
    if (!reduced) {
        auto r = exp::run_experiment(ec, in, &std::cerr);
        save_experiment(r, dir);
        std::cout << exp::MetricsRecord::summary_csv_header() << '\n' << r.metrics.summary_csv_row() << '\n';
        std::cout << "-> " << dir.string() << '\n';
        return 0;
    }
    std::string table = exp::MetricsRecord::summary_csv_header() + "\n";
    for (double f : exp::reduced_fractions) {
        auto fc = ec;
        fc.data_fraction = f;
        auto r = exp::run_experiment(fc, in, &std::cerr);
        std::ostringstream name;
        name << "fraction_" << std::lround(f * 100);
        save_experiment(r, dir / name.str());
        table += r.metrics.summary_csv_row() + "\n";
    }
    write_text(dir / "reduced.csv", table);
    std::cout << table << "-> " << (dir / "reduced.csv").string() << '\n';
    return 0;
}

int cmd_evaluate(const json& cfg, const std::string& dir_arg, const std::string& checkpoint)
{
    fs::path path = checkpoint;
    if (path.empty()) {
        if (dir_arg.empty())
            throw ConfigError("evaluate needs --dir or --checkpoint");
        path = fs::path(dir_arg) / "model.qck";
    }
    const auto k = ckpt::load(path);
    const auto c = load_corpus(cfg);
    const auto ev = exp::evaluate_checkpoint(k, c);
    std::cout << std::setprecision(17) << "test accuracy " << ev.accuracy << " loss " << ev.loss << " on "
              << ev.count << " items\n";
    if (k.meta.contains("metrics")) {
        const auto recorded = k.meta["metrics"].at("test_accuracy").get<double>();
        const bool same = recorded == ev.accuracy;
        std::cout << "recorded test accuracy " << recorded << (same ? " (reproduced)" : " (MISMATCH)") << '\n';
        if (!same)
            throw DataError("evaluation does not reproduce the recorded test accuracy");
    }
    return 0;
}

int cmd_audit(const std::string& arch, const std::string& mode, std::size_t classes, bool per_layer,
              const std::string& json_out)
{
    std::vector<std::string> archs = arch == "all" ? zoo::shipped_names() : std::vector<std::string>{arch};
    std::vector<zoo::Mode> modes;
    if (mode == "both")
        modes = {zoo::Mode::real, zoo::Mode::quaternion};
    else
        modes = {zoo::parse_mode(mode)};
    json records = json::array();
    std::cout << std::left << std::setw(14) << "arch" << std::setw(12) << "mode" << std::right << std::setw(14)
              << "params" << std::setw(10) << "ratio" << '\n';
    for (const auto& a : archs) {
        std::vector<zoo::ParamAudit> audits;
        for (auto m : modes)
            audits.push_back(zoo::audit_params(zoo::by_name(a, m, classes)));
        for (const auto& au : audits) {
            const bool paired = audits.size() == 2 && au.mode == zoo::Mode::quaternion;
            std::cout << std::left << std::setw(14) << au.arch << std::setw(12) << zoo::to_string(au.mode)
                      << std::right << std::setw(14) << au.total << std::setw(10)
                      << (paired ? fmt(au.ratio_to(audits[0])) : std::string("")) << '\n';
            if (per_layer)
                for (const auto& l : au.layers)
                    if (l.params > 0)
                        std::cout << "    " << std::left << std::setw(16) << l.name << std::setw(12) << l.kind
                                  << std::right << std::setw(12) << l.params << '\n';
            json layers = json::array();
            for (const auto& l : au.layers)
                layers.push_back({{"name", l.name}, {"kind", l.kind}, {"params", l.params}});
            json rec = {{"arch", au.arch}, {"mode", zoo::to_string(au.mode)}, {"total", au.total}, {"layers", layers}};
            if (paired)
                rec["ratio_to_real"] = au.ratio_to(audits[0]);
            records.push_back(rec);
        }
    }
    if (!json_out.empty())
        write_text(json_out, records.dump(1) + "\n");
    return 0;
}

int cmd_ablate(const json& cfg, const std::string& out)
{
    const auto c = load_corpus(cfg);
    const auto train = corpus::normalized(c.split("train"), c.manifest.train_stats, corpus::NormMode::minmax);
    const auto val = corpus::normalized(c.split("val"), c.manifest.train_stats, corpus::NormMode::minmax);
    const auto rc = config::rhemo_config(cfg);
    auto tc = config::train_config(cfg);
    tc.log = &std::cerr;
    tc.stage1.max_epochs = cfg["ablate"]["stage1_epochs"].get<std::size_t>();
    tc.stage2.max_epochs = cfg["ablate"]["stage2_epochs"].get<std::size_t>();

    std::ostringstream table;
    table << std::setprecision(10);
    table << "kind,name,epochs,train_loss,val_loss,acc_discrete,acc_valence,acc_arousal,acc_dominance,seconds\n";
    for (auto v : rhemo::ablation_variants) {
        std::cerr << "variant " << rhemo::variant_name(v) << '\n';
        const auto r = exp::run_rhemo_variant(v, rc, tc, train, val);
        table << "rhemo," << r.name << ',' << r.epochs << ',' << r.train_loss << ',' << r.val_loss;
        for (double a : r.accuracy)
            table << ',' << a;
        table << ',' << r.seconds << '\n';
    }

    auto ec = config::experiment_config(cfg);
    ec.row = exp::Row::rhemo_quat;
    ec.fit.max_epochs = cfg["ablate"]["epochs"].get<std::size_t>();
    ckpt::Checkpoint rhemo_ckpt;
    const auto p = cfg["experiment"]["rhemo_checkpoint"].get<std::string>();
    const fs::path rpath = p.empty() ? rhemo_stage_path(cfg, 2) : fs::path(p);
    for (auto mode : {exp::EncoderMode::no_pretrain, exp::EncoderMode::frozen}) {
        ec.encoder = mode;
        exp::Inputs in{&c, nullptr, nullptr};
        if (mode != exp::EncoderMode::no_pretrain) {
            rhemo_ckpt = ckpt::load(rpath);
            in.rhemo = &rhemo_ckpt;
        }
        std::cerr << "encoder mode " << exp::to_string(mode) << '\n';
        const auto r = exp::run_experiment(ec, in, &std::cerr);
        const auto& last = r.metrics.history.back();
        table << "ser," << exp::to_string(mode) << ',' << r.metrics.history.size() << ',' << last.train_loss << ','
              << last.val_loss << ',' << last.val_accuracy << ",nan,nan,nan," << r.metrics.seconds << '\n';
    }
    const fs::path dst = out.empty() ? config::run_dir(cfg) / "ablate.csv" : fs::path(out);
    write_text(dst, table.str());
    std::cout << table.str() << "-> " << dst.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Quaternion speech emotion recognition: RH-emo embeddings and quaternion CNNs"};
    app.require_subcommand(1);
    std::string config_file, run;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_file, "JSON config file (comments allowed)");
    app.add_option("--set", overrides, "Override a config key, e.g. --set experiment.lr=1e-4");
    app.add_option("--run", run, "Run name under $QSER_RUN_ROOT (default: config 'run')");

    std::size_t synth_n = 0;
    std::uint64_t synth_seed = ~0ull;
    std::string out;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic four-class corpus");
    synth->add_option("--n", synth_n, "Items per class");
    synth->add_option("--seed", synth_seed, "Corpus seed");
    synth->add_option("--out", out, "Corpus directory");

    std::string list;
    auto* prep = app.add_subcommand("preprocess", "Build a corpus from 16-bit PCM WAV files");
    prep->add_option("--list", list, "CSV lines: path,class,valence,arousal,dominance")->required();
    prep->add_option("--out", out, "Corpus directory");

    int stage = 1;
    auto* pre = app.add_subcommand("pretrain-rhemo", "Train one RH-emo stage");
    pre->add_option("--stage", stage, "1: reconstruction, 2: semi-supervised")->required();

    std::string checkpoint;
    auto* extract = app.add_subcommand("extract-embeddings", "Encode the corpus with a trained RH-emo");
    extract->add_option("--checkpoint", checkpoint, "RH-emo checkpoint (default: stage 2 of the run)");
    extract->add_option("--out", out, "Output tensor file");

    std::string row, arch, pretrained;
    bool reduced = false;
    auto* train = app.add_subcommand("train", "Train and test one experiment row");
    train->add_option("--row", row, "real | real-pretrained | rhemo+quat | rhemo+quat-pretrained");
    train->add_option("--arch", arch, "Architecture name");
    train->add_option("--pretrained", pretrained, "network.qck of a run on another corpus");
    train->add_flag("--reduced", reduced, "Run every reduced-data fraction");
    train->add_option("--out", out, "Output directory");

    std::string eval_dir;
    auto* evaluate = app.add_subcommand("evaluate", "Score a trained model on its test split");
    evaluate->add_option("--dir", eval_dir, "Directory written by train");
    evaluate->add_option("--checkpoint", checkpoint, "model.qck path");

    std::string audit_arch = "all", audit_mode = "both", audit_json;
    std::size_t classes = 4;
    bool per_layer = false;
    auto* audit = app.add_subcommand("audit-params", "Count trainable parameters without allocating");
    audit->add_option("--arch", audit_arch, "Architecture name or 'all'");
    audit->add_option("--mode", audit_mode, "real | quaternion | both");
    audit->add_option("--classes", classes, "Classifier width");
    audit->add_flag("--layers", per_layer, "Print per-layer counts");
    audit->add_option("--json", audit_json, "Write the audit records here");

    auto* ablate = app.add_subcommand("ablate", "Train every RH-emo variant and encoder mode briefly");
    ablate->add_option("--out", out, "Output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        json cfg = config_file.empty() ? config::defaults() : config::load(config_file);
        for (const auto& o : overrides)
            config::apply_override(cfg, o);
        if (!run.empty())
            cfg["run"] = run;
        if (!row.empty())
            cfg["experiment"]["row"] = row;
        if (!arch.empty())
            cfg["experiment"]["arch"] = arch;
        if (!pretrained.empty())
            cfg["experiment"]["pretrained_checkpoint"] = pretrained;
        config::check(cfg);

        if (*synth)
            return cmd_synth(cfg, synth_n, synth_seed, out);
        if (*prep)
            return cmd_preprocess(cfg, list, out);
        if (*pre)
            return cmd_pretrain_rhemo(cfg, stage);
        if (*extract)
            return cmd_extract(cfg, checkpoint, out);
        if (*train)
            return cmd_train(cfg, out, reduced);
        if (*evaluate)
            return cmd_evaluate(cfg, eval_dir, checkpoint);
        if (*audit)
            return cmd_audit(audit_arch, audit_mode, classes, per_layer, audit_json);
        if (*ablate)
            return cmd_ablate(cfg, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return exit_numerical;
    } catch (const ShapeError& e) {
        std::cerr << "config error (shapes): " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
