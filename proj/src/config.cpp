#include "qser/config.hpp"

#include <cstdlib>
#include <fstream>

#include "qser/errors.hpp"

namespace qser::config {

using nlohmann::json;

json defaults()
{
    return {
        {"run", "default"},
        {"seed", 0},
        {"corpus", {{"dir", ""}, {"n_per_class", 50}, {"seed", 7}}},
        {"rhemo",
         {{"head_hidden", 4096},
          {"decoder", "quaternion"},
          {"heads", {true, true, true, true}},
          {"head_input", "single"},
          {"batch_size", 20},
          {"stage1", {{"lr", 1e-3}, {"patience", 100}, {"max_epochs", 1000}}},
          {"stage2",
           {{"lr", 1e-6}, {"beta", 0.01}, {"alpha", 100.0}, {"dropout", 0.5}, {"patience", 30}, {"max_epochs", 1000}}}}},
        {"experiment",
         {{"row", "rhemo+quat"},
          {"arch", "mini-cnn"},
          {"num_classes", 4},
          {"encoder", "fine-tune"},
          {"lr", 1e-5},
          {"batch_size", 20},
          {"patience", 20},
          {"max_epochs", 1000},
          {"data_fraction", 1.0},
          {"rhemo_checkpoint", ""},
          {"pretrained_checkpoint", ""}}},
        {"ablate", {{"stage1_epochs", 1}, {"stage2_epochs", 1}, {"epochs", 1}}},
    };
}

namespace {

bool same_kind(const json& a, const json& b)
{
    if (a.is_number() && b.is_number())
        return !(a.is_number_integer() || a.is_number_unsigned()) || b.is_number_integer() || b.is_number_unsigned();
    return a.type() == b.type();
}

void check_against(const json& schema, const json& value, const std::string& path)
{
    if (!same_kind(schema, value))
        throw ConfigError("config key '" + path + "' expects " + std::string(schema.type_name()) + ", got " +
                          value.dump());
    if (schema.is_object())
        for (const auto& [k, v] : value.items()) {
            const std::string sub = path.empty() ? k : path + "." + k;
            if (!schema.contains(k))
                throw ConfigError("unknown config key '" + sub + "'");
            check_against(schema[k], v, sub);
        }
    if (schema.is_array() && schema.size() != value.size())
        throw ConfigError("config key '" + path + "' expects " + std::to_string(schema.size()) + " entries");
}

}  // namespace

void check(const json& cfg)
{
    check_against(defaults(), cfg, "");
}

json load(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in)
        throw ConfigError("cannot open config " + file.string());
    json user;
    try {
        user = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse config " + file.string() + ": " + e.what());
    }
    if (!user.is_object())
        throw ConfigError("config " + file.string() + " must be an object");
    check(user);
    json cfg = defaults();
    cfg.merge_patch(user);
    return cfg;
}

void apply_override(json& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json::json_pointer ptr;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        ptr /= key.substr(start, dot - start);
        if (dot == std::string::npos)
            break;
        start = dot + 1;
    }
    if (!cfg.contains(ptr))
        throw ConfigError("unknown config key '" + key + "'");
    json& slot = cfg[ptr];
    json value = raw;
    if (!slot.is_string()) {
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            throw ConfigError("config key '" + key + "' expects " + std::string(slot.type_name()) + ", got '" + raw +
                              "'");
        }
    }
    check_against(slot, value, key);
    slot = value;
}

std::filesystem::path run_root()
{
    const char* env = std::getenv("QSER_RUN_ROOT");
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::filesystem::path run_dir(const json& cfg)
{
    return run_root() / cfg.at("run").get<std::string>();
}

std::filesystem::path corpus_dir(const json& cfg)
{
    const auto dir = cfg.at("corpus").at("dir").get<std::string>();
    return dir.empty() ? run_dir(cfg) / "corpus" : std::filesystem::path(dir);
}

rhemo::RhEmoConfig rhemo_config(const json& cfg)
{
    const auto& r = cfg.at("rhemo");
    rhemo::RhEmoConfig c;
    c.head_hidden = r.at("head_hidden").get<std::size_t>();
    c.decoder = rhemo::parse_decoder(r.at("decoder").get<std::string>());
    for (std::size_t h = 0; h < 4; ++h)
        c.heads[h] = r.at("heads").at(h).get<bool>();
    c.head_input = rhemo::parse_head_input(r.at("head_input").get<std::string>());
    c.validate();
    return c;
}

rhemo::TrainConfig train_config(const json& cfg)
{
    const auto& r = cfg.at("rhemo");
    rhemo::TrainConfig tc;
    const auto& s1 = r.at("stage1");
    tc.stage1.lr = s1.at("lr").get<double>();
    tc.stage1.patience = s1.at("patience").get<std::size_t>();
    tc.stage1.max_epochs = s1.at("max_epochs").get<std::size_t>();
    const auto& s2 = r.at("stage2");
    tc.stage2.lr = s2.at("lr").get<double>();
    tc.stage2.beta = s2.at("beta").get<double>();
    tc.stage2.alpha = s2.at("alpha").get<double>();
    tc.stage2.dropout = s2.at("dropout").get<double>();
    tc.stage2.patience = s2.at("patience").get<std::size_t>();
    tc.stage2.max_epochs = s2.at("max_epochs").get<std::size_t>();
    tc.batch_size = r.at("batch_size").get<std::size_t>();
    tc.seed = cfg.at("seed").get<std::uint64_t>();
    if (tc.batch_size == 0)
        throw ConfigError("rhemo.batch_size must be positive");
    return tc;
}

exp::ExperimentConfig experiment_config(const json& cfg)
{
    const auto& e = cfg.at("experiment");
    exp::ExperimentConfig ec;
    ec.row = exp::parse_row(e.at("row").get<std::string>());
    ec.arch = e.at("arch").get<std::string>();
    ec.num_classes = e.at("num_classes").get<std::size_t>();
    ec.encoder = exp::parse_encoder_mode(e.at("encoder").get<std::string>());
    ec.fit.lr = e.at("lr").get<double>();
    ec.fit.batch_size = e.at("batch_size").get<std::size_t>();
    ec.fit.patience = e.at("patience").get<std::size_t>();
    ec.fit.max_epochs = e.at("max_epochs").get<std::size_t>();
    ec.data_fraction = e.at("data_fraction").get<double>();
    ec.seed = cfg.at("seed").get<std::uint64_t>();
    ec.rhemo = rhemo_config(cfg);
    ec.arch_spec();  // validates the name
    return ec;
}

}  // namespace qser::config
