#include "qser/zoo.hpp"

#include <cstdio>

#include "qser/errors.hpp"

namespace qser::zoo {

std::string to_string(Mode m)
{
    return m == Mode::real ? "real" : "quaternion";
}

Mode parse_mode(const std::string& s)
{
    if (s == "real")
        return Mode::real;
    if (s == "quaternion" || s == "quat")
        return Mode::quaternion;
    throw ConfigError("mode must be real or quaternion, got '" + s + "'");
}

namespace {

constexpr std::pair<LayerKind, const char*> kind_names[] = {
    {LayerKind::conv, "conv"},
    {LayerKind::pool, "pool"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::relu, "relu"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::flatten, "flatten"},
    {LayerKind::dense, "dense"},
    {LayerKind::adaptive_avg_pool, "adaptive_avg_pool"},
    {LayerKind::bottleneck, "bottleneck"},
};

}  // namespace

std::string to_string(LayerKind k)
{
    for (const auto& [kind, name] : kind_names)
        if (kind == k)
            return name;
    return "?";
}

LayerKind parse_kind(const std::string& s)
{
    for (const auto& [kind, name] : kind_names)
        if (s == name)
            return kind;
    throw ConfigError("unknown layer kind '" + s + "'");
}

LayerDesc LayerDesc::conv(std::size_t out, Pair kernel, Pair stride, Pair padding, bool bias)
{
    LayerDesc d;
    d.kind = LayerKind::conv;
    d.out = out;
    d.kernel = kernel;
    d.stride = stride;
    d.padding = padding;
    d.bias = bias;
    return d;
}

LayerDesc LayerDesc::pool(Pair kernel, Pair stride, Pair padding)
{
    LayerDesc d;
    d.kind = LayerKind::pool;
    d.kernel = kernel;
    d.stride = stride;
    d.padding = padding;
    return d;
}

LayerDesc LayerDesc::batchnorm()
{
    LayerDesc d;
    d.kind = LayerKind::batchnorm;
    return d;
}

LayerDesc LayerDesc::relu()
{
    return LayerDesc{};
}

LayerDesc LayerDesc::dropout(double rate)
{
    LayerDesc d;
    d.kind = LayerKind::dropout;
    d.rate = rate;
    return d;
}

LayerDesc LayerDesc::flatten()
{
    LayerDesc d;
    d.kind = LayerKind::flatten;
    return d;
}

LayerDesc LayerDesc::dense(std::size_t out, bool bias)
{
    LayerDesc d;
    d.kind = LayerKind::dense;
    d.out = out;
    d.bias = bias;
    return d;
}

LayerDesc LayerDesc::adaptive_avg_pool(Pair out)
{
    LayerDesc d;
    d.kind = LayerKind::adaptive_avg_pool;
    d.pool_out = out;
    return d;
}

LayerDesc LayerDesc::bottleneck(std::size_t width, std::size_t blocks, Pair stride)
{
    LayerDesc d;
    d.kind = LayerKind::bottleneck;
    d.width = width;
    d.blocks = blocks;
    d.stride = stride;
    return d;
}

// ---------------------------------------------------------------------------
// Spec identity and serialization

Shape ArchSpec::input_shape() const
{
    return mode == Mode::real ? Shape{1, 512, 128} : Shape{4, 64, 64};
}

namespace {

nlohmann::json pair_json(Pair p)
{
    return nlohmann::json::array({p.h, p.w});
}

Pair json_pair(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 2)
        throw ConfigError("expected a [h, w] pair, got " + j.dump());
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

nlohmann::json layers_json(const std::vector<LayerDesc>& layers)
{
    auto arr = nlohmann::json::array();
    for (const auto& d : layers) {
        nlohmann::json j{{"kind", to_string(d.kind)}};
        switch (d.kind) {
        case LayerKind::conv:
            j["out"] = d.out;
            j["kernel"] = pair_json(d.kernel);
            j["stride"] = pair_json(d.stride);
            j["padding"] = pair_json(d.padding);
            j["bias"] = d.bias;
            break;
        case LayerKind::pool:
            j["kernel"] = pair_json(d.kernel);
            j["stride"] = pair_json(d.stride);
            j["padding"] = pair_json(d.padding);
            break;
        case LayerKind::dropout:
            j["rate"] = d.rate;
            break;
        case LayerKind::dense:
            j["out"] = d.out;
            j["bias"] = d.bias;
            break;
        case LayerKind::adaptive_avg_pool:
            j["out"] = pair_json(d.pool_out);
            break;
        case LayerKind::bottleneck:
            j["width"] = d.width;
            j["blocks"] = d.blocks;
            j["stride"] = pair_json(d.stride);
            break;
        default:
            break;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::size_t final_dense_index(const ArchSpec& spec)
{
    for (std::size_t i = spec.layers.size(); i-- > 0;)
        if (spec.layers[i].kind == LayerKind::dense)
            return i;
    throw ConfigError("architecture " + spec.name + " has no final dense layer");
}

}  // namespace

std::string ArchSpec::body_fingerprint() const
{
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(layers_json(layers).dump())));
    return "zoo/" + name + "/" + to_string(mode) + "/" + hash;
}

std::string ArchSpec::fingerprint() const
{
    return body_fingerprint() + "/classes=" + std::to_string(num_classes);
}

nlohmann::json ArchSpec::to_json() const
{
    return {{"name", name}, {"mode", to_string(mode)}, {"num_classes", num_classes}, {"layers", layers_json(layers)}};
}

ArchSpec ArchSpec::from_json(const nlohmann::json& j)
{
    try {
        ArchSpec s;
        s.name = j.at("name").get<std::string>();
        s.mode = parse_mode(j.at("mode").get<std::string>());
        s.num_classes = j.at("num_classes").get<std::size_t>();
        for (const auto& l : j.at("layers")) {
            LayerDesc d;
            d.kind = parse_kind(l.at("kind").get<std::string>());
            if (l.contains("out") && !l["out"].is_array())
                d.out = l["out"].get<std::size_t>();
            if (l.contains("kernel"))
                d.kernel = json_pair(l["kernel"]);
            if (l.contains("stride"))
                d.stride = json_pair(l["stride"]);
            if (l.contains("padding"))
                d.padding = json_pair(l["padding"]);
            else if (d.kind == LayerKind::pool)
                d.padding = {0, 0};
            d.bias = l.value("bias", true);
            d.rate = l.value("rate", 0.5);
            if (d.kind == LayerKind::adaptive_avg_pool)
                d.pool_out = json_pair(l.at("out"));
            d.width = l.value("width", std::size_t{0});
            d.blocks = l.value("blocks", std::size_t{0});
            s.layers.push_back(d);
        }
        validate(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed architecture spec: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Shipped specs

namespace {

using L = LayerDesc;

ArchSpec make(std::string name, Mode mode, std::size_t classes, std::vector<LayerDesc> layers)
{
    ArchSpec s;
    s.name = std::move(name);
    s.mode = mode;
    s.num_classes = classes;
    s.layers = std::move(layers);
    validate(s);
    return s;
}

}  // namespace

ArchSpec vgg16(Mode mode, std::size_t num_classes)
{
    std::vector<LayerDesc> layers;
    const std::size_t cfg[5][2] = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
    for (const auto& [ch, reps] : cfg) {
        for (std::size_t r = 0; r < reps; ++r) {
            layers.push_back(L::conv(ch));
            layers.push_back(L::relu());
        }
        layers.push_back(L::pool({2, 2}, {2, 2}));
    }
    // No adaptive average pool before the classifier.
    for (auto l : {L::flatten(), L::dense(4096), L::relu(), L::dropout(0.5), L::dense(4096), L::relu(),
                   L::dropout(0.5), L::dense(0)})
        layers.push_back(l);
    return make("vgg16", mode, num_classes, layers);
}

ArchSpec alexnet(Mode mode, std::size_t num_classes)
{
    return make("alexnet", mode, num_classes,
                {L::conv(64, {11, 11}, {4, 4}, {2, 2}), L::relu(), L::pool({3, 3}, {2, 2}),
                 L::conv(192, {5, 5}, {1, 1}, {2, 2}), L::relu(), L::pool({3, 3}, {2, 2}),
                 L::conv(384), L::relu(), L::conv(256), L::relu(), L::conv(256), L::relu(),
                 L::pool({3, 3}, {2, 2}), L::adaptive_avg_pool({6, 6}), L::flatten(), L::dropout(0.5),
                 L::dense(4096), L::relu(), L::dropout(0.5), L::dense(4096), L::relu(), L::dense(0)});
}

ArchSpec resnet50(Mode mode, std::size_t num_classes)
{
    return make("resnet50", mode, num_classes,
                {L::conv(64, {7, 7}, {2, 2}, {3, 3}, false), L::batchnorm(), L::relu(),
                 L::pool({3, 3}, {2, 2}, {1, 1}), L::bottleneck(64, 3, {1, 1}), L::bottleneck(128, 4, {2, 2}),
                 L::bottleneck(256, 6, {2, 2}), L::bottleneck(512, 3, {2, 2}), L::adaptive_avg_pool({1, 1}),
                 L::flatten(), L::dense(0)});
}

ArchSpec mini_cnn(Mode mode, std::size_t num_classes)
{
    return make("mini-cnn", mode, num_classes,
                {L::conv(8), L::relu(), L::pool({4, 4}, {4, 4}), L::conv(16), L::relu(), L::pool({4, 4}, {4, 4}),
                 L::adaptive_avg_pool({4, 4}), L::flatten(), L::dense(0)});
}

ArchSpec mini_vgg(Mode mode, std::size_t num_classes)
{
    return make("mini-vgg", mode, num_classes,
                {L::conv(8), L::relu(), L::conv(8), L::relu(), L::pool({4, 4}, {4, 4}), L::conv(16), L::relu(),
                 L::conv(16), L::relu(), L::pool({4, 4}, {4, 4}), L::conv(32), L::relu(), L::pool({4, 4}, {4, 4}),
                 L::flatten(), L::dense(64), L::relu(), L::dropout(0.5), L::dense(0)});
}

ArchSpec mini_alexnet(Mode mode, std::size_t num_classes)
{
    return make("mini-alexnet", mode, num_classes,
                {L::conv(16, {5, 5}, {2, 2}, {2, 2}), L::relu(), L::pool({3, 3}, {2, 2}), L::conv(32), L::relu(),
                 L::pool({3, 3}, {2, 2}), L::conv(32), L::relu(), L::adaptive_avg_pool({2, 2}), L::flatten(),
                 L::dropout(0.5), L::dense(64), L::relu(), L::dense(0)});
}

ArchSpec mini_resnet(Mode mode, std::size_t num_classes)
{
    return make("mini-resnet", mode, num_classes,
                {L::conv(16, {3, 3}, {2, 2}, {1, 1}, false), L::batchnorm(), L::relu(), L::pool({2, 2}, {2, 2}),
                 L::bottleneck(8, 1, {1, 1}), L::bottleneck(16, 1, {2, 2}), L::adaptive_avg_pool({1, 1}),
                 L::flatten(), L::dense(0)});
}

std::vector<std::string> shipped_names()
{
    return {"vgg16", "alexnet", "resnet50", "mini-cnn", "mini-vgg", "mini-alexnet", "mini-resnet"};
}

ArchSpec by_name(const std::string& name, Mode mode, std::size_t num_classes)
{
    if (name == "vgg16")
        return vgg16(mode, num_classes);
    if (name == "alexnet")
        return alexnet(mode, num_classes);
    if (name == "resnet50")
        return resnet50(mode, num_classes);
    if (name == "mini-cnn")
        return mini_cnn(mode, num_classes);
    if (name == "mini-vgg")
        return mini_vgg(mode, num_classes);
    if (name == "mini-alexnet")
        return mini_alexnet(mode, num_classes);
    if (name == "mini-resnet")
        return mini_resnet(mode, num_classes);
    throw ConfigError("unknown architecture '" + name + "'");
}

// ---------------------------------------------------------------------------
// Shape walk shared by audit and build

namespace {

template <typename T>
std::unique_ptr<nn::Layer<T>> make_conv(Mode mode, std::size_t in, std::size_t out, Pair k, Pair s, Pair p,
                                        bool bias, Rng& rng)
{
    if (mode == Mode::quaternion)
        return std::make_unique<qnn::QuatConv2d<T>>(in / 4, out / 4, k, s, p, bias, rng);
    return std::make_unique<nn::Conv2d<T>>(in, out, k, s, p, bias, rng);
}

std::size_t conv_count(Mode mode, std::size_t in, std::size_t out, Pair k, bool bias)
{
    return qnn::layer_param_count({in, out, k.h, k.w, bias, mode == Mode::quaternion});
}

template <typename T>
class Bottleneck final : public nn::Layer<T> {
public:
    Bottleneck(Mode mode, std::size_t in, std::size_t width, Pair stride, Rng& rng)
    {
        const std::size_t out = 4 * width;
        conv1_ = make_conv<T>(mode, in, width, {1, 1}, {1, 1}, {0, 0}, false, rng);
        bn1_ = std::make_unique<nn::BatchNorm<T>>(width);
        conv2_ = make_conv<T>(mode, width, width, {3, 3}, stride, {1, 1}, false, rng);
        bn2_ = std::make_unique<nn::BatchNorm<T>>(width);
        conv3_ = make_conv<T>(mode, width, out, {1, 1}, {1, 1}, {0, 0}, false, rng);
        bn3_ = std::make_unique<nn::BatchNorm<T>>(out);
        if (needs_projection(in, width, stride)) {
            proj_ = make_conv<T>(mode, in, out, {1, 1}, stride, {0, 0}, false, rng);
            proj_bn_ = std::make_unique<nn::BatchNorm<T>>(out);
        }
    }

    static bool needs_projection(std::size_t in, std::size_t width, Pair stride)
    {
        return in != 4 * width || stride.h != 1 || stride.w != 1;
    }

    static std::size_t count(Mode mode, std::size_t in, std::size_t width, Pair stride)
    {
        const std::size_t out = 4 * width;
        std::size_t n = conv_count(mode, in, width, {1, 1}, false) + 2 * width +
                        conv_count(mode, width, width, {3, 3}, false) + 2 * width +
                        conv_count(mode, width, out, {1, 1}, false) + 2 * out;
        if (needs_projection(in, width, stride))
            n += conv_count(mode, in, out, {1, 1}, false) + 2 * out;
        return n;
    }

    Tensor<T> forward(const Tensor<T>& x, nn::Context& ctx) override
    {
        auto y = ops::relu(bn1_->forward(conv1_->forward(x, ctx), ctx));
        y = ops::relu(bn2_->forward(conv2_->forward(y, ctx), ctx));
        y = bn3_->forward(conv3_->forward(y, ctx), ctx);
        auto shortcut = proj_ ? proj_bn_->forward(proj_->forward(x, ctx), ctx) : x;
        return ops::relu(ops::add(y, shortcut));
    }

    void collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) override
    {
        conv1_->collect(prefix + "conv1.", out);
        bn1_->collect(prefix + "bn1.", out);
        conv2_->collect(prefix + "conv2.", out);
        bn2_->collect(prefix + "bn2.", out);
        conv3_->collect(prefix + "conv3.", out);
        bn3_->collect(prefix + "bn3.", out);
        if (proj_) {
            proj_->collect(prefix + "proj.", out);
            proj_bn_->collect(prefix + "proj_bn.", out);
        }
    }

private:
    std::unique_ptr<nn::Layer<T>> conv1_, conv2_, conv3_, proj_;
    std::unique_ptr<nn::BatchNorm<T>> bn1_, bn2_, bn3_, proj_bn_;
};

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const std::string& where)
{
    if (s == 0 || in + 2 * p < k)
        throw ConfigError(where + ": kernel " + std::to_string(k) + " does not fit extent " + std::to_string(in));
    return (in + 2 * p - k) / s + 1;
}

void require_quaternion(std::size_t channels, const std::string& where)
{
    if (channels % 4 != 0)
        throw ConfigError(where + ": " + std::to_string(channels) +
                          " real channels are not divisible by 4 in quaternion mode");
}

/// Walks the ArchSpec, counting parameters and (when seq is given) building.
template <typename T>
void walk(const ArchSpec& spec, ParamAudit& audit, nn::Sequential<T>* seq, Rng* rng)
{
    const std::size_t final_idx = final_dense_index(spec);
    const bool quat = spec.mode == Mode::quaternion;
    if (spec.num_classes == 0)
        throw ConfigError(spec.name + ": num_classes must be positive");
    Shape cur = spec.input_shape();
    audit = ParamAudit{};
    audit.arch = spec.name;
    audit.mode = spec.mode;
    std::size_t counter = 0;

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& d = spec.layers[i];
        const bool is_final = i == final_idx;
        const std::string name = is_final ? std::string(final_layer_name) : to_string(d.kind) + std::to_string(counter++);
        const std::string where = spec.name + " layer " + std::to_string(i) + " (" + to_string(d.kind) + ")";
        std::size_t params = 0;
        switch (d.kind) {
        case LayerKind::conv: {
            if (cur.size() != 3)
                throw ConfigError(where + ": convolution after flatten");
            if (d.out == 0)
                throw ConfigError(where + ": output channels must be positive");
            if (quat) {
                require_quaternion(cur[0], where);
                require_quaternion(d.out, where);
            }
            params = conv_count(spec.mode, cur[0], d.out, d.kernel, d.bias);
            if (seq)
                seq->add(name, make_conv<T>(spec.mode, cur[0], d.out, d.kernel, d.stride, d.padding, d.bias, *rng));
            cur = {d.out, out_extent(cur[1], d.kernel.h, d.stride.h, d.padding.h, where),
                   out_extent(cur[2], d.kernel.w, d.stride.w, d.padding.w, where)};
            break;
        }
        case LayerKind::pool:
            if (cur.size() != 3)
                throw ConfigError(where + ": pooling after flatten");
            if (seq)
                seq->template emplace<nn::MaxPool<T>>(name, d.kernel, d.stride, d.padding);
            cur = {cur[0], out_extent(cur[1], d.kernel.h, d.stride.h, d.padding.h, where),
                   out_extent(cur[2], d.kernel.w, d.stride.w, d.padding.w, where)};
            break;
        case LayerKind::batchnorm:
            params = 2 * cur[0];
            if (seq)
                seq->template emplace<nn::BatchNorm<T>>(name, cur[0]);
            break;
        case LayerKind::relu:
            if (seq)
                seq->template emplace<nn::ReLU<T>>(name);
            break;
        case LayerKind::dropout:
            if (!(d.rate >= 0.0 && d.rate < 1.0))
                throw ConfigError(where + ": dropout rate must lie in [0,1)");
            if (seq)
                seq->template emplace<nn::Dropout<T>>(name, d.rate);
            break;
        case LayerKind::flatten:
            if (seq)
                seq->template emplace<nn::Flatten<T>>(name, quat);
            cur = {shape_numel(cur)};
            break;
        case LayerKind::adaptive_avg_pool:
            if (cur.size() != 3 || d.pool_out.h == 0 || d.pool_out.w == 0)
                throw ConfigError(where + ": invalid adaptive pool");
            if (seq)
                seq->template emplace<nn::AdaptiveAvgPool<T>>(name, d.pool_out);
            cur = {cur[0], d.pool_out.h, d.pool_out.w};
            break;
        case LayerKind::dense: {
            if (cur.size() != 1)
                throw ConfigError(where + ": dense layer needs a flatten first");
            const std::size_t out = is_final ? spec.num_classes : d.out;
            if (out == 0)
                throw ConfigError(where + ": output features must be positive");
            const bool q = quat && !is_final;
            if (q) {
                require_quaternion(cur[0], where);
                require_quaternion(out, where);
            }
            params = qnn::layer_param_count({cur[0], out, 1, 1, d.bias, q});
            if (seq) {
                if (q)
                    seq->template emplace<qnn::QuatDense<T>>(name, cur[0] / 4, out / 4, d.bias, *rng);
                else
                    seq->template emplace<nn::Dense<T>>(name, cur[0], out, d.bias, *rng);
            }
            cur = {out};
            break;
        }
        case LayerKind::bottleneck: {
            if (cur.size() != 3 || d.width == 0 || d.blocks == 0)
                throw ConfigError(where + ": invalid bottleneck stage");
            if (quat) {
                require_quaternion(cur[0], where);
                require_quaternion(d.width, where);
            }
            for (std::size_t b = 0; b < d.blocks; ++b) {
                const Pair stride = b == 0 ? d.stride : Pair{1, 1};
                const std::string block = name + "_" + std::to_string(b);
                const std::size_t n = Bottleneck<T>::count(spec.mode, cur[0], d.width, stride);
                audit.layers.push_back({block, "bottleneck", n});
                audit.total += n;
                if (seq)
                    seq->template emplace<Bottleneck<T>>(block, spec.mode, cur[0], d.width, stride, *rng);
                cur = {4 * d.width, out_extent(cur[1], 3, stride.h, 1, where), out_extent(cur[2], 3, stride.w, 1, where)};
            }
            continue;
        }
        }
        audit.layers.push_back({name, to_string(d.kind), params});
        audit.total += params;
    }
    if (cur != Shape{spec.num_classes})
        throw ConfigError(spec.name + ": network ends in " + shape_str(cur) + ", not the classifier");
}

}  // namespace

void validate(const ArchSpec& spec)
{
    ParamAudit a;
    walk<float>(spec, a, nullptr, nullptr);
}

ParamAudit audit_params(const ArchSpec& spec)
{
    ParamAudit a;
    walk<float>(spec, a, nullptr, nullptr);
    return a;
}

double ParamAudit::ratio_to(const ParamAudit& other) const
{
    return static_cast<double>(total) / static_cast<double>(other.total);
}

template <typename T>
Network<T>::Network(const ArchSpec& spec, Rng& rng) : spec_(spec)
{
    ParamAudit a;
    walk<T>(spec_, a, &body_, &rng);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, nn::Context& ctx)
{
    const Shape want = spec_.input_shape();
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != want)
        throw ShapeError(spec_.name + " (" + to_string(spec_.mode) + ") expects [N," + std::to_string(want[0]) + "," +
                         std::to_string(want[1]) + "," + std::to_string(want[2]) + "] input, got " +
                         shape_str(x.shape()));
    return body_.forward(x, ctx);
}

template <typename T>
void Network<T>::collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out)
{
    body_.collect(prefix, out);
}

template <typename T>
std::unique_ptr<Network<T>> build(const ArchSpec& spec, Rng& rng)
{
    return std::make_unique<Network<T>>(spec, rng);
}

void transfer_init(Network<float>& model, const ckpt::Checkpoint& source, bool exclude_final)
{
    const auto& spec = model.spec();
    std::vector<std::string> skip;
    if (exclude_final) {
        const std::string body = spec.body_fingerprint();
        if (source.fingerprint.compare(0, body.size(), body) != 0)
            throw DataError("source checkpoint '" + source.fingerprint + "' is not a " + body + " network");
        const std::string prefix = std::string(final_layer_name) + ".";
        for (const auto& nt : model.named_tensors())
            if (nt.name.compare(0, prefix.size(), prefix) == 0)
                skip.push_back(nt.name);
        ckpt::restore(model, source, "", skip);
    } else {
        ckpt::restore(model, source, spec.fingerprint());
    }
}

template class Network<float>;
template class Network<double>;
template std::unique_ptr<Network<float>> build(const ArchSpec&, Rng&);
template std::unique_ptr<Network<double>> build(const ArchSpec&, Rng&);

}  // namespace qser::zoo
