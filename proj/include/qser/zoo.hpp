#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "qser/checkpoint.hpp"
#include "qser/nn.hpp"
#include "qser/qnn.hpp"

/// Declarative CNNs in real and quaternion modes.
namespace qser::zoo {

using ops::Pair;

enum class Mode { real, quaternion };
std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

enum class LayerKind { conv, pool, batchnorm, relu, dropout, flatten, dense, adaptive_avg_pool, bottleneck };
std::string to_string(LayerKind k);
LayerKind parse_kind(const std::string& s);

/// One entry of an ArchSpec. Channel and feature counts are real counts;
/// in quaternion mode they must be divisible by 4 (except the final dense).
struct LayerDesc {
    LayerKind kind = LayerKind::relu;
    std::size_t out = 0;       // conv channels, dense features (0 on the last dense = num_classes)
    Pair kernel{3, 3};         // conv, pool
    Pair stride{1, 1};         // conv, pool; bottleneck stage stride
    Pair padding{1, 1};        // conv, pool
    bool bias = true;          // conv, dense
    double rate = 0.5;         // dropout
    Pair pool_out{1, 1};       // adaptive_avg_pool
    std::size_t width = 0;     // bottleneck: inner channels (output is 4 * width)
    std::size_t blocks = 0;    // bottleneck: blocks in the stage

    static LayerDesc conv(std::size_t out, Pair kernel = {3, 3}, Pair stride = {1, 1}, Pair padding = {1, 1},
                          bool bias = true);
    static LayerDesc pool(Pair kernel, Pair stride, Pair padding = {0, 0});
    static LayerDesc batchnorm();
    static LayerDesc relu();
    static LayerDesc dropout(double rate);
    static LayerDesc flatten();
    static LayerDesc dense(std::size_t out, bool bias = true);
    static LayerDesc adaptive_avg_pool(Pair out);
    static LayerDesc bottleneck(std::size_t width, std::size_t blocks, Pair stride);
};

/// The last dense layer is the classifier; it is always real-valued and its
/// width is num_classes.
struct ArchSpec {
    std::string name;
    std::vector<LayerDesc> layers;
    Mode mode = Mode::real;
    std::size_t num_classes = 4;

    /// {1,512,128} in real mode, {4,64,64} (the RH-emo embedding) in
    /// quaternion mode.
    Shape input_shape() const;
    /// Identity of everything except the classifier width.
    std::string body_fingerprint() const;
    std::string fingerprint() const;
    nlohmann::json to_json() const;
    static ArchSpec from_json(const nlohmann::json& j);
};

ArchSpec vgg16(Mode mode, std::size_t num_classes = 4);
ArchSpec alexnet(Mode mode, std::size_t num_classes = 4);
ArchSpec resnet50(Mode mode, std::size_t num_classes = 4);
ArchSpec mini_cnn(Mode mode, std::size_t num_classes = 4);
ArchSpec mini_vgg(Mode mode, std::size_t num_classes = 4);
ArchSpec mini_alexnet(Mode mode, std::size_t num_classes = 4);
ArchSpec mini_resnet(Mode mode, std::size_t num_classes = 4);
/// vgg16 | alexnet | resnet50 | mini-cnn | mini-vgg | mini-alexnet | mini-resnet
ArchSpec by_name(const std::string& name, Mode mode, std::size_t num_classes = 4);
std::vector<std::string> shipped_names();

struct LayerCount {
    std::string name;
    std::string kind;
    std::size_t params = 0;
};

struct ParamAudit {
    std::string arch;
    Mode mode = Mode::real;
    std::vector<LayerCount> layers;
    std::size_t total = 0;

    double ratio_to(const ParamAudit& other) const;
};

/// Exact trainable-scalar count by shape inference only. Throws ConfigError
/// if the ArchSpec does not validate.
ParamAudit audit_params(const ArchSpec& spec);
/// Throws ConfigError on divisibility violations, bad shapes, or a spec
/// without a final dense layer.
void validate(const ArchSpec& spec);

/// Name prefix of the classifier's tensors.
inline constexpr const char* final_layer_name = "final";

template <typename T>
class Network final : public nn::Layer<T> {
public:
    Network(const ArchSpec& spec, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, nn::Context& ctx) override;
    void collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) override;

    const ArchSpec& spec() const { return spec_; }
    std::size_t size() const { return body_.size(); }

private:
    ArchSpec spec_;
    nn::Sequential<T> body_;
};

template <typename T>
std::unique_ptr<Network<T>> build(const ArchSpec& spec, Rng& rng);

/// Loads every tensor from a checkpoint of the same body. With exclude_final
/// the classifier keeps its fresh initialization and may differ in width;
/// otherwise the full fingerprints must agree. Throws DataError naming the
/// first mismatched tensor.
void transfer_init(Network<float>& model, const ckpt::Checkpoint& source, bool exclude_final);

}  // namespace qser::zoo
