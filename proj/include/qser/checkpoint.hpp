#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "qser/nn.hpp"
#include "qser/tensor.hpp"

namespace qser::ckpt {

inline constexpr int format_version = 1;

/// Named float tensors plus a fingerprint of the architecture that wrote
/// them. On disk: a text header (magic, version, fingerprint, one-line JSON
/// metadata, tensor directory) followed by row-major little-endian float32
/// payloads in directory order.
struct Checkpoint {
    std::string fingerprint;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<nn::NamedTensor<float>> tensors;
    /// Optimizer buffers, kept apart so loading weights never needs them.
    std::vector<nn::NamedTensor<float>> optimizer;

    const Tensor<float>* find(const std::string& name) const;
};

void save(const Checkpoint& c, const std::filesystem::path& path);
/// Throws DataError on a malformed or truncated file.
Checkpoint load(const std::filesystem::path& path);

/// Snapshot of a module's tensors (values copied).
Checkpoint capture(nn::Module<float>& module, const std::string& fingerprint);

/// Copies checkpoint values into the module's tensors. Every module tensor
/// must be present with the same shape unless its name is in `skip`.
/// Throws DataError naming the offending tensor; a fingerprint mismatch is
/// an error unless `expected_fingerprint` is empty.
void restore(nn::Module<float>& module, const Checkpoint& c, const std::string& expected_fingerprint,
             const std::vector<std::string>& skip = {});

}  // namespace qser::ckpt
