#include "qser/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "qser/errors.hpp"

namespace qser::ckpt {

namespace {

constexpr const char* magic = "QSERCKPT";

void write_values(std::ostream& out, std::span<const float> values)
{
    static_assert(sizeof(float) == 4);
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b)
            bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((u >> (8 * b)) & 0xFFu);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void read_values(std::istream& in, std::span<float> values, const std::string& name)
{
    std::vector<unsigned char> bytes(values.size() * 4);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size())
        throw DataError("checkpoint truncated while reading tensor " + name);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b)
            u |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
        values[i] = std::bit_cast<float>(u);
    }
}

std::string dims(const Shape& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

Shape parse_dims(const std::string& text, const std::string& name)
{
    Shape s;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(part, &used);
            if (used != part.size() || v == 0)
                throw std::invalid_argument(part);
            s.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw DataError("checkpoint tensor " + name + " has malformed shape '" + text + "'");
        }
    }
    if (s.empty())
        throw DataError("checkpoint tensor " + name + " has an empty shape");
    return s;
}

void check_name(const std::string& name)
{
    if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos)
        throw DataError("checkpoint tensor name '" + name + "' must be non-empty without whitespace");
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const
{
    for (const auto& nt : tensors)
        if (nt.name == name)
            return &nt.tensor;
    return nullptr;
}

void save(const Checkpoint& c, const std::filesystem::path& path)
{
    if (c.fingerprint.find('\n') != std::string::npos)
        throw DataError("checkpoint fingerprint must be a single line");
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write checkpoint " + path.string());
        out << magic << ' ' << format_version << '\n';
        out << "fingerprint " << c.fingerprint << '\n';
        out << "meta " << c.meta.dump() << '\n';
        out << "tensors " << c.tensors.size() << ' ' << c.optimizer.size() << '\n';
        for (const auto* group : {&c.tensors, &c.optimizer})
            for (const auto& nt : *group) {
                check_name(nt.name);
                out << nt.name << ' ' << dims(nt.tensor.shape()) << ' ' << (nt.trainable ? 1 : 0) << '\n';
            }
        out << "data\n";
        for (const auto* group : {&c.tensors, &c.optimizer})
            for (const auto& nt : *group)
                write_values(out, nt.tensor.data());
        if (!out)
            throw DataError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open checkpoint " + path.string());
    auto line = [&](const char* what) {
        std::string l;
        if (!std::getline(in, l))
            throw DataError("checkpoint " + path.string() + " ends before its " + what);
        return l;
    };
    auto expect_prefix = [&](const std::string& l, const std::string& prefix) {
        if (l.compare(0, prefix.size(), prefix) != 0)
            throw DataError("checkpoint " + path.string() + ": expected '" + prefix + "' line, got '" +
                            l.substr(0, 40) + "'");
        return l.substr(prefix.size());
    };

    const std::string head = line("header");
    if (head != std::string(magic) + " " + std::to_string(format_version))
        throw DataError(path.string() + " is not a version " + std::to_string(format_version) + " checkpoint");
    Checkpoint c;
    c.fingerprint = expect_prefix(line("fingerprint"), "fingerprint ");
    try {
        c.meta = nlohmann::json::parse(expect_prefix(line("metadata"), "meta "));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + " has malformed metadata: " + e.what());
    }
    std::istringstream counts(expect_prefix(line("tensor count"), "tensors "));
    std::size_t n_tensors = 0, n_optim = 0;
    if (!(counts >> n_tensors >> n_optim))
        throw DataError("checkpoint " + path.string() + " has a malformed tensor count");
    for (std::size_t i = 0; i < n_tensors + n_optim; ++i) {
        std::istringstream entry(line("tensor directory"));
        std::string name, shape;
        int trainable = 0;
        if (!(entry >> name >> shape >> trainable))
            throw DataError("checkpoint " + path.string() + " has a malformed directory entry");
        nn::NamedTensor<float> nt{name, Tensor<float>(parse_dims(shape, name)), trainable != 0};
        (i < n_tensors ? c.tensors : c.optimizer).push_back(std::move(nt));
    }
    if (line("data marker") != "data")
        throw DataError("checkpoint " + path.string() + " is missing its data marker");
    for (auto* group : {&c.tensors, &c.optimizer})
        for (auto& nt : *group)
            read_values(in, nt.tensor.data(), nt.name);
    if (in.peek() != std::char_traits<char>::eof())
        throw DataError("checkpoint " + path.string() + " has trailing bytes");
    return c;
}

Checkpoint capture(nn::Module<float>& module, const std::string& fingerprint)
{
    Checkpoint c;
    c.fingerprint = fingerprint;
    for (auto& nt : module.named_tensors())
        c.tensors.push_back({nt.name, nt.tensor.clone(), nt.trainable});
    return c;
}

void restore(nn::Module<float>& module, const Checkpoint& c, const std::string& expected_fingerprint,
             const std::vector<std::string>& skip)
{
    if (!expected_fingerprint.empty() && c.fingerprint != expected_fingerprint)
        throw DataError("checkpoint architecture '" + c.fingerprint + "' does not match '" + expected_fingerprint +
                        "'");
    std::map<std::string, const Tensor<float>*> by_name;
    for (const auto& nt : c.tensors)
        by_name[nt.name] = &nt.tensor;
    // Validate everything before touching the module.
    auto targets = module.named_tensors();
    for (const auto& nt : targets) {
        if (std::find(skip.begin(), skip.end(), nt.name) != skip.end())
            continue;
        auto it = by_name.find(nt.name);
        if (it == by_name.end())
            throw DataError("checkpoint has no tensor " + nt.name);
        if (it->second->shape() != nt.tensor.shape())
            throw DataError("checkpoint tensor " + nt.name + " has shape " + shape_str(it->second->shape()) +
                            " but the model expects " + shape_str(nt.tensor.shape()));
    }
    for (auto& nt : targets) {
        if (std::find(skip.begin(), skip.end(), nt.name) != skip.end())
            continue;
        const auto& src = by_name.at(nt.name)->values();
        std::copy(src.begin(), src.end(), nt.tensor.values().begin());
    }
}

}  // namespace qser::ckpt
