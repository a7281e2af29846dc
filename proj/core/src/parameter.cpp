#include "ccnet/parameter.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "ccnet/error.hpp"

namespace ccnet {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

Tensor ParameterStore::add(std::string name, Tensor tensor, bool decay) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  if (!tensor.is_leaf()) throw ContractError("parameter '" + name + "' must be a leaf tensor");
  tensor.set_requires_grad(true);
  params_.push_back({std::move(name), tensor, decay});
  return tensor;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& p : params_) out.add(p.name, p.tensor.detach(), p.decay);
  return out;
}

void sgd_step(std::span<Parameter> params, double lr, double weight_decay) {
  if (!(lr >= 0.0)) throw ContractError("sgd_step: learning rate must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ContractError("sgd_step: weight decay must be nonnegative");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw ContractError("sgd_step: parameter '" + p.name + "' has no gradient");
  }
  for (auto& p : params) {
    auto v = p.tensor.mutable_values();
    auto g = p.tensor.grad();
    const double wd = p.decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * (g[i] + wd * v[i]);
    p.tensor.clear_grad();
  }
}

namespace {

template <typename T>
void put(std::vector<std::byte>& out, T value) {
  const auto* raw = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw ConfigError("checkpoint truncated");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string string(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ConfigError("checkpoint truncated");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> serialize_checkpoint(const ParameterStore& store) {
  std::vector<std::byte> out;
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, store.size());
  for (const auto& p : store.all()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    for (char c : p.name) out.push_back(static_cast<std::byte>(c));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t e : p.tensor.shape()) put<std::uint64_t>(out, e);
    for (double v : p.tensor.values()) put<double>(out, v);
  }
  return out;
}

void deserialize_checkpoint(ParameterStore& store, std::span<const std::byte> bytes) {
  Reader in(bytes);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint64_t>();
  std::map<std::string, std::pair<Shape, std::vector<double>>> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = in.string(in.get<std::uint32_t>());
    Shape shape(in.get<std::uint32_t>());
    for (auto& e : shape) e = in.get<std::uint64_t>();
    std::vector<double> values(element_count(shape));
    for (auto& v : values) v = in.get<double>();
    entries.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw ConfigError("trailing bytes after checkpoint payload");
  for (auto& p : store.all()) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second.first != p.tensor.shape()) {
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + to_string(it->second.first) +
                        ", model expects " + to_string(p.tensor.shape()));
    }
    std::copy(it->second.second.begin(), it->second.second.end(), p.tensor.mutable_values().begin());
  }
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  deserialize_checkpoint(store, std::as_bytes(std::span(raw)));
}

}  // namespace ccnet
