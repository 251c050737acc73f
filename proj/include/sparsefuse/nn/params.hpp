#ifndef SPARSEFUSE_NN_PARAMS_HPP
#define SPARSEFUSE_NN_PARAMS_HPP

#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparsefuse/common.hpp"
#include "sparsefuse/nn/tensor.hpp"

namespace sparsefuse::nn {

enum class Init { XavierUniform, Zeros, Ones };

// Named parameter registry with insertion order (iteration order is part of
// the determinism contract: init draws and checkpoint bytes depend on it).
class ParamStore {
 public:
  TensorPtr add(const std::string& name, std::vector<int> shape, Init init, Rng& rng) {
    if (by_name_.count(name)) throw ConfigError("ParamStore: duplicate name " + name);
    auto t = make_tensor(shape);
    t->requires_grad = true;
    if (init == Init::XavierUniform) {
      int fan_in = shape.size() >= 2 ? shape[0] : static_cast<int>(shape_size(shape));
      int fan_out = shape.size() >= 2 ? shape[1] : fan_in;
      double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t->values) v = rng.uniform(-a, a);
    } else if (init == Init::Ones) {
      for (auto& v : t->values) v = 1.0;
    }
    order_.push_back(name);
    by_name_[name] = t;
    return t;
  }

  TensorPtr get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  // Freezing also drops requires_grad so backward prunes the frozen subgraph
  // (inputs feeding through frozen ops still receive gradients).
  void freeze_prefix(const std::string& prefix) {
    frozen_prefixes_.push_back(prefix);
    apply_freeze();
  }
  void clear_frozen() {
    frozen_prefixes_.clear();
    apply_freeze();
  }
  void apply_freeze() {
    for (const auto& n : order_) by_name_.at(n)->requires_grad = !frozen(n);
  }
  const std::vector<std::string>& frozen_prefixes() const { return frozen_prefixes_; }

  bool frozen(const std::string& name) const {
    for (const auto& p : frozen_prefixes_)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }

  void zero_grads() {
    for (const auto& n : order_) {
      auto& t = *by_name_.at(n);
      if (!t.grad.empty()) t.zero_grad();
    }
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, TensorPtr> by_name_;
  std::vector<std::string> frozen_prefixes_;
};

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay). Frozen parameters receive zero updates.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW(ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {}

  // Update every non-frozen parameter whose gradient buffer is populated.
  void step() {
    ++t_;
    for (const auto& name : store_->names()) {
      auto p = store_->get(name);
      if (p->grad.empty()) continue;
      update(name, *p);
    }
  }

  // Explicit form: every requested parameter must have a populated gradient.
  void step(const std::vector<std::string>& names) {
    ++t_;
    for (const auto& name : names) {
      auto p = store_->get(name);
      if (p->grad.empty())
        throw ConfigError("adam: missing gradient for parameter " + name);
      update(name, *p);
    }
  }

 private:
  void update(const std::string& name, Tensor& p) {
    if (store_->frozen(name)) return;
    auto& st = state_[name];
    if (st.m.size() != p.values.size()) {
      st.m.assign(p.values.size(), 0.0);
      st.v.assign(p.values.size(), 0.0);
    }
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < p.values.size(); ++i) {
      double g = p.grad[i];
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = st.m[i] / bc1;
      double vhat = st.v[i] / bc2;
      p.values[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                cfg_.weight_decay * p.values[i]);
    }
  }

  struct State {
    std::vector<double> m, v;
  };
  ParamStore* store_;
  AdamConfig cfg_;
  std::unordered_map<std::string, State> state_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Tensor blob serialization. Little-endian file layout:
//   magic "SFTN" | u32 version | u32 count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 dims[rank]
//               | f32 values row-major
// Round trips are bit-exact.

namespace detail {
static_assert(sizeof(float) == 4);

inline void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}
inline uint32_t take_u32(const std::string& in, size_t& off, const char* what) {
  if (off + 4 > in.size()) throw ConfigError(std::string("checkpoint: truncated at ") + what);
  uint32_t v;
  std::memcpy(&v, in.data() + off, 4);
  off += 4;
  return v;
}
}  // namespace detail

inline constexpr uint32_t kTensorBlobVersion = 1;

inline std::string serialize_tensors(const ParamStore& store) {
  std::string out;
  out += "SFTN";
  detail::put_u32(out, kTensorBlobVersion);
  detail::put_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& name : store.names()) {
    auto t = store.get(name);
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<uint32_t>(t->shape.size()));
    for (int d : t->shape) detail::put_u32(out, static_cast<uint32_t>(d));
    for (double v : t->values) {
      float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  return out;
}

// Fills parameters of an existing store by name; shapes must match. With
// `ignore_unknown`, records the store does not know are skipped (used when a
// checkpoint carries another fusion strategy's parameter group).
inline void deserialize_tensors(const std::string& blob, ParamStore& store,
                                size_t* offset = nullptr, bool ignore_unknown = false) {
  size_t off = offset ? *offset : 0;
  if (blob.size() < off + 12 || blob.compare(off, 4, "SFTN") != 0)
    throw ConfigError("checkpoint: bad tensor blob magic");
  off += 4;
  uint32_t version = detail::take_u32(blob, off, "version");
  if (version != kTensorBlobVersion)
    throw ConfigError("checkpoint: unsupported tensor blob version " + std::to_string(version));
  uint32_t count = detail::take_u32(blob, off, "count");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::take_u32(blob, off, "name length");
    if (off + name_len > blob.size()) throw ConfigError("checkpoint: truncated name");
    std::string name = blob.substr(off, name_len);
    off += name_len;
    uint32_t rank = detail::take_u32(blob, off, "rank");
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(detail::take_u32(blob, off, "dim"));
      n *= shape[d];
    }
    if (off + static_cast<size_t>(n) * 4 > blob.size())
      throw ConfigError("checkpoint: truncated values for " + name);
    if (!store.has(name)) {
      if (!ignore_unknown) throw ConfigError("checkpoint: unknown parameter " + name);
      off += static_cast<size_t>(n) * 4;
      continue;
    }
    auto t = store.get(name);
    if (t->shape != shape)
      throw ConfigError("checkpoint: shape mismatch for " + name + ": file " + shape_str(shape) +
                        " vs model " + shape_str(t->shape));
    for (int64_t k = 0; k < n; ++k) {
      float f;
      std::memcpy(&f, blob.data() + off, 4);
      off += 4;
      t->values[static_cast<size_t>(k)] = static_cast<double>(f);
    }
  }
  if (offset) *offset = off;
}

}  // namespace sparsefuse::nn

#endif  // SPARSEFUSE_NN_PARAMS_HPP
