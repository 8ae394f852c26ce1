#pragma once

// Parameter registry and the two layer blocks (linear, linear+norm+relu)
// every head and backbone in this project is assembled from.

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s::nn {

struct Parameter {
  std::string name;
  ad::Tensor tensor;
};

// Ordered, uniquely named parameter set; checkpointing and the optimizer
// both rely on registration order being stable.
class ParamStore {
 public:
  ad::Tensor add(const std::string& name, ad::Tensor t) {
    if (!names_.insert(name).second) throw Error("ParamStore: duplicate parameter name " + name);
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
  }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  size_t size() const { return params_.size(); }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_set<std::string> names_;
};

// Fan-based uniform init in +-sqrt(6 / (fan_in + fan_out)).
inline ad::Tensor init_linear_weight(int64_t in, int64_t out, Rng& rng) {
  ad::Tensor w({in, out});
  double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  double* d = w.data();
  for (int64_t i = 0; i < w.numel(); ++i) d[i] = rng.uniform(-bound, bound);
  return w;
}

struct Linear {
  ad::Tensor w, b;

  ad::Tensor operator()(const ad::Tensor& x) const { return ad::linear(x, w, b); }
  int64_t in_features() const { return w.rows(); }
  int64_t out_features() const { return w.cols(); }
};

inline Linear make_linear(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                          Rng& rng) {
  Linear l;
  l.w = store.add(name + ".w", init_linear_weight(in, out, rng));
  l.b = store.add(name + ".b", ad::Tensor({out}));
  return l;
}

struct NormLayer {
  ad::Tensor gamma, beta;
  double eps = 1e-5;

  ad::Tensor operator()(const ad::Tensor& x) const { return ad::channel_norm(x, gamma, beta, eps); }
};

inline NormLayer make_norm(ParamStore& store, const std::string& name, int64_t c) {
  NormLayer n;
  n.gamma = store.add(name + ".gamma", ad::Tensor::full({c}, 1.0));
  n.beta = store.add(name + ".beta", ad::Tensor({c}));
  return n;
}

// Stack of linear layers with per-row channel norm and relu between them.
// The last layer is plain linear unless final_activation is set.
struct Mlp {
  struct Block {
    Linear lin;
    bool activated = false;
    NormLayer norm;  // valid only when activated
  };
  std::vector<Block> blocks;

  ad::Tensor operator()(ad::Tensor x) const {
    for (const Block& b : blocks) {
      x = b.lin(x);
      if (b.activated) x = ad::relu(b.norm(x));
    }
    return x;
  }

  int64_t out_features() const { return blocks.back().lin.out_features(); }
};

inline Mlp make_mlp(ParamStore& store, const std::string& name, int64_t in,
                    const std::vector<int64_t>& widths, Rng& rng, bool final_activation = true) {
  if (widths.empty()) throw ConfigError("make_mlp: empty width list for " + name);
  Mlp m;
  int64_t prev = in;
  for (size_t i = 0; i < widths.size(); ++i) {
    Mlp::Block b;
    std::string lname = name + "." + std::to_string(i);
    b.lin = make_linear(store, lname, prev, widths[i], rng);
    b.activated = final_activation || i + 1 < widths.size();
    if (b.activated) b.norm = make_norm(store, lname + ".norm", widths[i]);
    m.blocks.push_back(std::move(b));
    prev = widths[i];
  }
  return m;
}

}  // namespace s2s::nn
