#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ftn/rng.hpp"
#include "ftn/tensor.hpp"

namespace ftn {

// Trainable tensor plus its Adam state. Addresses stay stable for the
// lifetime of the owning module.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> adam_m, adam_v;
  std::int64_t adam_step = 0;
};

// Minimal parameter registry. Submodules are registered by the owning
// module's constructor; params() walks the tree and returns dotted names.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    collect_params("", out);
    return out;
  }
  // Params plus persistent buffers (batch-norm running stats), for
  // checkpointing.
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    collect_state("", out);
    return out;
  }
  void zero_grad() {
    for (auto* p : params()) p->tensor.zero_grad();
  }

  void collect_params(const std::string& prefix, std::vector<Param<T>*>& out) {
    for (auto& p : own_params_) {
      p.name = prefix + p.local_name;
      out.push_back(&p);
    }
    for (auto& [name, child] : children_)
      child->collect_params(prefix + name + ".", out);
  }
  void collect_state(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    for (auto& p : own_params_) out.emplace_back(prefix + p.local_name, &p.tensor);
    for (auto& [name, buf] : own_buffers_)
      out.emplace_back(prefix + name, &buf);
    for (auto& [name, child] : children_)
      child->collect_state(prefix + name + ".", out);
  }

 protected:
  struct OwnedParam : Param<T> {
    std::string local_name;
  };

  Param<T>* add_param(const std::string& name, Tensor<T> init) {
    own_params_.emplace_back();
    auto& p = own_params_.back();
    p.local_name = name;
    p.name = name;
    p.tensor = std::move(init);
    p.tensor.set_requires_grad(true);
    return &p;
  }
  Tensor<T>* add_buffer(const std::string& name, Tensor<T> init) {
    own_buffers_.emplace_back(name, std::move(init));
    return &own_buffers_.back().second;
  }
  void add_child(const std::string& name, Module<T>* m) {
    children_.emplace_back(name, m);
  }

 private:
  std::deque<OwnedParam> own_params_;
  std::deque<std::pair<std::string, Tensor<T>>> own_buffers_;
  std::vector<std::pair<std::string, Module<T>*>> children_;

  template <typename U>
  friend class Module;
};

// --- layers -------------------------------------------------------------------

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in_c, int out_c, int k, int stride, int pad, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;

  Param<T>* weight;
  Param<T>* bias;
  int stride, pad;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int channels, T eps = T(1e-5), T momentum = T(0.1));
  Tensor<T> forward(const Tensor<T>& x, bool training) const;

  Param<T>* gamma;
  Param<T>* beta;
  Tensor<T>* running_mean;
  Tensor<T>* running_var;
  T eps, momentum;
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(int in_f, int out_f, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;

  Param<T>* weight;  // [out, in]
  Param<T>* bias;
};

// --- optimiser ------------------------------------------------------------------

struct AdamConfig {
  double lr = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Every passed param must carry a
// gradient; gradients are cleared after the update.
template <typename T>
void adam_step(const std::vector<Param<T>*>& params, const AdamConfig& cfg);

// --- finite-difference gradient checker -------------------------------------------

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise a fixed-seed random subsample of
  // at most this many coordinates per parameter.
  int max_coords_per_param = 0;
  std::uint64_t seed = 20240101;
};

// Compares analytic gradients of the scalar f() against central differences
// on every (or a sampled subset of) coordinate of the given params. Params
// with requires_grad=false are excluded. Returns the worst relative error
// with denominator max(|analytic|, |numeric|, 1e-8).
template <typename T>
double grad_check(const std::function<Tensor<T>()>& f,
                  const std::vector<Param<T>*>& params,
                  const GradCheckOptions& opt = {});

// Deterministic weight-init helpers.
template <typename T>
Tensor<T> he_normal(std::vector<idx> shape, idx fan_in, Rng& rng);

}  // namespace ftn
