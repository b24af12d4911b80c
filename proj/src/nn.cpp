#include "ftn/nn.hpp"

#include <algorithm>
#include <cmath>

namespace ftn {

template <typename T>
Tensor<T> he_normal(std::vector<idx> shape, idx fan_in, Rng& rng) {
  idx n = 1;
  for (idx e : shape) n *= e;
  std::vector<T> data(static_cast<size_t>(n));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : data) v = static_cast<T>(rng.normal() * std_dev);
  return Tensor<T>::from_data(std::move(shape), std::move(data));
}

template <typename T>
Conv2d<T>::Conv2d(int in_c, int out_c, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  weight = this->add_param(
      "weight", he_normal<T>({out_c, in_c, k, k},
                             static_cast<idx>(in_c) * k * k, rng));
  bias = this->add_param("bias", Tensor<T>::zeros({out_c}));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  return conv2d(x, weight->tensor, bias->tensor, stride, pad);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, T eps_, T momentum_)
    : eps(eps_), momentum(momentum_) {
  gamma = this->add_param("gamma", Tensor<T>::full({channels}, T(1)));
  beta = this->add_param("beta", Tensor<T>::zeros({channels}));
  running_mean = this->add_buffer("running_mean", Tensor<T>::zeros({channels}));
  running_var = this->add_buffer("running_var", Tensor<T>::full({channels}, T(1)));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) const {
  return batch_norm2d(x, gamma->tensor, beta->tensor, *running_mean,
                      *running_var, training, eps, momentum);
}

template <typename T>
Linear<T>::Linear(int in_f, int out_f, Rng& rng) {
  weight = this->add_param("weight",
                           he_normal<T>({out_f, in_f}, in_f, rng));
  bias = this->add_param("bias", Tensor<T>::zeros({out_f}));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  return linear(x, weight->tensor, bias->tensor);
}

template <typename T>
void adam_step(const std::vector<Param<T>*>& params, const AdamConfig& cfg) {
  for (auto* p : params) {
    if (!p->tensor.has_grad())
      throw Error("adam_step: param '" + p->name + "' has no gradient");
  }
  for (auto* p : params) {
    auto data = p->tensor.data();
    auto grad = p->tensor.grad();
    const size_t n = data.size();
    if (p->adam_m.empty()) {
      p->adam_m.assign(n, T(0));
      p->adam_v.assign(n, T(0));
    }
    p->adam_step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(p->adam_step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(p->adam_step));
    for (size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(grad[i]);
      p->adam_m[i] = static_cast<T>(b1 * p->adam_m[i] + (1.0 - b1) * g);
      p->adam_v[i] = static_cast<T>(b2 * p->adam_v[i] + (1.0 - b2) * g * g);
      const double mhat = static_cast<double>(p->adam_m[i]) / bc1;
      const double vhat = static_cast<double>(p->adam_v[i]) / bc2;
      data[i] = static_cast<T>(static_cast<double>(data[i]) -
                               cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    p->tensor.zero_grad();
  }
}

template <typename T>
double grad_check(const std::function<Tensor<T>()>& f,
                  const std::vector<Param<T>*>& params,
                  const GradCheckOptions& opt) {
  for (auto* p : params) p->tensor.zero_grad();
  Tensor<T> out = f();
  if (out.numel() != 1) throw Error("grad_check: f must return a scalar");
  out.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) {
    if (!p->tensor.requires_grad()) {
      analytic.emplace_back();
      continue;
    }
    auto g = p->tensor.grad();
    if (g.empty())
      analytic.emplace_back(p->tensor.numel(), T(0));
    else
      analytic.emplace_back(g.begin(), g.end());
  }
  for (auto* p : params) p->tensor.zero_grad();

  Rng rng(opt.seed);
  const double eps = opt.eps;
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param<T>* p = params[pi];
    if (!p->tensor.requires_grad()) continue;
    const idx n = p->tensor.numel();
    std::vector<idx> coords;
    if (opt.max_coords_per_param > 0 && n > opt.max_coords_per_param) {
      for (int k = 0; k < opt.max_coords_per_param; ++k)
        coords.push_back(rng.uniform_int(static_cast<int>(n)));
    } else {
      coords.resize(static_cast<size_t>(n));
      for (idx i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    auto data = p->tensor.data();
    for (idx c : coords) {
      const T saved = data[c];
      data[c] = static_cast<T>(saved + eps);
      const double f_plus = static_cast<double>(f().item());
      data[c] = static_cast<T>(saved - eps);
      const double f_minus = static_cast<double>(f().item());
      data[c] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[pi][static_cast<size_t>(c)]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

#define FTN_INSTANTIATE_NN(T)                                        \
  template class Conv2d<T>;                                          \
  template class BatchNorm2d<T>;                                     \
  template class Linear<T>;                                          \
  template void adam_step<T>(const std::vector<Param<T>*>&,          \
                             const AdamConfig&);                     \
  template double grad_check<T>(const std::function<Tensor<T>()>&,   \
                                const std::vector<Param<T>*>&,       \
                                const GradCheckOptions&);            \
  template Tensor<T> he_normal<T>(std::vector<idx>, idx, Rng&);

FTN_INSTANTIATE_NN(float)
FTN_INSTANTIATE_NN(double)

}  // namespace ftn
