#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftn {

using idx = std::int64_t;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Debug-mode NaN/Inf screening after every op. Off by default in release
// builds; tests switch it on.
void set_debug_checks(bool on);
bool debug_checks();

std::string shape_str(const std::vector<idx>& shape);

template <typename T>
struct TensorNode {
  std::vector<idx> shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(TensorNode<T>&)> backward_fn;

  idx numel() const { return static_cast<idx>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

// Dense N-dimensional array with optional gradient tracking. Row-major.
// The scalar type is chosen at construction through the template argument;
// the project instantiates float and double.
template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<idx> shape);
  static Tensor full(std::vector<idx> shape, T v);
  static Tensor from_data(std::vector<idx> shape, std::vector<T> data);
  static Tensor scalar(T v) { return full({1}, v); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<idx>& shape() const { return node_->shape; }
  idx dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  idx numel() const { return node_->numel(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode sweep from a scalar output.
  void backward() const;

  // Copy of the values with no graph attached.
  Tensor detach() const;

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {
template <typename T>
Tensor<T> make_op_node(std::vector<idx> shape, std::vector<T> value,
                       std::vector<std::shared_ptr<TensorNode<T>>> parents,
                       std::function<void(TensorNode<T>&)> backward,
                       const char* op_name);
void check_finite_or_throw(const void* data, idx n, bool is_double,
                           const char* where);
}  // namespace detail

// --- element-wise and shape ops ---------------------------------------------
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);
// y = s * x where s is a trainable scalar tensor (numel 1).
template <typename T>
Tensor<T> scale_by(const Tensor<T>& s, const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<idx> shape);
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// --- linear algebra ----------------------------------------------------------
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// 3-D batched matmul with optional transposition of the two stored operands.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta = false,
              bool tb = false);
// y[b,o] = sum_i x[b,i] * w[o,i] + bias[o]; w stored out x in.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// --- conv / norm / pooling ----------------------------------------------------
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad);
// Training mode normalises with batch statistics and updates the running
// buffers in place (momentum 0.1, unbiased variance in the running update);
// eval mode uses the running buffers.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, T eps = T(1e-5),
                       T momentum = T(0.1));
template <typename T>
Tensor<T> channel_max_pool(const Tensor<T>& x, int n);
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);

}  // namespace ftn
