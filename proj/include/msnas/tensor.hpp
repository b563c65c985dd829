#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msnas/errors.hpp"

namespace msnas {

#ifdef MSNAS_REAL32
using real = float;
#else
using real = double;
#endif

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<real> val;
  std::vector<real> grad;  // allocated on demand, same length as val
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // accumulates into parents' grad

  long long size() const { return static_cast<long long>(val.size()); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), real{0});
  }
};

}  // namespace detail

// Dense multi-dimensional array participating in reverse-mode
// differentiation. Copies share the underlying node; graphs are values and
// are rebuilt each forward pass. Activation layout throughout the project
// is [B, T, Y, X, C] with C contiguous.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, real value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  long long size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<real>& values() const { return node_->val; }
  std::vector<real>& values_mut() { return node_->val; }
  const std::vector<real>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->val.size(), real{0});
  }

  // Reverse-mode sweep from a scalar output.
  void backward() const;

  detail::TensorNode* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode> shared_node() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

long long numel(const std::vector<int>& shape);

// --- elementwise & aggregation ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// sum_i sigmoid(logits[i]) * inputs[i]; logits are scalar tensors and the
// sum is differentiable with respect to both the inputs and the logits.
Tensor gated_weighted_sum(const std::vector<Tensor>& inputs, const std::vector<Tensor>& logits);

Tensor mean_of(const std::vector<Tensor>& inputs);
Tensor concat_channels(const std::vector<Tensor>& inputs);

// --- convolutions ---------------------------------------------------------

// x: [B,T,Y,X,Ci], w: [kh,kw,Ci,Co]; zero same-padding, spatial size maps
// n -> ceil(n/stride).
Tensor conv2d(const Tensor& x, const Tensor& w, int stride);

// x: [B,T,Y,X,Ci], w: [Ci,Co].
Tensor conv1x1(const Tensor& x, const Tensor& w);

// Temporally dilated 1D convolution over the T axis (zero same-padding,
// odd tap count, T preserved). w: [taps,Ci,Co]. Accumulation is
// tap-major, so the result is bitwise equal to the r=1 convolution with
// the zero-inflated filter.
Tensor temporal_conv1d_dilated(const Tensor& x, const Tensor& w, int dilation);

// Same contraction pattern with one filter per channel; w: [taps,C].
Tensor temporal_conv1d_depthwise(const Tensor& x, const Tensor& w, int dilation);

// Inserts dilation-1 zeros between filter taps: |k'| = r*(|k|-1)+1.
std::vector<real> inflate_filter(const std::vector<real>& taps, int dilation);

// --- pooling ---------------------------------------------------------------

Tensor max_pool_spatial(const Tensor& x, int window, int stride);
Tensor avg_pool_spatial(const Tensor& x);           // [B,T,Y,X,C] -> [B,T,C]
Tensor avg_pool(const Tensor& x, const std::vector<int>& axes);  // mean over the listed axes
Tensor pool_time_avg(const Tensor& x);              // [B,T,C] -> [B,C]
Tensor pool_time_max(const Tensor& x);              // [B,T,C] -> [B,C]

// --- normalization / head ---------------------------------------------------

struct BatchNormState {
  std::vector<real> running_mean;
  std::vector<real> running_var;
  bool initialized = false;
};

// Per-batch statistics over all axes but the channel axis when training
// (batch axis must hold >= 8 rows); running averages otherwise.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, double momentum = 0.99,
                  double eps = 1e-5);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);  // [B,Ci]x[Ci,Co]+[Co]
Tensor softmax(const Tensor& x);                                      // rows of [B,K]

// Mean label-smoothed cross entropy over the batch; labels in [0, K).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             double label_smoothing);

// --- verification harness ----------------------------------------------------

// Compares reverse-mode gradients of fn's output (reduced to a scalar by a
// fixed random weighting) against central finite differences over every
// entry of every input marked requires_grad. Returns the max relative error.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  const std::vector<Tensor>& inputs, double perturbation = 1e-5);

}  // namespace msnas
