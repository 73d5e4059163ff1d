#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

// One vertex of a reverse-mode graph. Values are computed eagerly when the
// node is created; backward_fn reads this node's grad and adds into the
// grads of its parents.
template <typename T>
struct Node {
  std::string op;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Gradient accumulator, allocated (zero-filled) on first use.
  BasicTensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = BasicTensor<T>::zeros_like(value);
    return grad;
  }
};

template <typename T>
using VarT = std::shared_ptr<Node<T>>;
using Var = VarT<float>;
using VarD = VarT<double>;

template <typename T>
VarT<T> make_leaf(BasicTensor<T> value, bool requires_grad = false);

// Builds an interior node. requires_grad is inherited from the parents.
// Exposed so that tests and callers can define custom differentiable ops.
template <typename T>
VarT<T> make_node(std::string op, BasicTensor<T> value, std::vector<VarT<T>> parents,
                  std::function<void(Node<T>&)> backward_fn);

// Stride-1 cross-correlation. input [Cin,H,W], kernel [Cout,Cin,k,k],
// bias [Cout]; k must be odd and padding must equal (k-1)/2.
template <typename T>
VarT<T> conv2d(const VarT<T>& input, const VarT<T>& kernel, const VarT<T>& bias, int padding);

// Elementwise max(0, x). The subgradient at 0 is 0.
template <typename T>
VarT<T> relu(const VarT<T>& input);

// Softmax over the channel axis of [M,H,W], max-subtracted.
template <typename T>
VarT<T> softmax_channels(const VarT<T>& logits);

// Unreduced per-pixel cross-entropy, [M,H,W] logits -> [H,W] losses.
// Throws InputError on labels outside 0..M-1.
template <typename T>
VarT<T> pixel_cross_entropy(const VarT<T>& logits, const LabelMap& labels);

// sum_i weights[i] * x[i] as a [1] tensor. weights is a constant.
template <typename T>
VarT<T> weighted_sum(const VarT<T>& input, const BasicTensor<T>& weights);

// Elementwise (x - shift) * scale with constant scalars.
template <typename T>
VarT<T> affine(const VarT<T>& input, double shift, double scale);

template <typename T>
VarT<T> sum(const VarT<T>& input);

template <typename T>
VarT<T> mean(const VarT<T>& input);

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b);

// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
// Accumulators add, so call zero_grad before reusing a graph.
// Throws ContractError if root is not scalar.
template <typename T>
void backward(const VarT<T>& root);

template <typename T>
void zero_grad(const VarT<T>& root);

// Reachable nodes in topological order (parents before children).
template <typename T>
std::vector<Node<T>*> topological_order(const VarT<T>& root);

// Forward-only helpers used outside of graphs.
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits);

#define TSEG_EXTERN_AUTOGRAD(T)                                                              \
  extern template VarT<T> make_leaf(BasicTensor<T>, bool);                                   \
  extern template VarT<T> make_node(std::string, BasicTensor<T>, std::vector<VarT<T>>,       \
                                    std::function<void(Node<T>&)>);                          \
  extern template VarT<T> conv2d(const VarT<T>&, const VarT<T>&, const VarT<T>&, int);       \
  extern template VarT<T> relu(const VarT<T>&);                                              \
  extern template VarT<T> softmax_channels(const VarT<T>&);                                  \
  extern template VarT<T> pixel_cross_entropy(const VarT<T>&, const LabelMap&);              \
  extern template VarT<T> weighted_sum(const VarT<T>&, const BasicTensor<T>&);               \
  extern template VarT<T> affine(const VarT<T>&, double, double);                            \
  extern template VarT<T> sum(const VarT<T>&);                                               \
  extern template VarT<T> mean(const VarT<T>&);                                              \
  extern template VarT<T> mul(const VarT<T>&, const VarT<T>&);                               \
  extern template void backward(const VarT<T>&);                                             \
  extern template void zero_grad(const VarT<T>&);                                            \
  extern template std::vector<Node<T>*> topological_order(const VarT<T>&);                   \
  extern template BasicTensor<T> softmax_channels(const BasicTensor<T>&);

TSEG_EXTERN_AUTOGRAD(float)
TSEG_EXTERN_AUTOGRAD(double)
#undef TSEG_EXTERN_AUTOGRAD

// Compares the analytic input gradient of a scalar function with central
// differences. f is called with a VarD and must return a scalar VarD; it
// is evaluated in double precision for both routes. Returns
//   max_i |analytic_i - numeric_i| / max(1e-8, |analytic_i| + |numeric_i|).
// Callers are responsible for keeping x away from non-differentiable kinks.
template <typename F>
double grad_check(F&& f, const TensorD& x, double h) {
  auto leaf = make_leaf(x, true);
  VarD root = f(leaf);
  backward(root);
  const TensorD analytic = leaf->grad_buffer();

  double worst = 0.0;
  TensorD probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = f(make_leaf(probe, false))->value.item();
    probe[i] = original - h;
    const double down = f(make_leaf(probe, false))->value.item();
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace tseg
