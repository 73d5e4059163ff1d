#include "tseg/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "tseg/error.hpp"

namespace tseg {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Column buffer [Cin*k*k, H*W] for a zero-padded, stride-1 window.
template <typename T>
void im2col(const T* in, int channels, int height, int width, int k, int pad, T* col) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          T* dst = row + static_cast<std::size_t>(y) * width;
          if (sy < 0 || sy >= height) {
            std::fill(dst, dst + width, T{0});
            continue;
          }
          const T* src = in + (static_cast<std::size_t>(c) * height + sy) * width;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - pad;
            dst[x] = (sx >= 0 && sx < width) ? src[sx] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col; accumulates in a fixed (channel, ky, kx, y, x) order.
template <typename T>
void col2im_add(const T* col, int channels, int height, int width, int k, int pad, T* out) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          const T* src = row + static_cast<std::size_t>(y) * width;
          T* dst = out + (static_cast<std::size_t>(c) * height + sy) * width;
          const int x0 = std::max(0, pad - kx);
          const int x1 = std::min(width, width + pad - kx);
          for (int x = x0; x < x1; ++x) dst[x + kx - pad] += src[x];
        }
      }
    }
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                      shape_string(t.shape()));
  }
}

}  // namespace

template <typename T>
VarT<T> make_leaf(BasicTensor<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->op = "leaf";
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
VarT<T> make_node(std::string op, BasicTensor<T> value, std::vector<VarT<T>> parents,
                  std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->value = std::move(value);
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const VarT<T>& p) { return p->requires_grad; });
  node->parents = std::move(parents);
  node->backward_fn = std::move(backward_fn);
  return node;
}

template <typename T>
VarT<T> conv2d(const VarT<T>& input, const VarT<T>& kernel, const VarT<T>& bias, int padding) {
  const auto& x = input->value;
  const auto& w = kernel->value;
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d kernel");
  require_rank(bias->value, 1, "conv2d bias");
  const int cin = x.dim(0), height = x.dim(1), width = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) {
    throw ConfigError("conv2d kernel " + shape_string(w.shape()) + " does not fit input " +
                      shape_string(x.shape()));
  }
  if (k % 2 == 0) throw ConfigError("conv2d kernel size must be odd, got " + std::to_string(k));
  if (padding != (k - 1) / 2) {
    throw ConfigError("conv2d padding must be (k-1)/2 = " + std::to_string((k - 1) / 2));
  }
  if (bias->value.dim(0) != cout) {
    throw ConfigError("conv2d bias " + shape_string(bias->value.shape()) + " does not match " +
                      std::to_string(cout) + " output channels");
  }

  const int patch = cin * k * k;
  const int plane = height * width;
  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(patch) * plane);
  im2col(x.data().data(), cin, height, width, k, padding, col->data());

  BasicTensor<T> out(Shape{cout, height, width});
  {
    Eigen::Map<const RowMat<T>> wm(w.data().data(), cout, patch);
    Eigen::Map<const RowMat<T>> cm(col->data(), patch, plane);
    Eigen::Map<RowMat<T>> om(out.data().data(), cout, plane);
    om.noalias() = wm * cm;
    const auto b = bias->value.data();
    for (int c = 0; c < cout; ++c) {
      T* row = out.data().data() + static_cast<std::size_t>(c) * plane;
      for (int i = 0; i < plane; ++i) row[i] += b[c];
    }
  }

  return make_node<T>(
      "conv2d", std::move(out), {input, kernel, bias},
      [col, cin, cout, height, width, k, padding, patch, plane](Node<T>& self) {
        auto& in_node = *self.parents[0];
        auto& k_node = *self.parents[1];
        auto& b_node = *self.parents[2];
        Eigen::Map<const RowMat<T>> dy(self.grad.data().data(), cout, plane);
        if (k_node.requires_grad) {
          Eigen::Map<const RowMat<T>> cm(col->data(), patch, plane);
          Eigen::Map<RowMat<T>> dw(k_node.grad_buffer().data().data(), cout, patch);
          dw.noalias() += dy * cm.transpose();
        }
        if (b_node.requires_grad) {
          auto db = b_node.grad_buffer().data();
          const T* g = self.grad.data().data();
          for (int c = 0; c < cout; ++c) {
            T acc{0};
            for (int i = 0; i < plane; ++i) acc += g[static_cast<std::size_t>(c) * plane + i];
            db[c] += acc;
          }
        }
        if (in_node.requires_grad) {
          Eigen::Map<const RowMat<T>> wm(k_node.value.data().data(), cout, patch);
          RowMat<T> dcol(patch, plane);
          dcol.noalias() = wm.transpose() * dy;
          col2im_add(dcol.data(), cin, height, width, k, padding,
                     in_node.grad_buffer().data().data());
        }
      });
}

template <typename T>
VarT<T> relu(const VarT<T>& input) {
  BasicTensor<T> out = input->value;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return make_node<T>("relu", std::move(out), {input}, [](Node<T>& self) {
    auto& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto dx = in.grad_buffer().data();
    const auto x = in.value.data();
    const auto dy = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (x[i] > T{0}) dx[i] += dy[i];
    }
  });
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits) {
  require_rank(logits, 3, "softmax_channels");
  const int m = logits.dim(0);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  BasicTensor<T> out(logits.shape());
  const auto z = logits.data();
  auto p = out.data();
  for (std::size_t i = 0; i < plane; ++i) {
    T mx = z[i];
    for (int c = 1; c < m; ++c) mx = std::max(mx, z[c * plane + i]);
    T total{0};
    for (int c = 0; c < m; ++c) {
      const T e = std::exp(z[c * plane + i] - mx);
      p[c * plane + i] = e;
      total += e;
    }
    for (int c = 0; c < m; ++c) p[c * plane + i] /= total;
  }
  return out;
}

template <typename T>
VarT<T> softmax_channels(const VarT<T>& logits) {
  BasicTensor<T> out = softmax_channels(logits->value);
  return make_node<T>("softmax_channels", std::move(out), {logits}, [](Node<T>& self) {
    auto& in = *self.parents[0];
    if (!in.requires_grad) return;
    const int m = self.value.dim(0);
    const std::size_t plane = static_cast<std::size_t>(self.value.dim(1)) * self.value.dim(2);
    const auto p = self.value.data();
    const auto dy = self.grad.data();
    auto dx = in.grad_buffer().data();
    for (std::size_t i = 0; i < plane; ++i) {
      T dot{0};
      for (int c = 0; c < m; ++c) dot += p[c * plane + i] * dy[c * plane + i];
      for (int c = 0; c < m; ++c) dx[c * plane + i] += p[c * plane + i] * (dy[c * plane + i] - dot);
    }
  });
}

template <typename T>
VarT<T> pixel_cross_entropy(const VarT<T>& logits, const LabelMap& labels) {
  const auto& z = logits->value;
  require_rank(z, 3, "pixel_cross_entropy");
  const int m = z.dim(0), height = z.dim(1), width = z.dim(2);
  if (labels.height() != height || labels.width() != width) {
    throw InputError("label map " + std::to_string(labels.height()) + "x" +
                     std::to_string(labels.width()) + " does not match logits " +
                     shape_string(z.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < plane; ++i) {
    if (labels[i] >= m) {
      throw InputError("label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                       " is outside 0.." + std::to_string(m - 1));
    }
  }

  auto probs = std::make_shared<BasicTensor<T>>(softmax_channels(z));
  BasicTensor<T> out(Shape{height, width});
  const auto zd = z.data();
  for (std::size_t i = 0; i < plane; ++i) {
    T mx = zd[i];
    for (int c = 1; c < m; ++c) mx = std::max(mx, zd[c * plane + i]);
    T total{0};
    for (int c = 0; c < m; ++c) total += std::exp(zd[c * plane + i] - mx);
    out[i] = std::log(total) + mx - zd[labels[i] * plane + i];
  }

  return make_node<T>("pixel_cross_entropy", std::move(out), {logits},
                      [probs, labels, m, plane](Node<T>& self) {
                        auto& in = *self.parents[0];
                        if (!in.requires_grad) return;
                        auto dx = in.grad_buffer().data();
                        const auto p = probs->data();
                        const auto dy = self.grad.data();
                        for (int c = 0; c < m; ++c) {
                          for (std::size_t i = 0; i < plane; ++i) {
                            const T target = labels[i] == c ? T{1} : T{0};
                            dx[c * plane + i] += dy[i] * (p[c * plane + i] - target);
                          }
                        }
                      });
}

template <typename T>
VarT<T> weighted_sum(const VarT<T>& input, const BasicTensor<T>& weights) {
  if (weights.shape() != input->value.shape()) {
    throw ConfigError("weighted_sum weights " + shape_string(weights.shape()) +
                      " do not match input " + shape_string(input->value.shape()));
  }
  double acc = 0.0;
  const auto x = input->value.data();
  const auto w = weights.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(w[i]) * x[i];
  return make_node<T>("weighted_sum", BasicTensor<T>::scalar(static_cast<T>(acc)), {input},
                      [weights](Node<T>& self) {
                        auto& in = *self.parents[0];
                        if (!in.requires_grad) return;
                        const T up = self.grad[0];
                        auto dx = in.grad_buffer().data();
                        const auto wd = weights.data();
                        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += up * wd[i];
                      });
}

template <typename T>
VarT<T> affine(const VarT<T>& input, double shift, double scale) {
  const T s = static_cast<T>(shift);
  const T k = static_cast<T>(scale);
  BasicTensor<T> out = input->value;
  for (auto& v : out.data()) v = (v - s) * k;
  return make_node<T>("affine", std::move(out), {input}, [k](Node<T>& self) {
    auto& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto dx = in.grad_buffer().data();
    const auto dy = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * k;
  });
}

template <typename T>
VarT<T> sum(const VarT<T>& input) {
  double acc = 0.0;
  for (T v : input->value.data()) acc += v;
  return make_node<T>("sum", BasicTensor<T>::scalar(static_cast<T>(acc)), {input},
                      [](Node<T>& self) {
                        auto& in = *self.parents[0];
                        if (!in.requires_grad) return;
                        const T up = self.grad[0];
                        for (auto& g : in.grad_buffer().data()) g += up;
                      });
}

template <typename T>
VarT<T> mean(const VarT<T>& input) {
  double acc = 0.0;
  for (T v : input->value.data()) acc += v;
  const double n = static_cast<double>(input->value.size());
  return make_node<T>("mean", BasicTensor<T>::scalar(static_cast<T>(acc / n)), {input},
                      [n](Node<T>& self) {
                        auto& in = *self.parents[0];
                        if (!in.requires_grad) return;
                        const T up = static_cast<T>(self.grad[0] / n);
                        for (auto& g : in.grad_buffer().data()) g += up;
                      });
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
  if (a->value.shape() != b->value.shape()) {
    throw ConfigError("mul shapes differ: " + shape_string(a->value.shape()) + " vs " +
                      shape_string(b->value.shape()));
  }
  BasicTensor<T> out = a->value;
  const auto bv = b->value.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bv[i];
  return make_node<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    const auto dy = self.grad.data();
    if (lhs.requires_grad) {
      auto g = lhs.grad_buffer().data();
      const auto r = rhs.value.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * r[i];
    }
    if (rhs.requires_grad) {
      auto g = rhs.grad_buffer().data();
      const auto l = lhs.value.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * l[i];
    }
  });
}

template <typename T>
std::vector<Node<T>*> topological_order(const VarT<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS: (node, next parent index).
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(const VarT<T>& root) {
  if (root->value.size() != 1) {
    throw ContractError("backward requires a scalar root, got " +
                        shape_string(root->value.shape()));
  }
  const auto order = topological_order(root);
  for (Node<T>* node : order) node->grad_buffer();
  root->grad.fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->requires_grad && node->backward_fn) node->backward_fn(*node);
  }
}

template <typename T>
void zero_grad(const VarT<T>& root) {
  for (Node<T>* node : topological_order(root)) node->grad_buffer().fill(T{0});
}

#define TSEG_INSTANTIATE_AUTOGRAD(T)                                                  \
  template VarT<T> make_leaf(BasicTensor<T>, bool);                                   \
  template VarT<T> make_node(std::string, BasicTensor<T>, std::vector<VarT<T>>,       \
                             std::function<void(Node<T>&)>);                          \
  template VarT<T> conv2d(const VarT<T>&, const VarT<T>&, const VarT<T>&, int);       \
  template VarT<T> relu(const VarT<T>&);                                              \
  template VarT<T> softmax_channels(const VarT<T>&);                                  \
  template VarT<T> pixel_cross_entropy(const VarT<T>&, const LabelMap&);              \
  template VarT<T> weighted_sum(const VarT<T>&, const BasicTensor<T>&);               \
  template VarT<T> affine(const VarT<T>&, double, double);                            \
  template VarT<T> sum(const VarT<T>&);                                               \
  template VarT<T> mean(const VarT<T>&);                                              \
  template VarT<T> mul(const VarT<T>&, const VarT<T>&);                               \
  template void backward(const VarT<T>&);                                             \
  template void zero_grad(const VarT<T>&);                                            \
  template std::vector<Node<T>*> topological_order(const VarT<T>&);                   \
  template BasicTensor<T> softmax_channels(const BasicTensor<T>&);

TSEG_INSTANTIATE_AUTOGRAD(float)
TSEG_INSTANTIATE_AUTOGRAD(double)

}  // namespace tseg
