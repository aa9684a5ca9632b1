// Copyright 2026 The deskvae Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "deskvae/tensor.hpp"

namespace deskvae {

// Reverse-mode differentiation over 4-D tensors. A forward pass records a
// graph of Nodes while gradient mode is on; backward() walks it once in
// reverse topological order and accumulates into every reachable grad buffer.

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string name;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
  const Shape& shape() const { return value.shape(); }
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

inline Var parameter(Tensor value, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return node;
}

/// Wraps a forward result. The backward closure is kept only when some parent
/// needs a gradient and recording is enabled.
template <typename Backward>
Var make_result(Tensor value, std::vector<Var> parents, Backward&& backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs && grad_enabled()) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::forward<Backward>(backward);
  }
  return node;
}

/// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
inline void backward(const Var& root) {
  if (root->value.size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

// ----------------------------------------------------------------------------
// Elementwise and structural ops.

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a->shape(), b->shape(), "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var leaky_relu(const Var& a, double slope) {
  Tensor out = a->value;
  for (auto& v : out.values()) v = v > 0.0 ? v : slope * v;
  return make_result(std::move(out), {a}, [slope](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (x[i] > 0.0 ? 1.0 : slope) * self.grad[i];
  });
}

/// Replicates a batch-1 tensor n times along the batch axis.
inline Var broadcast_batch(const Var& a, int n) {
  const Shape s = a->shape();
  if (s.n != 1) throw ShapeError("broadcast_batch: source batch must be 1");
  Tensor out(Shape{n, s.c, s.h, s.w});
  const std::size_t per = s.sample_size();
  for (int i = 0; i < n; ++i) std::copy_n(a->value.data(), per, out.data() + i * per);
  return make_result(std::move(out), {a}, [n, per](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < per; ++j) g[j] += self.grad[i * per + j];
  });
}

inline Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts[0]->shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& ps = p->shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w)
      throw ShapeError("concat_channels: mismatched " + ps.str() + " vs " + s.str());
    channels += ps.c;
  }
  Tensor out(Shape{s.n, channels, s.h, s.w});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    int offset = 0;
    for (const auto& p : parts) {
      const std::size_t count = p->shape().c * plane;
      std::copy_n(p->value.data() + n * count, count, out.data() + (n * channels + offset) * plane);
      offset += p->shape().c;
    }
  }
  return make_result(std::move(out), parts, [channels, plane](Node& self) {
    const int batch = self.shape().n;
    int offset = 0;
    for (auto& p : self.parents) {
      const int pc = p->shape().c;
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (int n = 0; n < batch; ++n) {
          const double* src = self.grad.data() + (n * channels + offset) * plane;
          double* dst = g.data() + n * pc * plane;
          for (std::size_t j = 0; j < pc * plane; ++j) dst[j] += src[j];
        }
      }
      offset += pc;
    }
  });
}

inline Var slice_channels(const Var& a, int start, int count) {
  const Shape s = a->shape();
  if (start < 0 || count <= 0 || start + count > s.c)
    throw ShapeError("slice_channels: range out of bounds for " + s.str());
  Tensor out(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    std::copy_n(a->value.data() + (n * s.c + start) * plane, count * plane,
                out.data() + n * count * plane);
  return make_result(std::move(out), {a}, [start, count, plane](Node& self) {
    Node& parent = *self.parents[0];
    const int c = parent.shape().c;
    Tensor& g = parent.grad_buffer();
    for (int n = 0; n < self.shape().n; ++n) {
      const double* src = self.grad.data() + n * count * plane;
      double* dst = g.data() + (n * c + start) * plane;
      for (std::size_t j = 0; j < count * plane; ++j) dst[j] += src[j];
    }
  });
}

inline Var avg_pool(const Var& a, int factor) {
  const Shape s = a->shape();
  if (factor < 1 || s.h % factor || s.w % factor)
    throw ShapeError("avg_pool: factor does not divide " + s.str());
  if (factor == 1) return a;
  const Shape os{s.n, s.c, s.h / factor, s.w / factor};
  Tensor out(os);
  const double inv = 1.0 / (factor * factor);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          out.at(n, c, y / factor, x / factor) += inv * a->value.at(n, c, y, x);
  return make_result(std::move(out), {a}, [factor, inv](Node& self) {
    Node& parent = *self.parents[0];
    const Shape ps = parent.shape();
    Tensor& g = parent.grad_buffer();
    for (int n = 0; n < ps.n; ++n)
      for (int c = 0; c < ps.c; ++c)
        for (int y = 0; y < ps.h; ++y)
          for (int x = 0; x < ps.w; ++x)
            g.at(n, c, y, x) += inv * self.grad.at(n, c, y / factor, x / factor);
  });
}

inline Var upsample_nearest(const Var& a, int factor) {
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  if (factor == 1) return a;
  const Shape s = a->shape();
  Tensor out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h * factor; ++y)
        for (int x = 0; x < s.w * factor; ++x)
          out.at(n, c, y, x) = a->value.at(n, c, y / factor, x / factor);
  return make_result(std::move(out), {a}, [factor](Node& self) {
    Node& parent = *self.parents[0];
    Tensor& g = parent.grad_buffer();
    const Shape os = self.shape();
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int y = 0; y < os.h; ++y)
          for (int x = 0; x < os.w; ++x)
            g.at(n, c, y / factor, x / factor) += self.grad.at(n, c, y, x);
  });
}

/// Elementwise choice: keep ? a : b, with keep broadcast over the batch axis.
/// Used to substitute prior parameters into pruned posterior dimensions.
inline Var select(const Tensor& keep, const Var& a, const Var& b) {
  require_same_shape(a->shape(), b->shape(), "select");
  const Shape s = a->shape();
  if (keep.shape().n != 1 || keep.shape().sample_size() != s.sample_size())
    throw ShapeError("select: mask " + keep.shape().str() + " not aligned with " + s.str());
  const std::size_t per = s.sample_size();
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = keep[i % per] > 0.5 ? a->value[i] : b->value[i];
  return make_result(std::move(out), {a, b}, [keep, per](Node& self) {
    for (int which = 0; which < 2; ++which) {
      auto& p = self.parents[which];
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool kept = keep[i % per] > 0.5;
        if (kept == (which == 0)) g[i] += self.grad[i];
      }
    }
  });
}

inline Var sum_all(const Var& a) {
  double total = 0.0;
  for (double v : a->value.values()) total += v;
  return make_result(Tensor(Shape{}, total), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const double up = self.grad[0];
    for (auto& v : g.values()) v += up;
  });
}

// ----------------------------------------------------------------------------
// Convolution (stride 1, "same" padding, square odd kernels).

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline void im2col(const double* img, int channels, int h, int w, int k, double* cols) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            row[y * w + x] =
                (sy >= 0 && sy < h && sx >= 0 && sx < w) ? img[(c * h + sy) * w + sx] : 0.0;
          }
        }
      }
}

inline void col2im_add(const double* cols, int channels, int h, int w, int k, double* img) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < w) img[(c * h + sy) * w + sx] += row[y * w + x];
          }
        }
      }
}

}  // namespace detail

/// weight: [out, in, k, k]; bias: [1, out, 1, 1].
inline Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x->shape();
  const Shape ws = weight->shape();
  if (ws.c != xs.c || ws.h != ws.w || ws.h % 2 == 0)
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  if (bias->shape().c != ws.n) throw ShapeError("conv2d: bias size mismatch");
  const int k = ws.h;
  const int in_c = xs.c, out_c = ws.n, hw = xs.h * xs.w;
  const int rows = in_c * k * k;
  Tensor out(Shape{xs.n, out_c, xs.h, xs.w});
  detail::ConstMap wmat(weight->value.data(), out_c, rows);
  Eigen::Map<const Eigen::VectorXd> bvec(bias->value.data(), out_c);
  std::vector<double> cols(k == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
  for (int n = 0; n < xs.n; ++n) {
    const double* src = x->value.data() + static_cast<std::size_t>(n) * in_c * hw;
    if (k != 1) detail::im2col(src, in_c, xs.h, xs.w, k, cols.data());
    detail::ConstMap cmat(k == 1 ? src : cols.data(), rows, hw);
    detail::MutMap omat(out.data() + static_cast<std::size_t>(n) * out_c * hw, out_c, hw);
    omat.noalias() = wmat * cmat;
    omat.colwise() += bvec;
  }
  return make_result(std::move(out), {x, weight, bias}, [k, in_c, out_c, hw, rows](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    const Shape xs = xn.shape();
    detail::ConstMap wmat(wn.value.data(), out_c, rows);
    std::vector<double> cols(k == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
    std::vector<double> dcols(static_cast<std::size_t>(rows) * hw);
    for (int n = 0; n < xs.n; ++n) {
      detail::ConstMap gmat(self.grad.data() + static_cast<std::size_t>(n) * out_c * hw, out_c, hw);
      const double* src = xn.value.data() + static_cast<std::size_t>(n) * in_c * hw;
      if (wn.requires_grad) {
        if (k != 1) detail::im2col(src, in_c, xs.h, xs.w, k, cols.data());
        detail::ConstMap cmat(k == 1 ? src : cols.data(), rows, hw);
        detail::MutMap gw(wn.grad_buffer().data(), out_c, rows);
        gw.noalias() += gmat * cmat.transpose();
      }
      if (bn.requires_grad) {
        Eigen::Map<Eigen::VectorXd> gb(bn.grad_buffer().data(), out_c);
        gb += gmat.rowwise().sum();
      }
      if (xn.requires_grad) {
        double* dst = xn.grad_buffer().data() + static_cast<std::size_t>(n) * in_c * hw;
        if (k == 1) {
          detail::MutMap gx(dst, rows, hw);
          gx.noalias() += wmat.transpose() * gmat;
        } else {
          detail::MutMap dc(dcols.data(), rows, hw);
          dc.noalias() = wmat.transpose() * gmat;
          detail::col2im_add(dcols.data(), in_c, xs.h, xs.w, k, dst);
        }
      }
    }
  });
}

}  // namespace deskvae
