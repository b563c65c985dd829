#include "msnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "msnas/rng.hpp"

namespace msnas {

#if defined(__GNUC__) || defined(__clang__)
#define MSNAS_RESTRICT __restrict__
#else
#define MSNAS_RESTRICT
#endif

using detail::TensorNode;

namespace {

void check_finite(const char* op, const TensorNode& n) {
  for (const real v : n.val)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string("non-finite value produced by ") + op);
}

std::shared_ptr<TensorNode> make_node(std::vector<int> shape, const char* op) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->val.assign(static_cast<size_t>(numel(n->shape)), real{0});
  n->op = op;
  return n;
}

bool any_grad(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

// Registers parents/backprop only when a gradient can actually flow, so
// data-only subgraphs are not retained.
void attach(const std::shared_ptr<TensorNode>& out, std::vector<Tensor> parents,
            std::function<void(TensorNode&)> backprop) {
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad |= p.requires_grad();
  if (!needs_grad) return;
  out->requires_grad = true;
  out->parents.reserve(parents.size());
  for (auto& p : parents) out->parents.push_back(p.shared_node());
  out->backprop = std::move(backprop);
}

struct SamePad {
  int out;
  int begin;
};

SamePad same_pad(int n, int k, int stride) {
  const int out = (n + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + k - n, 0);
  return {out, total / 2};
}

}  // namespace

long long numel(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf");
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, real value, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf");
  std::fill(n->val.begin(), n->val.end(), value);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> data, bool requires_grad) {
  if (numel(shape) != static_cast<long long>(data.size()))
    throw ShapeError("data length does not match shape");
  auto n = make_node(std::move(shape), "leaf");
  n->val = std::move(data);
  n->requires_grad = requires_grad;
  check_finite("leaf", *n);
  return wrap(std::move(n));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

void Tensor::backward() const {
  if (!defined() || size() != 1) throw Error("backward() requires a defined scalar tensor");
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      TensorNode* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  auto out = make_node(a.shape(), "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->val[i] = av[i] + bv[i];
  check_finite("add", *out);
  TensorNode* an = a.node();
  TensorNode* bn = b.node();
  attach(out, {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  });
  return Tensor::wrap(out);
}

Tensor scale(const Tensor& x, real s) {
  auto out = make_node(x.shape(), "scale");
  const auto& xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i) out->val[i] = xv[i] * s;
  check_finite("scale", *out);
  TensorNode* xn = x.node();
  attach(out, {x}, [xn, s](TensorNode& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * s;
  });
  return Tensor::wrap(out);
}

Tensor relu(const Tensor& x) {
  auto out = make_node(x.shape(), "relu");
  const auto& xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i) out->val[i] = xv[i] > real{0} ? xv[i] : real{0};
  check_finite("relu", *out);
  TensorNode* xn = x.node();
  attach(out, {x}, [xn](TensorNode& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (xn->val[i] > real{0}) xn->grad[i] += self.grad[i];
  });
  return Tensor::wrap(out);
}

Tensor sigmoid(const Tensor& x) {
  auto out = make_node(x.shape(), "sigmoid");
  const auto& xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i)
    out->val[i] = real{1} / (real{1} + std::exp(-xv[i]));
  check_finite("sigmoid", *out);
  TensorNode* xn = x.node();
  TensorNode* on = out.get();
  attach(out, {x}, [xn, on](TensorNode& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const real y = on->val[i];
      xn->grad[i] += self.grad[i] * y * (real{1} - y);
    }
  });
  return Tensor::wrap(out);
}

Tensor gated_weighted_sum(const std::vector<Tensor>& inputs, const std::vector<Tensor>& logits) {
  if (inputs.empty()) throw ShapeError("gated_weighted_sum: empty input list");
  if (inputs.size() != logits.size())
    throw ShapeError("gated_weighted_sum: inputs and logits differ in count");
  for (const auto& t : inputs)
    if (t.shape() != inputs[0].shape()) throw ShapeError("gated_weighted_sum: shape mismatch");
  for (const auto& w : logits)
    if (w.size() != 1) throw ShapeError("gated_weighted_sum: logits must be scalars");

  auto out = make_node(inputs[0].shape(), "gated_weighted_sum");
  const size_t k = inputs.size();
  std::vector<real> gates(k);
  for (size_t i = 0; i < k; ++i)
    gates[i] = real{1} / (real{1} + std::exp(-logits[i].values()[0]));
  for (size_t i = 0; i < k; ++i) {
    const auto& xv = inputs[i].values();
    const real g = gates[i];
    for (size_t j = 0; j < xv.size(); ++j) out->val[j] += g * xv[j];
  }
  check_finite("gated_weighted_sum", *out);

  std::vector<Tensor> parents = inputs;
  parents.insert(parents.end(), logits.begin(), logits.end());
  std::vector<TensorNode*> xs(k), ws(k);
  for (size_t i = 0; i < k; ++i) {
    xs[i] = inputs[i].node();
    ws[i] = logits[i].node();
  }
  attach(out, parents, [xs, ws, gates](TensorNode& self) {
    for (size_t i = 0; i < xs.size(); ++i) {
      const real g = gates[i];
      if (xs[i]->requires_grad) {
        xs[i]->ensure_grad();
        auto& gx = xs[i]->grad;
        for (size_t j = 0; j < self.grad.size(); ++j) gx[j] += g * self.grad[j];
      }
      if (ws[i]->requires_grad) {
        real dot = 0;
        const auto& xv = xs[i]->val;
        for (size_t j = 0; j < self.grad.size(); ++j) dot += self.grad[j] * xv[j];
        ws[i]->ensure_grad();
        ws[i]->grad[0] += dot * g * (real{1} - g);
      }
    }
  });
  return Tensor::wrap(out);
}

Tensor mean_of(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ShapeError("mean_of: empty input list");
  Tensor acc = inputs[0];
  for (size_t i = 1; i < inputs.size(); ++i) acc = add(acc, inputs[i]);
  return scale(acc, real{1} / static_cast<real>(inputs.size()));
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: empty input list");
  const auto& base = inputs[0].shape();
  int total_c = 0;
  for (const auto& t : inputs) {
    if (t.rank() != static_cast<int>(base.size())) throw ShapeError("concat_channels: rank mismatch");
    for (size_t i = 0; i + 1 < base.size(); ++i)
      if (t.shape()[i] != base[i]) throw ShapeError("concat_channels: leading dims differ");
    total_c += t.shape().back();
  }
  std::vector<int> shape = base;
  shape.back() = total_c;
  auto out = make_node(shape, "concat_channels");
  const long long rows = numel(base) / base.back();
  std::vector<int> widths, offsets;
  int off = 0;
  for (const auto& t : inputs) {
    widths.push_back(t.shape().back());
    offsets.push_back(off);
    off += widths.back();
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto& xv = inputs[i].values();
    const int w = widths[i];
    for (long long r = 0; r < rows; ++r)
      std::memcpy(&out->val[static_cast<size_t>(r * total_c + offsets[i])],
                  &xv[static_cast<size_t>(r * w)], sizeof(real) * static_cast<size_t>(w));
  }
  std::vector<TensorNode*> xs;
  for (const auto& t : inputs) xs.push_back(t.node());
  attach(out, inputs, [xs, widths, offsets, rows, total_c](TensorNode& self) {
    for (size_t i = 0; i < xs.size(); ++i) {
      if (!xs[i]->requires_grad) continue;
      xs[i]->ensure_grad();
      const int w = widths[i];
      for (long long r = 0; r < rows; ++r)
        for (int c = 0; c < w; ++c)
          xs[i]->grad[static_cast<size_t>(r * w + c)] +=
              self.grad[static_cast<size_t>(r * total_c + offsets[i] + c)];
    }
  });
  return Tensor::wrap(out);
}

// --- convolutions -----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, int stride) {
  if (x.rank() != 5 || w.rank() != 4) throw ShapeError("conv2d: expects x[B,T,Y,X,C], w[kh,kw,Ci,Co]");
  if (stride < 1) throw ShapeError("conv2d: non-positive stride");
  const int B = x.dim(0), T = x.dim(1), Y = x.dim(2), X = x.dim(3), Ci = x.dim(4);
  const int KH = w.dim(0), KW = w.dim(1), Co = w.dim(3);
  if (w.dim(2) != Ci) throw ShapeError("conv2d: channel mismatch");
  const auto [OY, pad_y] = same_pad(Y, KH, stride);
  const auto [OX, pad_x] = same_pad(X, KW, stride);

  auto out = make_node({B, T, OY, OX, Co}, "conv2d");
  const real* xv = x.values().data();
  const real* wv = w.values().data();
  real* ov = out->val.data();
  const long long planes = static_cast<long long>(B) * T;
  for (long long p = 0; p < planes; ++p) {
    const real* xp = xv + p * Y * X * Ci;
    real* op = ov + p * OY * OX * Co;
    for (int oy = 0; oy < OY; ++oy)
      for (int ox = 0; ox < OX; ++ox) {
        real* orow = op + (static_cast<long long>(oy) * OX + ox) * Co;
        for (int ky = 0; ky < KH; ++ky) {
          const int iy = oy * stride + ky - pad_y;
          if (iy < 0 || iy >= Y) continue;
          for (int kx = 0; kx < KW; ++kx) {
            const int ix = ox * stride + kx - pad_x;
            if (ix < 0 || ix >= X) continue;
            const real* MSNAS_RESTRICT xrow = xp + (static_cast<long long>(iy) * X + ix) * Ci;
            const real* wrow = wv + (static_cast<long long>(ky) * KW + kx) * Ci * Co;
            int ci = 0;
            for (; ci + 1 < Ci; ci += 2) {
              const real v0 = xrow[ci], v1 = xrow[ci + 1];
              const real* MSNAS_RESTRICT w0 = wrow + static_cast<long long>(ci) * Co;
              const real* MSNAS_RESTRICT w1 = w0 + Co;
              for (int co = 0; co < Co; ++co) orow[co] += v0 * w0[co] + v1 * w1[co];
            }
            for (; ci < Ci; ++ci) {
              const real v = xrow[ci];
              const real* MSNAS_RESTRICT wr = wrow + static_cast<long long>(ci) * Co;
              for (int co = 0; co < Co; ++co) orow[co] += v * wr[co];
            }
          }
        }
      }
  }
  check_finite("conv2d", *out);

  TensorNode* xn = x.node();
  TensorNode* wn = w.node();
  const int py = pad_y, px = pad_x;
  attach(out, {x, w},
         [xn, wn, B, T, Y, X, Ci, KH, KW, Co, OY, OX, stride, py, px](TensorNode& self) {
           const bool dx = xn->requires_grad;
           const bool dw = wn->requires_grad;
           if (dx) xn->ensure_grad();
           if (dw) wn->ensure_grad();
           const real* gv = self.grad.data();
           const real* xv = xn->val.data();
           const real* wv = wn->val.data();
           real* gx = dx ? xn->grad.data() : nullptr;
           real* gw = dw ? wn->grad.data() : nullptr;
           const long long planes = static_cast<long long>(B) * T;
           for (long long p = 0; p < planes; ++p) {
             const real* MSNAS_RESTRICT xp = xv + p * Y * X * Ci;
             const real* MSNAS_RESTRICT gp = gv + p * OY * OX * Co;
             real* MSNAS_RESTRICT gxp = dx ? gx + p * Y * X * Ci : nullptr;
             for (int oy = 0; oy < OY; ++oy)
               for (int ox = 0; ox < OX; ++ox) {
                 const real* MSNAS_RESTRICT grow = gp + (static_cast<long long>(oy) * OX + ox) * Co;
                 for (int ky = 0; ky < KH; ++ky) {
                   const int iy = oy * stride + ky - py;
                   if (iy < 0 || iy >= Y) continue;
                   for (int kx = 0; kx < KW; ++kx) {
                     const int ix = ox * stride + kx - px;
                     if (ix < 0 || ix >= X) continue;
                     const long long xoff = (static_cast<long long>(iy) * X + ix) * Ci;
                     const long long woff = (static_cast<long long>(ky) * KW + kx) * Ci * Co;
                     if (dx) {
                       int ci = 0;
                       for (; ci + 1 < Ci; ci += 2) {
                         const real* MSNAS_RESTRICT w0 = wv + woff + static_cast<long long>(ci) * Co;
                         const real* MSNAS_RESTRICT w1 = w0 + Co;
                         real a0 = 0, a1 = 0;
                         for (int co = 0; co < Co; ++co) {
                           a0 += grow[co] * w0[co];
                           a1 += grow[co] * w1[co];
                         }
                         gxp[xoff + ci] += a0;
                         gxp[xoff + ci + 1] += a1;
                       }
                       for (; ci < Ci; ++ci) {
                         const real* MSNAS_RESTRICT wr = wv + woff + static_cast<long long>(ci) * Co;
                         real acc = 0;
                         for (int co = 0; co < Co; ++co) acc += grow[co] * wr[co];
                         gxp[xoff + ci] += acc;
                       }
                     }
                     if (dw) {
                       for (int ci = 0; ci < Ci; ++ci) {
                         const real v = xp[xoff + ci];
                         real* MSNAS_RESTRICT gwr = gw + woff + static_cast<long long>(ci) * Co;
                         for (int co = 0; co < Co; ++co) gwr[co] += v * grow[co];
                       }
                     }
                   }
                 }
               }
           }
         });
  return Tensor::wrap(out);
}

Tensor conv1x1(const Tensor& x, const Tensor& w) {
  if (x.rank() < 2 || w.rank() != 2) throw ShapeError("conv1x1: expects x[...,Ci], w[Ci,Co]");
  const int Ci = x.shape().back();
  if (w.dim(0) != Ci) throw ShapeError("conv1x1: channel mismatch");
  const int Co = w.dim(1);
  std::vector<int> shape = x.shape();
  shape.back() = Co;
  auto out = make_node(shape, "conv1x1");
  const long long rows = x.size() / Ci;
  const real* xv = x.values().data();
  const real* wv = w.values().data();
  real* ov = out->val.data();
  const int ci4 = Ci - Ci % 4;
  for (long long n = 0; n < rows; ++n) {
    const real* MSNAS_RESTRICT xrow = xv + n * Ci;
    real* MSNAS_RESTRICT orow = ov + n * Co;
    int ci = 0;
    for (; ci < ci4; ci += 4) {
      const real v0 = xrow[ci], v1 = xrow[ci + 1], v2 = xrow[ci + 2], v3 = xrow[ci + 3];
      const real* MSNAS_RESTRICT w0 = wv + static_cast<long long>(ci) * Co;
      const real* MSNAS_RESTRICT w1 = w0 + Co;
      const real* MSNAS_RESTRICT w2 = w1 + Co;
      const real* MSNAS_RESTRICT w3 = w2 + Co;
      for (int co = 0; co < Co; ++co)
        orow[co] += v0 * w0[co] + v1 * w1[co] + v2 * w2[co] + v3 * w3[co];
    }
    for (; ci < Ci; ++ci) {
      const real v = xrow[ci];
      const real* MSNAS_RESTRICT wr = wv + static_cast<long long>(ci) * Co;
      for (int co = 0; co < Co; ++co) orow[co] += v * wr[co];
    }
  }
  check_finite("conv1x1", *out);

  TensorNode* xn = x.node();
  TensorNode* wn = w.node();
  attach(out, {x, w}, [xn, wn, rows, Ci, Co](TensorNode& self) {
    const bool dx = xn->requires_grad;
    const bool dw = wn->requires_grad;
    if (dx) xn->ensure_grad();
    if (dw) wn->ensure_grad();
    const real* gv = self.grad.data();
    const real* xv = xn->val.data();
    const real* wv = wn->val.data();
    const int ci2 = Ci - Ci % 2;
    if (dx) {
      real* MSNAS_RESTRICT gx = xn->grad.data();
      for (long long n = 0; n < rows; ++n) {
        const real* MSNAS_RESTRICT grow = gv + n * Co;
        for (int ci = 0; ci < ci2; ci += 2) {
          const real* MSNAS_RESTRICT w0 = wv + static_cast<long long>(ci) * Co;
          const real* MSNAS_RESTRICT w1 = w0 + Co;
          real a0 = 0, a1 = 0;
          for (int co = 0; co < Co; ++co) {
            a0 += grow[co] * w0[co];
            a1 += grow[co] * w1[co];
          }
          gx[n * Ci + ci] += a0;
          gx[n * Ci + ci + 1] += a1;
        }
        for (int ci = ci2; ci < Ci; ++ci) {
          const real* MSNAS_RESTRICT wr = wv + static_cast<long long>(ci) * Co;
          real acc = 0;
          for (int co = 0; co < Co; ++co) acc += grow[co] * wr[co];
          gx[n * Ci + ci] += acc;
        }
      }
    }
    if (dw) {
      real* MSNAS_RESTRICT gw = wn->grad.data();
      for (long long n = 0; n < rows; ++n) {
        const real* MSNAS_RESTRICT grow = gv + n * Co;
        const real* MSNAS_RESTRICT xrow = xv + n * Ci;
        for (int ci = 0; ci < Ci; ++ci) {
          const real v = xrow[ci];
          real* MSNAS_RESTRICT gwr = gw + static_cast<long long>(ci) * Co;
          for (int co = 0; co < Co; ++co) gwr[co] += v * grow[co];
        }
      }
    }
  });
  return Tensor::wrap(out);
}

namespace {

void temporal_checks(const Tensor& x, int taps, int dilation) {
  if (x.rank() != 5) throw ShapeError("temporal conv: expects x[B,T,Y,X,C]");
  if (dilation < 1) throw ShapeError("temporal conv: non-positive dilation");
  if (taps % 2 == 0) throw ShapeError("temporal conv: even-length filter");
}

}  // namespace

Tensor temporal_conv1d_dilated(const Tensor& x, const Tensor& w, int dilation) {
  if (w.rank() != 3) throw ShapeError("temporal_conv1d_dilated: w must be [taps,Ci,Co]");
  temporal_checks(x, w.dim(0), dilation);
  const int B = x.dim(0), T = x.dim(1), Y = x.dim(2), X = x.dim(3), Ci = x.dim(4);
  const int K = w.dim(0), Co = w.dim(2);
  if (w.dim(1) != Ci) throw ShapeError("temporal_conv1d_dilated: channel mismatch");
  const int d = (K - 1) / 2;
  const long long plane = static_cast<long long>(Y) * X;

  auto out = make_node({B, T, Y, X, Co}, "temporal_conv1d_dilated");
  const real* xv = x.values().data();
  const real* wv = w.values().data();
  real* ov = out->val.data();
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      real* op = ov + (static_cast<long long>(b) * T + t) * plane * Co;
      for (int j = 0; j < K; ++j) {  // tap-major accumulation
        const int it = t - dilation * (j - d);
        if (it < 0 || it >= T) continue;
        const real* xp = xv + (static_cast<long long>(b) * T + it) * plane * Ci;
        const real* wj = wv + static_cast<long long>(j) * Ci * Co;
        for (long long p = 0; p < plane; ++p) {
          const real* xrow = xp + p * Ci;
          real* orow = op + p * Co;
          for (int ci = 0; ci < Ci; ++ci) {
            const real v = xrow[ci];
            const real* wr = wj + static_cast<long long>(ci) * Co;
            for (int co = 0; co < Co; ++co) orow[co] += v * wr[co];
          }
        }
      }
    }
  check_finite("temporal_conv1d_dilated", *out);

  TensorNode* xn = x.node();
  TensorNode* wn = w.node();
  attach(out, {x, w}, [xn, wn, B, T, plane, Ci, K, Co, d, dilation](TensorNode& self) {
    const bool dx = xn->requires_grad;
    const bool dw = wn->requires_grad;
    if (dx) xn->ensure_grad();
    if (dw) wn->ensure_grad();
    const real* gv = self.grad.data();
    const real* xv = xn->val.data();
    const real* wv = wn->val.data();
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) {
        const real* gp = gv + (static_cast<long long>(b) * T + t) * plane * Co;
        for (int j = 0; j < K; ++j) {
          const int it = t - dilation * (j - d);
          if (it < 0 || it >= T) continue;
          const long long xbase = (static_cast<long long>(b) * T + it) * plane * Ci;
          const real* wj = wv + static_cast<long long>(j) * Ci * Co;
          for (long long p = 0; p < plane; ++p) {
            const real* grow = gp + p * Co;
            for (int ci = 0; ci < Ci; ++ci) {
              const real* wr = wj + static_cast<long long>(ci) * Co;
              if (dx) {
                real acc = 0;
                for (int co = 0; co < Co; ++co) acc += grow[co] * wr[co];
                xn->grad[static_cast<size_t>(xbase + p * Ci + ci)] += acc;
              }
              if (dw) {
                const real v = xv[static_cast<size_t>(xbase + p * Ci + ci)];
                real* gwr = wn->grad.data() + static_cast<long long>(j) * Ci * Co +
                            static_cast<long long>(ci) * Co;
                for (int co = 0; co < Co; ++co) gwr[co] += v * grow[co];
              }
            }
          }
        }
      }
  });
  return Tensor::wrap(out);
}

Tensor temporal_conv1d_depthwise(const Tensor& x, const Tensor& w, int dilation) {
  if (w.rank() != 2) throw ShapeError("temporal_conv1d_depthwise: w must be [taps,C]");
  temporal_checks(x, w.dim(0), dilation);
  const int B = x.dim(0), T = x.dim(1), Y = x.dim(2), X = x.dim(3), C = x.dim(4);
  const int K = w.dim(0);
  if (w.dim(1) != C) throw ShapeError("temporal_conv1d_depthwise: channel mismatch");
  const int d = (K - 1) / 2;
  const long long plane = static_cast<long long>(Y) * X;

  auto out = make_node({B, T, Y, X, C}, "temporal_conv1d_depthwise");
  const real* xv = x.values().data();
  const real* wv = w.values().data();
  real* ov = out->val.data();
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      real* op = ov + (static_cast<long long>(b) * T + t) * plane * C;
      for (int j = 0; j < K; ++j) {
        const int it = t - dilation * (j - d);
        if (it < 0 || it >= T) continue;
        const real* xp = xv + (static_cast<long long>(b) * T + it) * plane * C;
        const real* wj = wv + static_cast<long long>(j) * C;
        for (long long p = 0; p < plane; ++p)
          for (int c = 0; c < C; ++c) op[p * C + c] += xp[p * C + c] * wj[c];
      }
    }
  check_finite("temporal_conv1d_depthwise", *out);

  TensorNode* xn = x.node();
  TensorNode* wn = w.node();
  attach(out, {x, w}, [xn, wn, B, T, plane, C, K, d, dilation](TensorNode& self) {
    const bool dx = xn->requires_grad;
    const bool dw = wn->requires_grad;
    if (dx) xn->ensure_grad();
    if (dw) wn->ensure_grad();
    const real* gv = self.grad.data();
    const real* xv = xn->val.data();
    const real* wv = wn->val.data();
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) {
        const real* gp = gv + (static_cast<long long>(b) * T + t) * plane * C;
        for (int j = 0; j < K; ++j) {
          const int it = t - dilation * (j - d);
          if (it < 0 || it >= T) continue;
          const long long xbase = (static_cast<long long>(b) * T + it) * plane * C;
          const real* wj = wv + static_cast<long long>(j) * C;
          real* gwj = dw ? wn->grad.data() + static_cast<long long>(j) * C : nullptr;
          for (long long p = 0; p < plane; ++p)
            for (int c = 0; c < C; ++c) {
              const real g = gp[p * C + c];
              if (dx) xn->grad[static_cast<size_t>(xbase + p * C + c)] += g * wj[c];
              if (dw) gwj[c] += g * xv[static_cast<size_t>(xbase + p * C + c)];
            }
        }
      }
  });
  return Tensor::wrap(out);
}

std::vector<real> inflate_filter(const std::vector<real>& taps, int dilation) {
  if (dilation < 1) throw ShapeError("inflate_filter: non-positive dilation");
  if (taps.empty()) return {};
  std::vector<real> out(static_cast<size_t>(dilation) * (taps.size() - 1) + 1, real{0});
  for (size_t i = 0; i < taps.size(); ++i) out[i * static_cast<size_t>(dilation)] = taps[i];
  return out;
}

// --- pooling -----------------------------------------------------------------

Tensor max_pool_spatial(const Tensor& x, int window, int stride) {
  if (x.rank() != 5) throw ShapeError("max_pool_spatial: expects x[B,T,Y,X,C]");
  if (window < 1 || stride < 1) throw ShapeError("max_pool_spatial: bad window/stride");
  const int B = x.dim(0), T = x.dim(1), Y = x.dim(2), X = x.dim(3), C = x.dim(4);
  const auto [OY, pad_y] = same_pad(Y, window, stride);
  const auto [OX, pad_x] = same_pad(X, window, stride);
  auto out = make_node({B, T, OY, OX, C}, "max_pool_spatial");
  std::vector<long long> argmax(static_cast<size_t>(out->size()));
  const real* xv = x.values().data();
  real* ov = out->val.data();
  const long long planes = static_cast<long long>(B) * T;
  for (long long p = 0; p < planes; ++p) {
    const real* xp = xv + p * Y * X * C;
    for (int oy = 0; oy < OY; ++oy)
      for (int ox = 0; ox < OX; ++ox)
        for (int c = 0; c < C; ++c) {
          real best = 0;
          long long best_off = -1;
          for (int ky = 0; ky < window; ++ky) {
            const int iy = oy * stride + ky - pad_y;
            if (iy < 0 || iy >= Y) continue;
            for (int kx = 0; kx < window; ++kx) {
              const int ix = ox * stride + kx - pad_x;
              if (ix < 0 || ix >= X) continue;
              const long long off = (static_cast<long long>(iy) * X + ix) * C + c;
              if (best_off < 0 || xp[off] > best) {
                best = xp[off];
                best_off = off;
              }
            }
          }
          const long long oidx =
              p * OY * OX * C + (static_cast<long long>(oy) * OX + ox) * C + c;
          ov[oidx] = best;
          argmax[static_cast<size_t>(oidx)] = p * Y * X * C + best_off;
        }
  }
  check_finite("max_pool_spatial", *out);
  TensorNode* xn = x.node();
  attach(out, {x}, [xn, argmax = std::move(argmax)](TensorNode& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[static_cast<size_t>(argmax[i])] += self.grad[i];
  });
  return Tensor::wrap(out);
}

Tensor avg_pool_spatial(const Tensor& x) {
  if (x.rank() != 5) throw ShapeError("avg_pool_spatial: expects x[B,T,Y,X,C]");
  const int B = x.dim(0), T = x.dim(1), Y = x.dim(2), X = x.dim(3), C = x.dim(4);
  auto out = make_node({B, T, C}, "avg_pool_spatial");
  const real inv = real{1} / static_cast<real>(Y * X);
  const real* xv = x.values().data();
  real* ov = out->val.data();
  const long long planes = static_cast<long long>(B) * T;
  for (long long p = 0; p < planes; ++p) {
    const real* xp = xv + p * Y * X * C;
    real* orow = ov + p * C;
    for (long long s = 0; s < static_cast<long long>(Y) * X; ++s)
      for (int c = 0; c < C; ++c) orow[c] += xp[s * C + c];
    for (int c = 0; c < C; ++c) orow[c] *= inv;
  }
  check_finite("avg_pool_spatial", *out);
  TensorNode* xn = x.node();
  attach(out, {x}, [xn, planes, Y, X, C, inv](TensorNode& self) {
    xn->ensure_grad();
    for (long long p = 0; p < planes; ++p) {
      const real* grow = self.grad.data() + p * C;
      real* gx = xn->grad.data() + p * Y * X * C;
      for (long long s = 0; s < static_cast<long long>(Y) * X; ++s)
        for (int c = 0; c < C; ++c) gx[s * C + c] += grow[c] * inv;
    }
  });
  return Tensor::wrap(out);
}

Tensor avg_pool(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  std::vector<bool> drop(static_cast<size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r) throw ShapeError("avg_pool: axis out of range");
    drop[static_cast<size_t>(a)] = true;
  }
  std::vector<int> oshape;
  long long count = 1;
  for (int i = 0; i < r; ++i)
    if (drop[static_cast<size_t>(i)]) count *= x.dim(i);
    else oshape.push_back(x.dim(i));
  if (oshape.empty()) oshape.push_back(1);

  // flat input index -> flat output index
  std::vector<long long> istride(static_cast<size_t>(r), 1), map_stride(static_cast<size_t>(r), 0);
  for (int i = r - 2; i >= 0; --i)
    istride[static_cast<size_t>(i)] = istride[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  long long os = 1;
  for (int i = r - 1; i >= 0; --i)
    if (!drop[static_cast<size_t>(i)]) {
      map_stride[static_cast<size_t>(i)] = os;
      os *= x.dim(i);
    }

  auto out = make_node(oshape, "avg_pool");
  const real inv = real{1} / static_cast<real>(count);
  const real* xv = x.values().data();
  const long long n = x.size();
  std::vector<long long> omap(static_cast<size_t>(n));
  for (long long i = 0; i < n; ++i) {
    long long rem = i, oi = 0;
    for (int ax = 0; ax < r; ++ax) {
      const long long q = rem / istride[static_cast<size_t>(ax)];
      rem %= istride[static_cast<size_t>(ax)];
      oi += q * map_stride[static_cast<size_t>(ax)];
    }
    omap[static_cast<size_t>(i)] = oi;
    out->val[static_cast<size_t>(oi)] += xv[i] * inv;
  }
  check_finite("avg_pool", *out);
  TensorNode* xn = x.node();
  attach(out, {x}, [xn, omap = std::move(omap), inv](TensorNode& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < omap.size(); ++i)
      xn->grad[i] += self.grad[static_cast<size_t>(omap[i])] * inv;
  });
  return Tensor::wrap(out);
}

Tensor pool_time_avg(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("pool_time_avg: expects x[B,T,C]");
  return avg_pool(x, {1});
}

Tensor pool_time_max(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("pool_time_max: expects x[B,T,C]");
  const int B = x.dim(0), T = x.dim(1), C = x.dim(2);
  auto out = make_node({B, C}, "pool_time_max");
  std::vector<long long> argmax(static_cast<size_t>(out->size()));
  const real* xv = x.values().data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      long long best_off = static_cast<long long>(b) * T * C + c;
      real best = xv[best_off];
      for (int t = 1; t < T; ++t) {
        const long long off = (static_cast<long long>(b) * T + t) * C + c;
        if (xv[off] > best) {
          best = xv[off];
          best_off = off;
        }
      }
      out->val[static_cast<size_t>(b * C + c)] = best;
      argmax[static_cast<size_t>(b * C + c)] = best_off;
    }
  check_finite("pool_time_max", *out);
  TensorNode* xn = x.node();
  attach(out, {x}, [xn, argmax = std::move(argmax)](TensorNode& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[static_cast<size_t>(argmax[i])] += self.grad[i];
  });
  return Tensor::wrap(out);
}

// --- normalization / head ------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, double momentum, double eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm: rank must be >= 2");
  const int C = x.shape().back();
  if (gamma.size() != C || beta.size() != C) throw ShapeError("batch_norm: scale/shift size mismatch");
  const long long N = x.size() / C;
  if (training && x.dim(0) < 8)
    throw ShapeError("batch_norm: batch too small for training mode (need >= 8)");
  if (state.running_mean.empty()) {
    state.running_mean.assign(static_cast<size_t>(C), real{0});
    state.running_var.assign(static_cast<size_t>(C), real{1});
  }

  std::vector<real> mean(static_cast<size_t>(C), real{0});
  std::vector<real> var(static_cast<size_t>(C), real{0});
  const real* xv = x.values().data();
  if (training) {
    for (long long n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += xv[n * C + c];
    for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<real>(N);
    for (long long n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const real d = xv[n * C + c] - mean[static_cast<size_t>(c)];
        var[static_cast<size_t>(c)] += d * d;
      }
    for (int c = 0; c < C; ++c) var[static_cast<size_t>(c)] /= static_cast<real>(N);
    if (!state.initialized) {
      state.running_mean = mean;
      state.running_var = var;
      state.initialized = true;
    } else {
      const real m = static_cast<real>(momentum);
      for (int c = 0; c < C; ++c) {
        state.running_mean[static_cast<size_t>(c)] =
            m * state.running_mean[static_cast<size_t>(c)] + (real{1} - m) * mean[static_cast<size_t>(c)];
        state.running_var[static_cast<size_t>(c)] =
            m * state.running_var[static_cast<size_t>(c)] + (real{1} - m) * var[static_cast<size_t>(c)];
      }
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<real> inv_std(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c)
    inv_std[static_cast<size_t>(c)] =
        real{1} / std::sqrt(var[static_cast<size_t>(c)] + static_cast<real>(eps));

  auto out = make_node(x.shape(), "batch_norm");
  const real* gv = gamma.values().data();
  const real* bv = beta.values().data();
  real* ov = out->val.data();
  for (long long n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const real xhat =
          (xv[n * C + c] - mean[static_cast<size_t>(c)]) * inv_std[static_cast<size_t>(c)];
      ov[n * C + c] = gv[c] * xhat + bv[c];
    }
  check_finite("batch_norm", *out);

  TensorNode* xn = x.node();
  TensorNode* gn = gamma.node();
  TensorNode* bn = beta.node();
  attach(out, {x, gamma, beta},
         [xn, gn, bn, N, C, training, mean = std::move(mean), inv_std = std::move(inv_std)](
             TensorNode& self) {
           const real* g = self.grad.data();
           const real* xv = xn->val.data();
           const real* gamma_v = gn->val.data();
           std::vector<real> sum_g(static_cast<size_t>(C), real{0});
           std::vector<real> sum_gx(static_cast<size_t>(C), real{0});
           for (long long n = 0; n < N; ++n)
             for (int c = 0; c < C; ++c) {
               const real xhat =
                   (xv[n * C + c] - mean[static_cast<size_t>(c)]) * inv_std[static_cast<size_t>(c)];
               sum_g[static_cast<size_t>(c)] += g[n * C + c];
               sum_gx[static_cast<size_t>(c)] += g[n * C + c] * xhat;
             }
           if (gn->requires_grad) {
             gn->ensure_grad();
             for (int c = 0; c < C; ++c) gn->grad[static_cast<size_t>(c)] += sum_gx[static_cast<size_t>(c)];
           }
           if (bn->requires_grad) {
             bn->ensure_grad();
             for (int c = 0; c < C; ++c) bn->grad[static_cast<size_t>(c)] += sum_g[static_cast<size_t>(c)];
           }
           if (xn->requires_grad) {
             xn->ensure_grad();
             const real invN = real{1} / static_cast<real>(N);
             for (long long n = 0; n < N; ++n)
               for (int c = 0; c < C; ++c) {
                 const size_t sc = static_cast<size_t>(c);
                 const real xhat = (xv[n * C + c] - mean[sc]) * inv_std[sc];
                 real dx = g[n * C + c];
                 if (training) dx -= invN * (sum_g[sc] + xhat * sum_gx[sc]);
                 xn->grad[static_cast<size_t>(n * C + c)] += gamma_v[c] * inv_std[sc] * dx;
               }
           }
         });
  return Tensor::wrap(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2) throw ShapeError("linear: expects x[B,Ci], w[Ci,Co]");
  const int B = x.dim(0), Ci = x.dim(1), Co = w.dim(1);
  if (w.dim(0) != Ci || bias.size() != Co) throw ShapeError("linear: shape mismatch");
  auto out = make_node({B, Co}, "linear");
  const real* xv = x.values().data();
  const real* wv = w.values().data();
  const real* bv = bias.values().data();
  for (int b = 0; b < B; ++b) {
    real* orow = out->val.data() + static_cast<long long>(b) * Co;
    for (int co = 0; co < Co; ++co) orow[co] = bv[co];
    const real* xrow = xv + static_cast<long long>(b) * Ci;
    for (int ci = 0; ci < Ci; ++ci) {
      const real v = xrow[ci];
      const real* wr = wv + static_cast<long long>(ci) * Co;
      for (int co = 0; co < Co; ++co) orow[co] += v * wr[co];
    }
  }
  check_finite("linear", *out);
  TensorNode* xn = x.node();
  TensorNode* wn = w.node();
  TensorNode* bn = bias.node();
  attach(out, {x, w, bias}, [xn, wn, bn, B, Ci, Co](TensorNode& self) {
    const real* g = self.grad.data();
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) bn->grad[static_cast<size_t>(co)] += g[b * Co + co];
    }
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const real* grow = g + static_cast<long long>(b) * Co;
      const real* xrow = xn->val.data() + static_cast<long long>(b) * Ci;
      for (int ci = 0; ci < Ci; ++ci) {
        if (xn->requires_grad) {
          real acc = 0;
          const real* wr = wn->val.data() + static_cast<long long>(ci) * Co;
          for (int co = 0; co < Co; ++co) acc += grow[co] * wr[co];
          xn->grad[static_cast<size_t>(b * Ci + ci)] += acc;
        }
        if (wn->requires_grad) {
          real* gwr = wn->grad.data() + static_cast<long long>(ci) * Co;
          const real v = xrow[ci];
          for (int co = 0; co < Co; ++co) gwr[co] += v * grow[co];
        }
      }
    }
  });
  return Tensor::wrap(out);
}

namespace {

// Row-wise softmax of [B,K] into probs.
std::vector<real> softmax_rows(const std::vector<real>& v, int B, int K) {
  std::vector<real> p(v.size());
  for (int b = 0; b < B; ++b) {
    const real* row = v.data() + static_cast<long long>(b) * K;
    real* prow = p.data() + static_cast<long long>(b) * K;
    real mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    real sum = 0;
    for (int k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - mx);
      sum += prow[k];
    }
    for (int k = 0; k < K; ++k) prow[k] /= sum;
  }
  return p;
}

}  // namespace

Tensor softmax(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax: expects x[B,K]");
  const int B = x.dim(0), K = x.dim(1);
  auto out = make_node({B, K}, "softmax");
  out->val = softmax_rows(x.values(), B, K);
  check_finite("softmax", *out);
  TensorNode* xn = x.node();
  TensorNode* on = out.get();
  attach(out, {x}, [xn, on, B, K](TensorNode& self) {
    xn->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const real* y = on->val.data() + static_cast<long long>(b) * K;
      const real* g = self.grad.data() + static_cast<long long>(b) * K;
      real dot = 0;
      for (int k = 0; k < K; ++k) dot += g[k] * y[k];
      for (int k = 0; k < K; ++k)
        xn->grad[static_cast<size_t>(b * K + k)] += y[k] * (g[k] - dot);
    }
  });
  return Tensor::wrap(out);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             double label_smoothing) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expects logits[B,K]");
  const int B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw Error("softmax_cross_entropy: smoothing must be in [0,1)");
  for (int y : labels)
    if (y < 0 || y >= K) throw Error("softmax_cross_entropy: label out of range");

  auto probs = softmax_rows(logits.values(), B, K);
  const real s = static_cast<real>(label_smoothing);
  const real off = s / static_cast<real>(K);
  const real on = (real{1} - s) + off;
  real loss = 0;
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k) {
      const real q = k == labels[static_cast<size_t>(b)] ? on : off;
      if (q > real{0})
        loss -= q * std::log(std::max(probs[static_cast<size_t>(b * K + k)],
                                      real{1e-30}));
    }
  loss /= static_cast<real>(B);

  auto out = make_node({1}, "softmax_cross_entropy");
  out->val[0] = loss;
  check_finite("softmax_cross_entropy", *out);
  TensorNode* xn = logits.node();
  attach(out, {logits},
         [xn, probs = std::move(probs), labels, B, K, on, off](TensorNode& self) {
           xn->ensure_grad();
           const real g = self.grad[0] / static_cast<real>(B);
           for (int b = 0; b < B; ++b)
             for (int k = 0; k < K; ++k) {
               const real q = k == labels[static_cast<size_t>(b)] ? on : off;
               xn->grad[static_cast<size_t>(b * K + k)] +=
                   g * (probs[static_cast<size_t>(b * K + k)] - q);
             }
         });
  return Tensor::wrap(out);
}

// --- gradient checking ----------------------------------------------------------

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  const std::vector<Tensor>& inputs, double perturbation) {
  if (!any_grad(inputs)) throw Error("grad_check: no input requires gradients");

  // Fixed weighting reduces any output shape to a scalar.
  std::vector<real> coeffs;
  const auto reduce = [&coeffs](const Tensor& out) {
    if (coeffs.empty()) {
      Rng rng(0x9dc0ffee);
      coeffs.resize(static_cast<size_t>(out.size()));
      for (auto& c : coeffs) c = static_cast<real>(rng.uniform() * 2.0 - 1.0);
    }
    double acc = 0;
    const auto& v = out.values();
    for (size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(coeffs[i]) * v[i];
    return acc;
  };

  Tensor out = fn(inputs);
  (void)reduce(out);  // fix the coefficients on the unperturbed shape
  // Analytic pass: backward from the weighted scalar.
  {
    auto weighted = make_node({1}, "grad_check_reduce");
    double acc = 0;
    for (size_t i = 0; i < out.values().size(); ++i)
      acc += static_cast<double>(coeffs[i]) * out.values()[i];
    weighted->val[0] = static_cast<real>(acc);
    TensorNode* on = out.node();
    attach(weighted, {out}, [on, &coeffs](TensorNode& self) {
      on->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) on->grad[i] += self.grad[0] * coeffs[i];
    });
    for (const auto& t : inputs) const_cast<Tensor&>(t).zero_grad();
    Tensor::wrap(weighted).backward();
  }

  double max_rel = 0.0;
  for (const auto& input : inputs) {
    if (!input.requires_grad()) continue;
    const std::vector<real> analytic = input.grad();
    auto& vals = const_cast<Tensor&>(input).values_mut();
    for (size_t i = 0; i < vals.size(); ++i) {
      const real keep = vals[i];
      vals[i] = keep + static_cast<real>(perturbation);
      const double plus = reduce(fn(inputs));
      vals[i] = keep - static_cast<real>(perturbation);
      const double minus = reduce(fn(inputs));
      vals[i] = keep;
      const double numeric = (plus - minus) / (2.0 * perturbation);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace msnas
