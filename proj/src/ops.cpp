// Copyright 2026 The CEUSP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ceusp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ceusp/errors.hpp"

namespace ceusp {
namespace {

using detail::Node;

bool wants_grad(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
std::vector<Real>& parent_grad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }

// Wraps a freshly computed buffer into a graph node.
Tensor make_result(const char* op, Shape shape, std::vector<Real> data, const std::vector<Tensor>& inputs,
                   detail::BackwardFn backward) {
  for (Real v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = detail::next_node_id();
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any && grad_enabled()) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor make_result(const char* op, Shape shape, std::vector<Real> data, std::initializer_list<Tensor> inputs,
                   detail::BackwardFn backward) {
  return make_result(op, std::move(shape), std::move(data), std::vector<Tensor>(inputs), std::move(backward));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Flat input offset for every flat output offset of a permutation.
std::vector<std::size_t> permutation_map(const Shape& in_shape, const DimOrder& order) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    step[i] = in_strides[order[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++idx[axis] < out_shape[axis]) {
        offset += step[axis];
        break;
      }
      offset -= step[axis] * (out_shape[axis] - 1);
      idx[axis] = 0;
    }
  }
  return map;
}

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  const std::size_t rank = a.size();
  bc.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    bc.out[i] = std::max(a[i], b[i]);
  }
  auto sa = strides_of(a), sb = strides_of(b);
  for (std::size_t i = 0; i < rank; ++i) {
    if (a[i] == 1) sa[i] = 0;
    if (b[i] == 1) sb[i] = 0;
  }
  const std::size_t n = shape_numel(bc.out);
  bc.ia.resize(n);
  bc.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t k = 0; k < n; ++k) {
    bc.ia[k] = oa;
    bc.ib[k] = ob;
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++idx[axis] < bc.out[axis]) {
        oa += sa[axis];
        ob += sb[axis];
        break;
      }
      oa -= sa[axis] * (bc.out[axis] - 1);
      ob -= sb[axis] * (bc.out[axis] - 1);
      idx[axis] = 0;
    }
  }
  return bc;
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& t, Fwd fwd, Deriv deriv) {
  const auto x = t.data();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return make_result(op, t.shape(), std::move(y), {t}, [deriv](Node& self) {
    auto& gx = parent_grad(self, 0);
    const auto& x = self.parents[0]->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(x[i], self.data[i]);
  });
}

}  // namespace

Tensor permute(const Tensor& t, const DimOrder& order) {
  if (t.rank() != order.size()) {
    throw ShapeError("permute: order of length " + std::to_string(order.size()) + " on tensor " + shape_str(t.shape()));
  }
  Shape out_shape(t.rank());
  for (std::size_t i = 0; i < t.rank(); ++i) out_shape[i] = t.shape()[order[i]];
  auto map = permutation_map(t.shape(), order);
  const auto x = t.data();
  std::vector<Real> y(x.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[map[k]];
  return make_result("permute", std::move(out_shape), std::move(y), {t}, [map = std::move(map)](Node& self) {
    auto& gx = parent_grad(self, 0);
    for (std::size_t k = 0; k < map.size(); ++k) gx[map[k]] += self.grad[k];
  });
}

Tensor inverse_permute(const Tensor& t, const DimOrder& order) {
  if (t.rank() != order.size()) {
    throw ShapeError("inverse_permute: order of length " + std::to_string(order.size()) + " on tensor " +
                     shape_str(t.shape()));
  }
  return permute(t, order.inverse());
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw ShapeError("reshape " + shape_str(t.shape()) + " -> " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), t.to_vector(), {t}, [](Node& self) {
    auto& gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape out_shape = parts[0].shape();
  if (out_shape.empty()) throw ShapeError("concat needs rank >= 1");
  out_shape[0] = 0;
  std::vector<Real> y;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size() || !std::equal(out_shape.begin() + 1, out_shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat: incompatible part " + shape_str(p.shape()));
    }
    out_shape[0] += p.shape()[0];
    y.insert(y.end(), p.data().begin(), p.data().end());
  }
  return make_result("concat", std::move(out_shape), std::move(y), parts, [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t n = self.parents[i]->data.size();
      if (wants_grad(self, i)) {
        auto& g = parent_grad(self, i);
        for (std::size_t k = 0; k < n; ++k) g[k] += self.grad[offset + k];
      }
      offset += n;
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack of nothing");
  Shape out_shape = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != out_shape) throw ShapeError("stack: mismatched part " + shape_str(p.shape()));
  }
  out_shape.insert(out_shape.begin(), parts.size());
  std::vector<Real> y;
  y.reserve(shape_numel(out_shape));
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  return make_result("stack", std::move(out_shape), std::move(y), parts, [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t n = self.parents[i]->data.size();
      if (wants_grad(self, i)) {
        auto& g = parent_grad(self, i);
        for (std::size_t k = 0; k < n; ++k) g[k] += self.grad[offset + k];
      }
      offset += n;
    }
  });
}

Tensor select(const Tensor& t, std::size_t flat_index) {
  if (flat_index >= t.numel()) {
    throw RangeError("select index " + std::to_string(flat_index) + " out of " + shape_str(t.shape()));
  }
  return make_result("select", {}, {t[flat_index]}, {t},
                     [flat_index](Node& self) { parent_grad(self, 0)[flat_index] += self.grad[0]; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto bc = broadcast(a.shape(), b.shape(), "add");
  const auto x = a.data(), z = b.data();
  std::vector<Real> y(shape_numel(bc.out));
  if (bc.same) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[bc.ia[i]] + z[bc.ib[i]];
  }
  auto out_shape = bc.out;
  return make_result("add", std::move(out_shape), std::move(y), {a, b}, [bc = std::move(bc)](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = parent_grad(self, p);
      const auto& idx = p == 0 ? bc.ia : bc.ib;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[bc.same ? i : idx[i]] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, Real{-1})); }

Tensor mul(const Tensor& a, const Tensor& b) {
  auto bc = broadcast(a.shape(), b.shape(), "mul");
  const auto x = a.data(), z = b.data();
  std::vector<Real> y(shape_numel(bc.out));
  if (bc.same) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[bc.ia[i]] * z[bc.ib[i]];
  }
  auto out_shape = bc.out;
  return make_result("mul", std::move(out_shape), std::move(y), {a, b}, [bc = std::move(bc)](Node& self) {
    const auto& xa = self.parents[0]->data;
    const auto& xb = self.parents[1]->data;
    const std::size_t n = self.grad.size();
    if (wants_grad(self, 0)) {
      auto& g = parent_grad(self, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = bc.same ? i : bc.ia[i], ib = bc.same ? i : bc.ib[i];
        g[ia] += self.grad[i] * xb[ib];
      }
    }
    if (wants_grad(self, 1)) {
      auto& g = parent_grad(self, 1);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = bc.same ? i : bc.ia[i], ib = bc.same ? i : bc.ib[i];
        g[ib] += self.grad[i] * xa[ia];
      }
    }
  });
}

Tensor scale(const Tensor& t, Real factor) {
  return unary("scale", t, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& t, Real offset) {
  return unary("add_scalar", t, [offset](Real x) { return x + offset; }, [](Real, Real) { return Real{1}; });
}

Tensor relu(const Tensor& t) {
  return unary(
      "relu", t, [](Real x) { return x > 0 ? x : Real{0}; }, [](Real x, Real) { return x > 0 ? Real{1} : Real{0}; });
}

Tensor sigmoid(const Tensor& t) {
  return unary(
      "sigmoid", t,
      [](Real x) {
        // Split by sign so exp never overflows.
        if (x >= 0) return Real{1} / (Real{1} + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real{1} + e);
      },
      [](Real, Real y) { return y * (Real{1} - y); });
}

Tensor exp(const Tensor& t) {
  return unary("exp", t, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& t) {
  for (Real v : t.data()) {
    if (!(v > 0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary("log", t, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real{1} / x; });
}

Tensor clamp_min(const Tensor& t, Real floor) {
  return unary(
      "clamp_min", t, [floor](Real x) { return x > floor ? x : floor; },
      [floor](Real x, Real) { return x > floor ? Real{1} : Real{0}; });
}

Tensor sum(const Tensor& t) {
  Real s = 0;
  for (Real v : t.data()) s += v;
  return make_result("sum", {}, {s}, {t}, [](Node& self) {
    auto& g = parent_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& t) { return scale(sum(t), Real{1} / static_cast<Real>(t.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank(a, 1, "dot");
  if (a.shape() != b.shape()) throw ShapeError("dot: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Real s = 0;
  const auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * z[i];
  return make_result("dot", {}, {s}, {a, b}, [](Node& self) {
    const Real g0 = self.grad[0];
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = parent_grad(self, p);
      const auto& other = self.parents[1 - p]->data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * other[i];
    }
  });
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, "softmax");
  const auto x = logits.data();
  const Real hi = *std::max_element(x.begin(), x.end());
  std::vector<Real> y(x.size());
  Real z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - hi));
  for (auto& v : y) v /= z;
  return make_result("softmax", logits.shape(), std::move(y), {logits}, [](Node& self) {
    Real inner = 0;
    for (std::size_t i = 0; i < self.data.size(); ++i) inner += self.grad[i] * self.data[i];
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.data[i] * (self.grad[i] - inner);
  });
}

Tensor log_softmax(const Tensor& logits) {
  require_rank(logits, 1, "log_softmax");
  const auto x = logits.data();
  const Real hi = *std::max_element(x.begin(), x.end());
  Real z = 0;
  for (Real v : x) z += std::exp(v - hi);
  const Real lse = hi + std::log(z);
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - lse;
  return make_result("log_softmax", logits.shape(), std::move(y), {logits}, [](Node& self) {
    Real total = 0;
    for (Real g : self.grad) total += g;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] - std::exp(self.data[i]) * total;
  });
}

Tensor l2_normalize(const Tensor& v) {
  require_rank(v, 1, "l2_normalize");
  Real sq = 0;
  for (Real x : v.data()) sq += x * x;
  if (!(sq > 0)) throw DomainError("l2_normalize of an all-zero vector");
  const Real norm = std::sqrt(sq);
  std::vector<Real> y(v.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] / norm;
  return make_result("l2_normalize", v.shape(), std::move(y), {v}, [norm](Node& self) {
    Real inner = 0;
    for (std::size_t i = 0; i < self.data.size(); ++i) inner += self.grad[i] * self.data[i];
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (self.grad[i] - self.data[i] * inner) / norm;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 1, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t out = weight.dim(0), in = weight.dim(1);
  if (x.dim(0) != in || bias.shape() != Shape{out}) {
    throw ShapeError("linear: x " + shape_str(x.shape()) + ", W " + shape_str(weight.shape()) + ", b " +
                     shape_str(bias.shape()));
  }
  const auto xv = x.data(), w = weight.data(), b = bias.data();
  std::vector<Real> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    Real s = b[o];
    const Real* row = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * xv[i];
    y[o] = s;
  }
  return make_result("linear", {out}, std::move(y), {x, weight, bias}, [out, in](Node& self) {
    const auto& xv = self.parents[0]->data;
    const auto& w = self.parents[1]->data;
    const auto& gy = self.grad;
    if (wants_grad(self, 0)) {
      auto& gx = parent_grad(self, 0);
      for (std::size_t o = 0; o < out; ++o) {
        const Real* row = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gx[i] += gy[o] * row[i];
      }
    }
    if (wants_grad(self, 1)) {
      auto& gw = parent_grad(self, 1);
      for (std::size_t o = 0; o < out; ++o) {
        Real* row = gw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += gy[o] * xv[i];
      }
    }
    if (wants_grad(self, 2)) {
      auto& gb = parent_grad(self, 2);
      for (std::size_t o = 0; o < out; ++o) gb[o] += gy[o];
    }
  });
}

namespace {

// Column buffer layout: row (ci, ky, kx), column (oy, ox); padded taps stay 0.
struct ConvGeometry {
  std::size_t cin, h, w, k, oh, ow, stride, padding;

  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return oh * ow; }

  // Calls f(col_index, input_index) for every in-bounds tap of one column row.
  template <typename F>
  void for_each_tap(std::size_t ci, std::size_t ky, std::size_t kx, F&& f) const {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
      if (iy < 0 || iy >= static_cast<long>(h)) continue;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
        if (ix < 0 || ix >= static_cast<long>(w)) continue;
        f(oy * ow + ox, (ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix));
      }
    }
  }

  std::vector<Real> im2col(const Real* x) const {
    std::vector<Real> cols_buf(rows() * cols(), 0);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          Real* row = cols_buf.data() + ((ci * k + ky) * k + kx) * cols();
          for_each_tap(ci, ky, kx, [&](std::size_t c, std::size_t i) { row[c] = x[i]; });
        }
      }
    }
    return cols_buf;
  }

  void col2im_add(const std::vector<Real>& cols_buf, Real* gx) const {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Real* row = cols_buf.data() + ((ci * k + ky) * k + kx) * cols();
          for_each_tap(ci, ky, kx, [&](std::size_t c, std::size_t i) { gx[i] += row[c]; });
        }
      }
    }
  }
};

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  require_rank(x, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k || bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + ", W " + shape_str(weight.shape()) + ", b " +
                     shape_str(bias.shape()));
  }
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * opt.padding < k || w + 2 * opt.padding < k) throw ShapeError("conv2d: kernel larger than input");
  const ConvGeometry g{cin, h, w, k, (h + 2 * opt.padding - k) / opt.stride + 1,
                       (w + 2 * opt.padding - k) / opt.stride + 1, opt.stride, opt.padding};
  const std::size_t rows = g.rows(), cols = g.cols();

  auto col = std::make_shared<std::vector<Real>>(g.im2col(x.data().data()));
  const auto wv = weight.data(), bv = bias.data();
  std::vector<Real> y(cout * cols);
  for (std::size_t co = 0; co < cout; ++co) {
    Real* out = y.data() + co * cols;
    std::fill_n(out, cols, bv[co]);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real wk = wv[co * rows + r];
      const Real* in = col->data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) out[c] += wk * in[c];
    }
  }

  return make_result("conv2d", {cout, g.oh, g.ow}, std::move(y), {x, weight, bias}, [=](Node& self) {
    const auto& wv = self.parents[1]->data;
    const auto& gy = self.grad;
    if (wants_grad(self, 2)) {
      auto& gb = parent_grad(self, 2);
      for (std::size_t co = 0; co < cout; ++co) {
        Real acc = 0;
        for (std::size_t i = 0; i < cols; ++i) acc += gy[co * cols + i];
        gb[co] += acc;
      }
    }
    if (wants_grad(self, 1)) {
      auto& gw = parent_grad(self, 1);
      for (std::size_t co = 0; co < cout; ++co) {
        const Real* go = gy.data() + co * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* in = col->data() + r * cols;
          Real acc = 0;
          for (std::size_t c = 0; c < cols; ++c) acc += go[c] * in[c];
          gw[co * rows + r] += acc;
        }
      }
    }
    if (wants_grad(self, 0)) {
      std::vector<Real> gcol(rows * cols, 0);
      for (std::size_t co = 0; co < cout; ++co) {
        const Real* go = gy.data() + co * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const Real wk = wv[co * rows + r];
          Real* dst = gcol.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += wk * go[c];
        }
      }
      g.col2im_add(gcol, parent_grad(self, 0).data());
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  const auto xv = x.data();
  std::vector<Real> y(c, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    Real s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[ch * hw + i];
    y[ch] = s / static_cast<Real>(hw);
  }
  return make_result("global_avg_pool", {c}, std::move(y), {x}, [c, hw](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real v = self.grad[ch] / static_cast<Real>(hw);
      for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += v;
    }
  });
}

Tensor channel_avg_pool(const Tensor& x) {
  require_rank(x, 3, "channel_avg_pool");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  const auto xv = x.data();
  std::vector<Real> y(hw, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) y[i] += xv[ch * hw + i];
  }
  for (auto& v : y) v /= static_cast<Real>(c);
  return make_result("channel_avg_pool", {1, x.dim(1), x.dim(2)}, std::move(y), {x}, [c, hw](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += self.grad[i] / static_cast<Real>(c);
    }
  });
}

Tensor channel_max_pool(const Tensor& x) {
  require_rank(x, 3, "channel_max_pool");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  const auto xv = x.data();
  std::vector<Real> y(xv.begin(), xv.begin() + static_cast<long>(hw));
  std::vector<std::size_t> arg(hw, 0);
  for (std::size_t ch = 1; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) {
      if (xv[ch * hw + i] > y[i]) {
        y[i] = xv[ch * hw + i];
        arg[i] = ch;
      }
    }
  }
  return make_result("channel_max_pool", {1, x.dim(1), x.dim(2)}, std::move(y), {x},
                     [hw, arg = std::move(arg)](Node& self) {
                       auto& g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < hw; ++i) g[arg[i] * hw + i] += self.grad[i];
                     });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups, Real eps) {
  require_rank(x, 3, "group_norm");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("group_norm: affine parameters must have shape (" + std::to_string(c) + ")");
  }
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(c) +
                     " channels");
  }
  const std::size_t per = c / groups, span = per * hw;
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  std::vector<Real> y(xv.size()), xhat(xv.size()), inv_std(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const Real* in = xv.data() + g * span;
    Real mu = 0;
    for (std::size_t i = 0; i < span; ++i) mu += in[i];
    mu /= static_cast<Real>(span);
    Real var = 0;
    for (std::size_t i = 0; i < span; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<Real>(span);
    inv_std[g] = Real{1} / std::sqrt(var + eps);
    for (std::size_t i = 0; i < span; ++i) {
      const std::size_t ch = g * per + i / hw;
      xhat[g * span + i] = (in[i] - mu) * inv_std[g];
      y[g * span + i] = gv[ch] * xhat[g * span + i] + bv[ch];
    }
  }
  return make_result("group_norm", x.shape(), std::move(y), {x, gamma, beta},
                     [groups, per, hw, span, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const auto& gv = self.parents[1]->data;
                       const auto& gy = self.grad;
                       Real* gx = wants_grad(self, 0) ? parent_grad(self, 0).data() : nullptr;
                       Real* gg = wants_grad(self, 1) ? parent_grad(self, 1).data() : nullptr;
                       Real* gb = wants_grad(self, 2) ? parent_grad(self, 2).data() : nullptr;
                       const Real n = static_cast<Real>(span);
                       for (std::size_t g = 0; g < groups; ++g) {
                         // Gradient w.r.t. xhat is gy * gamma; reduce it over the group.
                         Real sum_d = 0, sum_dx = 0;
                         for (std::size_t i = 0; i < span; ++i) {
                           const std::size_t k = g * span + i, ch = g * per + i / hw;
                           const Real d = gy[k] * gv[ch];
                           sum_d += d;
                           sum_dx += d * xhat[k];
                           if (gg) gg[ch] += gy[k] * xhat[k];
                           if (gb) gb[ch] += gy[k];
                         }
                         if (gx) {
                           for (std::size_t i = 0; i < span; ++i) {
                             const std::size_t k = g * span + i, ch = g * per + i / hw;
                             gx[k] += inv_std[g] / n * (n * gy[k] * gv[ch] - sum_d - xhat[k] * sum_dx);
                           }
                         }
                       }
                     });
}

Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_rank(x, 3, "channel_norm");
  return group_norm(x, gamma, beta, x.dim(0), eps);
}

}  // namespace ceusp
