// Copyright 2026 The xmadapter Authors.
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

#include "xmadapter/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace xma::ops {

std::atomic<bool> g_broken_gelu{false};

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap cmap(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return CMap(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MMap mmap(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MMap(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool needs(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Number of times `b` repeats inside `a` under trailing-suffix broadcasting.
std::size_t broadcast_outer(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return 1;
  if (!is_suffix(a, b)) shape_error(op, a, b);
  return shape_numel(a) / shape_numel(b);
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

Shape with_last(Shape s, std::size_t n) {
  s.back() = n;
  return s;
}

Tensor reduce_outer(const Tensor& g, const Shape& small_shape) {
  Tensor out(small_shape, 0.0);
  const std::size_t inner = out.numel();
  const std::size_t outer = g.numel() / inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = g.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) out[i] += src[i];
  }
  return out;
}

// Writes dst[out] = src[in] (or dst[in] += src[out] when scatter) for the axis permutation.
void permute_walk(const Shape& in_shape, std::span<const std::size_t> axes, const double* src,
                  double* dst, bool scatter) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_stride[axes[i]];
  }
  const std::size_t total = shape_numel(in_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t in_off = 0;
  for (std::size_t out = 0; out < total; ++out) {
    if (scatter) {
      dst[in_off] += src[out];
    } else {
      dst[out] = src[in_off];
    }
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        in_off += step[ax];
        break;
      }
      in_off -= step[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var add(const Var& a, const Var& b) {
  const std::size_t outer = broadcast_outer("add", a.shape(), b.shape());
  const std::size_t inner = b.value().numel();
  Tensor out = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    const double* src = b.value().data();
    for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
  }
  return make_node(std::move(out), "add", {a, b}, [](Node& self) {
    if (needs(self, 0)) input(self, 0).accumulate(self.grad);
    if (needs(self, 1)) input(self, 1).accumulate(reduce_outer(self.grad, input(self, 1).value.shape()));
  });
}

Var sub(const Var& a, const Var& b) {
  const std::size_t outer = broadcast_outer("sub", a.shape(), b.shape());
  const std::size_t inner = b.value().numel();
  Tensor out = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    const double* src = b.value().data();
    for (std::size_t i = 0; i < inner; ++i) dst[i] -= src[i];
  }
  return make_node(std::move(out), "sub", {a, b}, [](Node& self) {
    if (needs(self, 0)) input(self, 0).accumulate(self.grad);
    if (needs(self, 1)) {
      Tensor g = reduce_outer(self.grad, input(self, 1).value.shape());
      for (double& v : g.values()) v = -v;
      input(self, 1).accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  const std::size_t outer = broadcast_outer("mul", a.shape(), b.shape());
  const std::size_t inner = b.value().numel();
  Tensor out = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    const double* src = b.value().data();
    for (std::size_t i = 0; i < inner; ++i) dst[i] *= src[i];
  }
  return make_node(std::move(out), "mul", {a, b}, [outer, inner](Node& self) {
    const Tensor& av = input(self, 0).value;
    const Tensor& bv = input(self, 1).value;
    if (needs(self, 0)) {
      Tensor g = self.grad;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] *= bv[i];
      input(self, 0).accumulate(g);
    }
    if (needs(self, 1)) {
      Tensor g(bv.shape(), 0.0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[o * inner + i] * av[o * inner + i];
      input(self, 1).accumulate(g);
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return make_node(std::move(out), "scale", {a}, [factor](Node& self) {
    Tensor g = self.grad;
    for (double& v : g.values()) v *= factor;
    input(self, 0).accumulate(g);
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  mmap(out, m, n).noalias() = cmap(a.value(), m, k) * cmap(b.value(), k, n);
  return make_node(std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    const auto dc = cmap(self.grad, m, n);
    if (needs(self, 0)) {
      Tensor& ga = input(self, 0).grad_buffer();
      mmap(ga, m, k).noalias() += dc * cmap(input(self, 1).value, k, n).transpose();
    }
    if (needs(self, 1)) {
      Tensor& gb = input(self, 1).grad_buffer();
      mmap(gb, k, n).noalias() += cmap(input(self, 0).value, m, k).transpose() * dc;
    }
  });
}

namespace {

Var linear_impl(const Var& x, const Var& weight, const Var* bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    shape_error("linear", x.shape(), weight.shape());
  }
  const std::size_t k = weight.dim(0), n = weight.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != n)) shape_error("linear bias", weight.shape(), bias->shape());
  const std::size_t rows = x.value().numel() / k;
  Tensor out(with_last(x.shape(), n));
  auto y = mmap(out, rows, n);
  y.noalias() = cmap(x.value(), rows, k) * cmap(weight.value(), k, n);
  if (bias) {
    const Eigen::Map<const Eigen::RowVectorXd> bv(bias->value().data(), static_cast<Eigen::Index>(n));
    y.rowwise() += bv;
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return make_node(std::move(out), "linear", std::move(inputs), [rows, k, n](Node& self) {
    const auto dy = cmap(self.grad, rows, n);
    if (needs(self, 0)) {
      Tensor& gx = input(self, 0).grad_buffer();
      mmap(gx, rows, k).noalias() += dy * cmap(input(self, 1).value, k, n).transpose();
    }
    if (needs(self, 1)) {
      Tensor& gw = input(self, 1).grad_buffer();
      mmap(gw, k, n).noalias() += cmap(input(self, 0).value, rows, k).transpose() * dy;
    }
    if (self.inputs.size() > 2 && needs(self, 2)) {
      Tensor& gb = input(self, 2).grad_buffer();
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(n)) += dy.colwise().sum();
    }
  });
}

}  // namespace

Var linear(const Var& x, const Var& weight) { return linear_impl(x, weight, nullptr); }
Var linear(const Var& x, const Var& weight, const Var& bias) { return linear_impl(x, weight, &bias); }

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) shape_error("bmm", a.shape(), b.shape());
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k) shape_error("bmm", a.shape(), b.shape());
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    const auto ai = cmap(a.value(), m, k, i * m * k);
    if (transpose_b) {
      mmap(out, m, n, i * m * n).noalias() = ai * cmap(b.value(), n, k, i * n * k).transpose();
    } else {
      mmap(out, m, n, i * m * n).noalias() = ai * cmap(b.value(), k, n, i * k * n);
    }
  }
  return make_node(std::move(out), "bmm", {a, b}, [batch, m, k, n, transpose_b](Node& self) {
    const Tensor& av = input(self, 0).value;
    const Tensor& bv = input(self, 1).value;
    Tensor* ga = needs(self, 0) ? &input(self, 0).grad_buffer() : nullptr;
    Tensor* gb = needs(self, 1) ? &input(self, 1).grad_buffer() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto dc = cmap(self.grad, m, n, i * m * n);
      if (transpose_b) {
        // C = A B^T: dA = dC B, dB = dC^T A
        if (ga) mmap(*ga, m, k, i * m * k).noalias() += dc * cmap(bv, n, k, i * n * k);
        if (gb) mmap(*gb, n, k, i * n * k).noalias() += dc.transpose() * cmap(av, m, k, i * m * k);
      } else {
        if (ga) mmap(*ga, m, k, i * m * k).noalias() += dc * cmap(bv, k, n, i * k * n).transpose();
        if (gb) mmap(*gb, k, n, i * k * n).noalias() += cmap(av, m, k, i * m * k).transpose() * dc;
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_node(std::move(out), "reshape", {x}, [](Node& self) {
    input(self, 0).accumulate(self.grad.reshaped(input(self, 0).value.shape()));
  });
}

Var permute(const Var& x, std::span<const std::size_t> axes) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) throw DimensionError("permute: axis list does not match rank of " + shape_str(in_shape));
  std::vector<bool> used(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || used[axes[i]]) throw DimensionError("permute: invalid axis permutation");
    used[axes[i]] = true;
    out_shape[i] = in_shape[axes[i]];
  }
  Tensor out(out_shape);
  permute_walk(in_shape, axes, x.value().data(), out.data(), false);
  std::vector<std::size_t> saved(axes.begin(), axes.end());
  return make_node(std::move(out), "permute", {x}, [saved = std::move(saved)](Node& self) {
    Node& in = input(self, 0);
    Tensor& g = in.grad_buffer();
    permute_walk(in.value.shape(), saved, self.grad.data(), g.data(), true);
  });
}

Var transpose(const Var& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected rank-2 tensor, got " + shape_str(x.shape()));
  constexpr std::size_t axes[] = {1, 0};
  return permute(x, axes);
}

Var concat_last(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) shape_error("concat_last", sa, sb);
  const std::size_t p = sa.back(), q = sb.back();
  const std::size_t rows = a.value().numel() / p;
  Tensor out(with_last(sa, p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(b.value().data() + r * q, q, out.data() + r * (p + q) + p);
  }
  return make_node(std::move(out), "concat_last", {a, b}, [rows, p, q](Node& self) {
    if (needs(self, 0)) {
      Tensor& g = input(self, 0).grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < p; ++i) g[r * p + i] += self.grad[r * (p + q) + i];
    }
    if (needs(self, 1)) {
      Tensor& g = input(self, 1).grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < q; ++i) g[r * q + i] += self.grad[r * (p + q) + p + i];
    }
  });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) shape_error("layernorm", x.shape(), gamma.shape());
  if (!(eps > 0.0)) throw std::invalid_argument("layernorm: eps must be positive");
  const std::size_t rows = x.value().numel() / d;
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> rstd(rows);
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (row[i] - mu) * rstd[r];
      xhat[r * d + i] = h;
      out[r * d + i] = gamma.value()[i] * h + beta.value()[i];
    }
  }
  return make_node(std::move(out), "layernorm", {x, gamma, beta},
                   [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                     const Tensor& g = self.grad;
                     const Tensor& gam = input(self, 1).value;
                     if (needs(self, 0)) {
                       Tensor& gx = input(self, 0).grad_buffer();
                       std::vector<double> dh(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double sum_dh = 0.0, sum_dh_h = 0.0;
                         for (std::size_t i = 0; i < d; ++i) {
                           dh[i] = g[r * d + i] * gam[i];
                           sum_dh += dh[i];
                           sum_dh_h += dh[i] * xhat[r * d + i];
                         }
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t i = 0; i < d; ++i) {
                           gx[r * d + i] +=
                               rstd[r] * (dh[i] - inv_d * sum_dh - xhat[r * d + i] * inv_d * sum_dh_h);
                         }
                       }
                     }
                     if (needs(self, 1)) {
                       Tensor& gg = input(self, 1).grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
                     }
                     if (needs(self, 2)) {
                       Tensor& gb = input(self, 2).grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
                     }
                   });
}

Var gelu(const Var& x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return make_node(std::move(out), "gelu", {x}, [](Node& self) {
    const Tensor& xv = input(self, 0).value;
    Tensor g(xv.shape());
    const double corrupt = g_broken_gelu.load() ? 1.5 : 1.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double dt = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g[i] = corrupt * self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dt);
    }
    input(self, 0).accumulate(g);
  });
}

namespace {

Tensor softmax_rows(const Tensor& x, std::span<const std::uint8_t> valid) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * n;
    double* y = out.data() + r * n;
    const std::uint8_t* ok = valid.empty() ? nullptr : valid.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      if (!ok || ok[i]) mx = std::max(mx, in[i]);
    if (!std::isfinite(mx)) {
      throw std::invalid_argument("masked_softmax: row " + std::to_string(r) + " has no valid entry");
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!ok || ok[i]) {
        y[i] = std::exp(in[i] - mx);
        z += y[i];
      }
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= z;
  }
  return out;
}

void softmax_backward(Node& self) {
  const Tensor& y = self.value;
  const std::size_t n = last_dim(y);
  const std::size_t rows = y.numel() / n;
  Tensor& gx = input(self, 0).grad_buffer();
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += y[r * n + i] * self.grad[r * n + i];
    for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += y[r * n + i] * (self.grad[r * n + i] - dot);
  }
}

}  // namespace

Var softmax(const Var& x) {
  return make_node(softmax_rows(x.value(), {}), "softmax", {x}, softmax_backward);
}

Var masked_softmax(const Var& x, std::span<const std::uint8_t> valid) {
  if (valid.size() != x.value().numel()) {
    throw DimensionError("masked_softmax: mask has " + std::to_string(valid.size()) +
                         " entries for tensor " + shape_str(x.shape()));
  }
  return make_node(softmax_rows(x.value(), valid), "masked_softmax", {x}, softmax_backward);
}

Var log_softmax(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv);
  const std::size_t rows = xv.numel() / n;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(in[i] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = in[i] - lse;
  }
  return make_node(std::move(out), "log_softmax", {x}, [rows, n](Node& self) {
    Tensor& gx = input(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) gsum += self.grad[r * n + i];
      for (std::size_t i = 0; i < n; ++i) {
        gx[r * n + i] += self.grad[r * n + i] - std::exp(self.value[r * n + i]) * gsum;
      }
    }
  });
}

Var l2_normalize(const Var& x) {
  constexpr double kMinNorm = 1e-12;
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv);
  const std::size_t rows = xv.numel() / n;
  Tensor out(xv.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += xv[r * n + i] * xv[r * n + i];
    norms[r] = std::max(std::sqrt(ss), kMinNorm);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xv[r * n + i] / norms[r];
  }
  return make_node(std::move(out), "l2_normalize", {x}, [rows, n, norms = std::move(norms)](Node& self) {
    Tensor& gx = input(self, 0).grad_buffer();
    const Tensor& y = self.value;
    for (std::size_t r = 0; r < rows; ++r) {
      const bool clamped = norms[r] == kMinNorm;
      double dot = 0.0;
      if (!clamped)
        for (std::size_t i = 0; i < n; ++i) dot += y[r * n + i] * self.grad[r * n + i];
      for (std::size_t i = 0; i < n; ++i) {
        gx[r * n + i] += (self.grad[r * n + i] - y[r * n + i] * dot) / norms[r];
      }
    }
  });
}

Var dropout(const Var& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
    out[i] = x.value()[i] * mask[i];
  }
  return make_node(std::move(out), "dropout", {x}, [mask = std::move(mask)](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= mask[i];
    input(self, 0).accumulate(g);
  });
}

Var take_rows(const Var& x, std::span<const std::size_t> rows) {
  if (x.rank() != 3 || rows.size() != x.dim(0)) {
    throw DimensionError("take_rows: expected [N x S x d] with N row indices, got " + shape_str(x.shape()) +
                         " and " + std::to_string(rows.size()) + " indices");
  }
  const std::size_t n = x.dim(0), s = x.dim(1), d = x.dim(2);
  for (std::size_t r : rows) {
    if (r >= s) throw std::out_of_range("take_rows: row " + std::to_string(r) + " outside sequence of " + std::to_string(s));
  }
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.value().data() + (i * s + rows[i]) * d, d, out.data() + i * d);
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return make_node(std::move(out), "take_rows", {x}, [n, s, d, saved = std::move(saved)](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[(i * s + saved[i]) * d + j] += self.grad[i * d + j];
  });
}

Var prepend_row(const Var& x, const Var& row) {
  if (x.rank() != 3 || row.shape() != Shape{x.dim(2)}) shape_error("prepend_row", x.shape(), row.shape());
  const std::size_t n = x.dim(0), m = x.dim(1), d = x.dim(2);
  Tensor out({n, m + 1, d});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(row.value().data(), d, out.data() + i * (m + 1) * d);
    std::copy_n(x.value().data() + i * m * d, m * d, out.data() + (i * (m + 1) + 1) * d);
  }
  return make_node(std::move(out), "prepend_row", {x, row}, [n, m, d](Node& self) {
    if (needs(self, 0)) {
      Tensor& g = input(self, 0).grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m * d; ++j) g[i * m * d + j] += self.grad[(i * (m + 1) + 1) * d + j];
    }
    if (needs(self, 1)) {
      Tensor& g = input(self, 1).grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * (m + 1) * d + j];
    }
  });
}

Var leading_rows(const Var& x, std::size_t count) {
  if (x.rank() != 2 || count == 0 || count > x.dim(0)) {
    throw DimensionError("leading_rows: cannot take " + std::to_string(count) + " rows of " + shape_str(x.shape()));
  }
  const std::size_t d = x.dim(1);
  Tensor out({count, d}, std::vector<double>(x.value().data(), x.value().data() + count * d));
  return make_node(std::move(out), "leading_rows", {x}, [count, d](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < count * d; ++i) g[i] += self.grad[i];
  });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq_len) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.size() != batch * seq_len) throw DimensionError("embedding: id count does not match batch x seq_len");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Tensor out({batch, seq_len, d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_node(std::move(out), "embedding", {table}, [d, saved = std::move(saved)](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(saved[i]) * d + j] += self.grad[i * d + j];
  });
}

Var sum_last(const Var& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x.value()[r * n + i];
    out[r] = acc;
  }
  return make_node(std::move(out), "sum_last", {x}, [rows, n](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < n; ++i) g[r * n + i] += self.grad[r];
  });
}

Var diagonal(const Var& x) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1)) throw DimensionError("diagonal: expected square matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = x.value()[i * n + i];
  return make_node(std::move(out), "diagonal", {x}, [n](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i * n + i] += self.grad[i];
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return make_node(Tensor::scalar(acc), "sum", {x}, [](Node& self) {
    Tensor& g = input(self, 0).grad_buffer();
    const double s = self.grad[0];
    for (double& v : g.values()) v += s;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

}  // namespace xma::ops

namespace xma::testing {

ScopedBrokenGeluBackward::ScopedBrokenGeluBackward() { ops::g_broken_gelu.store(true); }
ScopedBrokenGeluBackward::~ScopedBrokenGeluBackward() { ops::g_broken_gelu.store(false); }

}  // namespace xma::testing
