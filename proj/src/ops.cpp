#include "irra/ops.hpp"

#include "irra/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace irra {

using detail::make_result;
using detail::Node;

namespace {

bool is_suffix(const Shape& inner, const Shape& outer) {
  if (inner.size() > outer.size()) return false;
  return std::equal(inner.rbegin(), inner.rend(), outer.rbegin());
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (!is_suffix(b.shape(), a.shape())) {
    throw ShapeError(std::string(op) + ": cannot combine " + shape_str(a.shape()) + " with " +
                     shape_str(b.shape()));
  }
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw IndexError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

// outer x extent x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

MatrixMap grad_matrix(Node& n, std::size_t rows, std::size_t cols) {
  return MatrixMap(n.ensure_grad().data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

ConstMatrixMap value_matrix(const Node& n, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(n.value.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  const auto m = b.size();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % m];
  return make_result(a.shape(), std::move(out), {a, b}, [m](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (y.requires_grad) {
      auto& g = y.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % m] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "sub");
  const auto m = b.size();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % m];
  return make_result(a.shape(), std::move(out), {a, b}, [m](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (y.requires_grad) {
      auto& g = y.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % m] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  const auto m = b.size();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % m];
  return make_result(a.shape(), std::move(out), {a, b}, [m](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i % m];
    }
    if (y.requires_grad) {
      auto& g = y.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % m] += self.grad[i] * x.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += s;
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = std::exp(v);
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) {
    if (!(v > 0.0)) throw DegenerateInputError("log of non-positive value");
    v = std::log(v);
  }
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / x.value[i];
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    auto& g = x.ensure_grad();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const ConstMatrixMap g(self.grad.data(), m, n);
    if (x.requires_grad) grad_matrix(x, m, k).noalias() += g * value_matrix(y, k, n).transpose();
    if (y.requires_grad) grad_matrix(y, k, n).noalias() += value_matrix(x, m, k).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  MatrixMap(out.data(), c, r) = a.matrix().transpose();
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    grad_matrix(*self.inputs[0], r, c) += ConstMatrixMap(self.grad.data(), c, r).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  const auto in = w.dim(0), out_dim = w.dim(1);
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  const auto rows = x.size() / in;
  std::vector<double> out(rows * out_dim);
  MatrixMap y(out.data(), rows, out_dim);
  y.noalias() = x.matrix() * w.matrix();
  if (has_bias) y.rowwise() += b.matrix().row(0);
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result(std::move(shape), std::move(out), std::move(inputs),
                     [rows, in, out_dim, has_bias](Node& self) {
                       Node& xn = *self.inputs[0];
                       Node& wn = *self.inputs[1];
                       const ConstMatrixMap g(self.grad.data(), rows, out_dim);
                       if (xn.requires_grad) {
                         grad_matrix(xn, rows, in).noalias() +=
                             g * value_matrix(wn, in, out_dim).transpose();
                       }
                       if (wn.requires_grad) {
                         grad_matrix(wn, in, out_dim).noalias() +=
                             value_matrix(xn, rows, in).transpose() * g;
                       }
                       if (has_bias && self.inputs[2]->requires_grad) {
                         grad_matrix(*self.inputs[2], 1, out_dim) += g.colwise().sum();
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const Tensor& a, const Tensor& b, std::ptrdiff_t axis) {
  if (a.rank() != b.rank()) {
    throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const auto ax = normalize_axis(axis, a.rank(), "concat");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != ax && a.shape()[i] != b.shape()[i]) {
      throw ShapeError("concat: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }
  const auto sa = split_at(a.shape(), ax);
  const auto sb = split_at(b.shape(), ax);
  const auto ca = sa.extent * sa.inner, cb = sb.extent * sb.inner;
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t o = 0; o < sa.outer; ++o) {
    out.insert(out.end(), av.begin() + o * ca, av.begin() + (o + 1) * ca);
    out.insert(out.end(), bv.begin() + o * cb, bv.begin() + (o + 1) * cb);
  }
  Shape shape = a.shape();
  shape[ax] += b.shape()[ax];
  return make_result(std::move(shape), std::move(out), {a, b},
                     [outer = sa.outer, ca, cb](Node& self) {
                       Node& x = *self.inputs[0];
                       Node& y = *self.inputs[1];
                       for (std::size_t o = 0; o < outer; ++o) {
                         const double* g = self.grad.data() + o * (ca + cb);
                         if (x.requires_grad) {
                           auto& gx = x.ensure_grad();
                           for (std::size_t i = 0; i < ca; ++i) gx[o * ca + i] += g[i];
                         }
                         if (y.requires_grad) {
                           auto& gy = y.ensure_grad();
                           for (std::size_t i = 0; i < cb; ++i) gy[o * cb + i] += g[ca + i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const auto ax = normalize_axis(axis, a.rank(), "slice");
  if (begin >= end || end > a.shape()[ax]) {
    throw IndexError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  }
  const auto s = split_at(a.shape(), ax);
  const auto width = (end - begin) * s.inner;
  const auto stride = s.extent * s.inner;
  const auto offset = begin * s.inner;
  std::vector<double> out;
  out.reserve(s.outer * width);
  const auto av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const auto first = av.begin() + o * stride + offset;
    out.insert(out.end(), first, first + width);
  }
  Shape shape = a.shape();
  shape[ax] = end - begin;
  return make_result(std::move(shape), std::move(out), {a},
                     [outer = s.outer, width, stride, offset](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < width; ++i) {
                           g[o * stride + offset + i] += self.grad[o * width + i];
                         }
                       }
                     });
}

Tensor expand(const Tensor& a, Shape shape) {
  if (!is_suffix(a.shape(), shape)) {
    throw ShapeError("expand: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  const auto m = a.size();
  const auto n = numel(shape);
  std::vector<double> out(n);
  const auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i % m];
  return make_result(std::move(shape), std::move(out), {a}, [m](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % m] += self.grad[i];
  });
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
  const auto cols = a.shape().back();
  const auto nrows = a.size() / cols;
  if (rows.empty()) throw ShapeError("select_rows: empty row list");
  std::vector<double> out(rows.size() * cols);
  const auto av = a.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= nrows) {
      throw IndexError("select_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       std::to_string(nrows) + " rows");
    }
    std::copy_n(av.begin() + rows[r] * cols, cols, out.begin() + r * cols);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), cols}, std::move(out), {a},
                     [idx = std::move(idx), cols](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           g[idx[r] * cols + c] += self.grad[r * cols + c];
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const auto ax = normalize_axis(axis, x.rank(), "softmax");
  const auto s = split_at(x.shape(), ax);
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const auto base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const auto base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          const auto i = base + j * s.inner;
          dot += self.grad[i] * self.value[i];
        }
        for (std::size_t j = 0; j < s.extent; ++j) {
          const auto i = base + j * s.inner;
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis) {
  const auto ax = normalize_axis(axis, x.rank(), "log_softmax");
  const auto s = split_at(x.shape(), ax);
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const auto base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) z += std::exp(xv[base + j * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.extent; ++j) {
        out[base + j * s.inner] = xv[base + j * s.inner] - lse;
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const auto base = o * s.extent * s.inner + in;
        double total = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) total += self.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const auto i = base + j * s.inner;
          g[i] += self.grad[i] - std::exp(self.value[i]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " with gain " +
                     shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  }
  const auto rows = x.size() / d;
  std::vector<double> out(x.size());
  // Normalised input and 1/std per row, kept for the backward pass.
  std::vector<double> xhat(x.size());
  std::vector<double> rstd(rows);
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& xn = *self.inputs[0];
        Node& gn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        if (gn.requires_grad) {
          auto& g = gn.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i] * xhat[i];
        }
        if (bn.requires_grad) {
          auto& g = bn.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
        }
        if (xn.requires_grad) {
          auto& g = xn.ensure_grad();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = self.grad[r * d + j] * gn.value[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = self.grad[r * d + j] * gn.value[j];
              g[r * d + j] += rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy expects [n x classes] logits, got " +
                     shape_str(logits.shape()));
  }
  const auto n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " out of range for " + std::to_string(k) + " classes");
    }
  }
  const auto lv = logits.values();
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      z += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    loss += mx + std::log(z) - row[targets[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return make_result({1}, {loss}, {logits},
                     [n, k, probs = std::move(probs), t = std::move(t)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       const double s = self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < k; ++j) g[i * k + j] += s * probs[i * k + j];
                         g[i * k + t[i]] -= s;
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x) {
  const auto d = x.shape().back();
  const auto rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> norms(rows);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * xv[r * d + j];
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) {
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) +
                                 " has zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / norms[r];
  }
  return make_result(x.shape(), std::move(out), {x},
                     [d, rows, norms = std::move(norms)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           dot += self.grad[r * d + j] * self.value[r * d + j];
                         }
                         for (std::size_t j = 0; j < d; ++j) {
                           g[r * d + j] +=
                               (self.grad[r * d + j] - self.value[r * d + j] * dot) / norms[r];
                         }
                       }
                     });
}

namespace {

struct AttentionDims {
  std::size_t batch, lq, lk, d, heads, dh;
};

AttentionDims attention_dims(const Tensor& q, const Tensor& k, std::size_t heads) {
  auto dims3 = [](const Tensor& t) -> std::array<std::size_t, 3> {
    if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
    if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
    throw ShapeError("attention expects [B x L x d] or [L x d], got " + shape_str(t.shape()));
  };
  const auto qd = dims3(q);
  const auto kd = dims3(k);
  if (qd[0] != kd[0] || qd[2] != kd[2]) {
    throw ShapeError("attention: query " + shape_str(q.shape()) + " vs key " +
                     shape_str(k.shape()));
  }
  if (heads == 0 || qd[2] % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(qd[2]) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  return {qd[0], qd[1], kd[1], qd[2], heads, qd[2] / heads};
}

using StridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using MutStridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

// Fills probs with [B, heads, Lq, Lk] attention probabilities.
void attention_forward_probs(const AttentionDims& a, const double* q, const double* k,
                             bool causal, std::vector<double>& probs) {
  probs.assign(a.batch * a.heads * a.lq * a.lk, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(a.dh));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(a.d));
  for (std::size_t b = 0; b < a.batch; ++b) {
    for (std::size_t h = 0; h < a.heads; ++h) {
      StridedMap qh(q + b * a.lq * a.d + h * a.dh, a.lq, a.dh, stride);
      StridedMap kh(k + b * a.lk * a.d + h * a.dh, a.lk, a.dh, stride);
      MatrixMap p(probs.data() + (b * a.heads + h) * a.lq * a.lk, a.lq, a.lk);
      p.noalias() = (qh * kh.transpose()) * scale;
      for (std::size_t i = 0; i < a.lq; ++i) {
        const std::size_t visible = causal ? std::min(i + 1, a.lk) : a.lk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, p(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          z += p(i, j);
        }
        for (std::size_t j = 0; j < visible; ++j) p(i, j) /= z;
        for (std::size_t j = visible; j < a.lk; ++j) p(i, j) = 0.0;
      }
    }
  }
}

}  // namespace

std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads,
                                            bool causal) {
  const auto a = attention_dims(q, k, heads);
  std::vector<double> probs;
  attention_forward_probs(a, q.values().data(), k.values().data(), causal, probs);
  return probs;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 bool causal) {
  const auto a = attention_dims(q, k, heads);
  if (v.shape() != k.shape()) {
    throw ShapeError("attention: key " + shape_str(k.shape()) + " vs value " +
                     shape_str(v.shape()));
  }
  std::vector<double> probs;
  attention_forward_probs(a, q.values().data(), k.values().data(), causal, probs);
  std::vector<double> out(q.size());
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(a.d));
  for (std::size_t b = 0; b < a.batch; ++b) {
    for (std::size_t h = 0; h < a.heads; ++h) {
      StridedMap vh(v.values().data() + b * a.lk * a.d + h * a.dh, a.lk, a.dh, stride);
      ConstMatrixMap p(probs.data() + (b * a.heads + h) * a.lq * a.lk, a.lq, a.lk);
      MutStridedMap oh(out.data() + b * a.lq * a.d + h * a.dh, a.lq, a.dh, stride);
      oh.noalias() = p * vh;
    }
  }
  return make_result(q.shape(), std::move(out), {q, k, v},
                     [a, probs = std::move(probs)](Node& self) {
                       Node& qn = *self.inputs[0];
                       Node& kn = *self.inputs[1];
                       Node& vn = *self.inputs[2];
                       const double scale = 1.0 / std::sqrt(static_cast<double>(a.dh));
                       const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(a.d));
                       double* gq = qn.requires_grad ? qn.ensure_grad().data() : nullptr;
                       double* gk = kn.requires_grad ? kn.ensure_grad().data() : nullptr;
                       double* gv = vn.requires_grad ? vn.ensure_grad().data() : nullptr;
                       RowMatrix dp(a.lq, a.lk), ds(a.lq, a.lk);
                       for (std::size_t b = 0; b < a.batch; ++b) {
                         for (std::size_t h = 0; h < a.heads; ++h) {
                           const auto qoff = b * a.lq * a.d + h * a.dh;
                           const auto koff = b * a.lk * a.d + h * a.dh;
                           StridedMap go(self.grad.data() + qoff, a.lq, a.dh, stride);
                           StridedMap qh(qn.value.data() + qoff, a.lq, a.dh, stride);
                           StridedMap kh(kn.value.data() + koff, a.lk, a.dh, stride);
                           StridedMap vh(vn.value.data() + koff, a.lk, a.dh, stride);
                           ConstMatrixMap p(probs.data() + (b * a.heads + h) * a.lq * a.lk, a.lq,
                                            a.lk);
                           if (gv) {
                             MutStridedMap(gv + koff, a.lk, a.dh, stride).noalias() +=
                                 p.transpose() * go;
                           }
                           if (!gq && !gk) continue;
                           dp.noalias() = go * vh.transpose();
                           const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
                           ds = p.array() * (dp.colwise() - rowdot).array();
                           if (gq) {
                             MutStridedMap(gq + qoff, a.lq, a.dh, stride).noalias() +=
                                 (ds * kh) * scale;
                           }
                           if (gk) {
                             MutStridedMap(gk + koff, a.lk, a.dh, stride).noalias() +=
                                 (ds.transpose() * qh) * scale;
                           }
                         }
                       }
                     });
}

}  // namespace irra
