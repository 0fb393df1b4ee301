#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <vector>

#include "cghoi/diffkit/tape.hpp"

// Differentiable primitives over rank-2 [rows, cols] tensors (rank 0/1 are
// accepted where noted). Every op checks shapes, computes the forward value
// and records its vector-Jacobian product.
namespace cghoi::diffkit {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline MatMap as_mat(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

namespace detail {

inline void require(bool ok, const std::string& op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline void require_rank2(const std::string& op, const Shape& a) {
  if (a.size() != 2) throw ShapeError(op + ": expected a rank-2 tensor, got " + shape_str(a));
}

inline bool is_row_vector(const Shape& s, std::size_t cols) {
  return (s.size() == 1 && s[0] == cols) || (s.size() == 2 && s[0] == 1 && s[1] == cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  detail::require_rank2("matmul", x.shape());
  detail::require_rank2("matmul", w.shape());
  detail::require(x.cols() == w.rows(), "matmul", x.shape(), w.shape());
  Tensor y({x.rows(), w.cols()});
  as_mat(y).noalias() = as_mat(x) * as_mat(w);
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) as_mat(t.grad_buffer(a)).noalias() += as_mat(g) * as_mat(t.value(b.id)).transpose();
    if (t.requires_grad(b)) as_mat(t.grad_buffer(b)).noalias() += as_mat(t.value(a.id)).transpose() * as_mat(g);
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  detail::require_rank2("matmul_nt", x.shape());
  detail::require_rank2("matmul_nt", w.shape());
  detail::require(x.cols() == w.cols(), "matmul_nt", x.shape(), w.shape());
  Tensor y({x.rows(), w.rows()});
  as_mat(y).noalias() = as_mat(x) * as_mat(w).transpose();
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) as_mat(t.grad_buffer(a)).noalias() += as_mat(g) * as_mat(t.value(b.id));
    if (t.requires_grad(b)) as_mat(t.grad_buffer(b)).noalias() += as_mat(g).transpose() * as_mat(t.value(a.id));
  });
}

inline Var transpose(Var a) {
  const Tensor& x = a.value();
  detail::require_rank2("transpose", x.shape());
  Tensor y({x.cols(), x.rows()});
  as_mat(y) = as_mat(x).transpose();
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    as_mat(t.grad_buffer(a)) += as_mat(g).transpose();
  });
}

inline Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  detail::require(x.shape() == z.shape(), "add", x.shape(), z.shape());
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += z[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor& gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  detail::require(x.shape() == z.shape(), "sub", x.shape(), z.shape());
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= z[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  detail::require(x.shape() == z.shape(), "mul", x.shape(), z.shape());
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= z[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      const Tensor& zv = t.value(b.id);
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * zv[i];
    }
    if (t.requires_grad(b)) {
      const Tensor& xv = t.value(a.id);
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
    }
  });
}

// x[n,m] + b where b is [m] or [1,m], added to every row.
inline Var add_row(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& r = b.value();
  detail::require_rank2("add_row", x.shape());
  detail::require(detail::is_row_vector(r.shape(), x.cols()), "add_row", x.shape(), r.shape());
  Tensor y = x;
  const std::size_t m = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] += r[j];
  }
  return a.tape->record(std::move(y), {a, b}, [a, b, m](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i];
    }
  });
}

// x[n,m] * b where b is [m] or [1,m], scaling every row.
inline Var mul_row(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& r = b.value();
  detail::require_rank2("mul_row", x.shape());
  detail::require(detail::is_row_vector(r.shape(), x.cols()), "mul_row", x.shape(), r.shape());
  Tensor y = x;
  const std::size_t m = x.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= r[i % m];
  return a.tape->record(std::move(y), {a, b}, [a, b, m](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(a.id);
    const Tensor& rv = t.value(b.id);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * rv[i % m];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i] * xv[i];
    }
  });
}

inline Var scale(Var a, float s) {
  Tensor y = a.value();
  for (float& v : y.values()) v *= s;
  return a.tape->record(std::move(y), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

inline Var add_scalar(Var a, float s) {
  Tensor y = a.value();
  for (float& v : y.values()) v += s;
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

inline Var silu(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / (1.0f + std::exp(-x[i]));
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(a.id);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float s = 1.0f / (1.0f + std::exp(-xv[i]));
      ga[i] += g[i] * s * (1.0f + xv[i] * (1.0f - s));
    }
  });
}

inline Var relu(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(a.id);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += xv[i] > 0.0f ? g[i] : 0.0f;
  });
}

// Subgradient 0 at the kink.
inline Var abs(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::abs(x[i]);
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(a.id);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += xv[i] > 0.0f ? g[i] : (xv[i] < 0.0f ? -g[i] : 0.0f);
  });
}

inline Var square(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(a.id);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0f * xv[i] * g[i];
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, float s) { return scale(a, s); }
inline Var operator*(float s, Var a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Reductions (accumulated in double, fixed order)

inline Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (float v : x.values()) s += v;
  return a.tape->record(Tensor::scalar(static_cast<float>(s)), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (float& v : ga.values()) v += g[0];
  });
}

inline Var mean(Var a) {
  const Tensor& x = a.value();
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (float v : x.values()) s += v;
  const float inv = 1.0f / static_cast<float>(x.size());
  return a.tape->record(Tensor::scalar(static_cast<float>(s / static_cast<double>(x.size()))), {a},
                        [a, inv](Tape& t, const Tensor& g) {
                          Tensor& ga = t.grad_buffer(a);
                          for (float& v : ga.values()) v += g[0] * inv;
                        });
}

// Mean over rows: [n,m] -> [1,m]. An empty input yields zeros.
inline Var mean_rows(Var a) {
  const Tensor& x = a.value();
  detail::require_rank2("mean_rows", x.shape());
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y({1, m});
  if (n > 0) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x[i * m + j];
      y[j] = static_cast<float>(s / static_cast<double>(n));
    }
  }
  return a.tape->record(std::move(y), {a}, [a, n, m](Tape& t, const Tensor& g) {
    if (n == 0) return;
    Tensor& ga = t.grad_buffer(a);
    const float inv = 1.0f / static_cast<float>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j] * inv;
  });
}

// Max over rows: [n,m] -> [1,m]; ties go to the first row.
inline Var max_rows(Var a) {
  const Tensor& x = a.value();
  detail::require_rank2("max_rows", x.shape());
  const std::size_t n = x.rows(), m = x.cols();
  if (n == 0) throw ShapeError("max_rows of an empty tensor");
  Tensor y({1, m});
  std::vector<std::size_t> arg(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    float best = x[j];
    for (std::size_t i = 1; i < n; ++i) {
      if (x[i * m + j] > best) {
        best = x[i * m + j];
        arg[j] = i;
      }
    }
    y[j] = best;
  }
  return a.tape->record(std::move(y), {a}, [a, arg = std::move(arg), m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t j = 0; j < m; ++j) ga[arg[j] * m + j] += g[j];
  });
}

// ---------------------------------------------------------------------------
// Structure

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  const Shape& s0 = parts[0].shape();
  detail::require_rank2("concat", s0);
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    detail::require_rank2("concat", s);
    detail::require(s[1 - axis] == s0[1 - axis], "concat", s0, s);
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  Tensor y(out_shape);
  const std::size_t out_cols = out_shape[1];
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    offsets.push_back(offset);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const std::size_t r = axis == 0 ? i + offset : i;
        const std::size_t c = axis == 1 ? j + offset : j;
        y[r * out_cols + c] = x[i * x.cols() + j];
      }
    }
    offset += x.shape()[axis];
  }
  Tape* tape = parts[0].tape;
  std::vector<Var> captured = parts;
  return tape->record(std::move(y), std::span<const Var>(parts), [captured, offsets, axis, out_cols](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < captured.size(); ++k) {
      const Var& p = captured[k];
      if (!t.requires_grad(p)) continue;
      Tensor& gp = t.grad_buffer(p);
      const std::size_t rows = gp.rows(), cols = gp.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          const std::size_t r = axis == 0 ? i + offsets[k] : i;
          const std::size_t c = axis == 1 ? j + offsets[k] : j;
          gp[i * cols + j] += g[r * out_cols + c];
        }
      }
    }
  });
}

inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  detail::require_rank2("slice", x.shape());
  if (axis > 1 || begin > end || end > x.shape()[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor y(out_shape);
  const std::size_t in_cols = x.cols(), out_cols = out_shape[1];
  for (std::size_t i = 0; i < out_shape[0]; ++i) {
    for (std::size_t j = 0; j < out_cols; ++j) {
      const std::size_t r = axis == 0 ? i + begin : i;
      const std::size_t c = axis == 1 ? j + begin : j;
      y[i * out_cols + j] = x[r * in_cols + c];
    }
  }
  return a.tape->record(std::move(y), {a}, [a, axis, begin, in_cols, out_shape](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < out_shape[0]; ++i) {
      for (std::size_t j = 0; j < out_shape[1]; ++j) {
        const std::size_t r = axis == 0 ? i + begin : i;
        const std::size_t c = axis == 1 ? j + begin : j;
        ga[r * in_cols + c] += g[i * out_shape[1] + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Neural-network primitives

// Rows of `table` ([V,d]) selected by ids -> [n,d].
inline Var embedding(Var table, const std::vector<std::uint32_t>& ids) {
  const Tensor& w = table.value();
  detail::require_rank2("embedding", w.shape());
  const std::size_t d = w.cols();
  Tensor y({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= w.rows()) {
      throw ValidationError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                            std::to_string(w.rows()));
    }
    std::copy_n(w.data() + ids[i] * d, d, y.data() + i * d);
  }
  return table.tape->record(std::move(y), {table}, [table, ids, d](Tape& t, const Tensor& g) {
    Tensor& gw = t.grad_buffer(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gw[ids[i] * d + j] += g[i * d + j];
  });
}

// Softmax along `axis` of a rank-2 tensor.
inline Var softmax(Var a, std::size_t axis = 1) {
  const Tensor& x = a.value();
  detail::require_rank2("softmax", x.shape());
  if (axis > 1) throw ShapeError("softmax: axis must be 0 or 1");
  const std::size_t n = x.rows(), m = x.cols();
  const std::size_t outer = axis == 1 ? n : m, inner = axis == 1 ? m : n;
  auto at = [&](std::size_t o, std::size_t k) { return axis == 1 ? o * m + k : k * m + o; };
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t k = 0; k < inner; ++k) mx = std::max(mx, x[at(o, k)]);
    double s = 0.0;
    for (std::size_t k = 0; k < inner; ++k) {
      const float e = std::exp(x[at(o, k)] - mx);
      y[at(o, k)] = e;
      s += e;
    }
    const float inv = static_cast<float>(1.0 / s);
    for (std::size_t k = 0; k < inner; ++k) y[at(o, k)] *= inv;
  }
  Tensor saved = y;
  return a.tape->record(std::move(y), {a}, [a, saved = std::move(saved), axis, n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const std::size_t outer = axis == 1 ? n : m, inner = axis == 1 ? m : n;
    auto at = [&](std::size_t o, std::size_t k) { return axis == 1 ? o * m + k : k * m + o; };
    for (std::size_t o = 0; o < outer; ++o) {
      double dot = 0.0;
      for (std::size_t k = 0; k < inner; ++k) dot += g[at(o, k)] * saved[at(o, k)];
      for (std::size_t k = 0; k < inner; ++k) {
        ga[at(o, k)] += saved[at(o, k)] * (g[at(o, k)] - static_cast<float>(dot));
      }
    }
  });
}

// 1D convolution over rows (time) with "same" zero padding and stride 1.
// x: [F, Cin], w: [K*Cin, Cout] (tap-major), b: [Cout].
inline Var conv1d(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank2("conv1d", xv.shape());
  detail::require_rank2("conv1d", wv.shape());
  const std::size_t frames = xv.rows(), cin = xv.cols();
  if (cin == 0 || wv.rows() % cin != 0) detail::require(false, "conv1d", xv.shape(), wv.shape());
  const std::size_t k = wv.rows() / cin;
  if (k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t cout = wv.cols();
  detail::require(detail::is_row_vector(b.shape(), cout), "conv1d", wv.shape(), b.shape());
  const auto half = static_cast<std::ptrdiff_t>(k / 2);

  Tensor cols({frames, k * cin});
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t tap = 0; tap < k; ++tap) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(f) + static_cast<std::ptrdiff_t>(tap) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      std::copy_n(xv.data() + static_cast<std::size_t>(src) * cin, cin, cols.data() + f * k * cin + tap * cin);
    }
  }
  Tensor y({frames, cout});
  as_mat(y).noalias() = as_mat(cols) * as_mat(wv);
  const Tensor& bv = b.value();
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t c = 0; c < cout; ++c) y[f * cout + c] += bv[c];

  Tape* tape = x.tape;
  return tape->record(std::move(y), {x, w, b},
                      [x, w, b, cols = std::move(cols), frames, cin, k, cout, half](Tape& t, const Tensor& g) {
                        if (t.requires_grad(w)) as_mat(t.grad_buffer(w)).noalias() += as_mat(cols).transpose() * as_mat(g);
                        if (t.requires_grad(b)) {
                          Tensor& gb = t.grad_buffer(b);
                          for (std::size_t f = 0; f < frames; ++f)
                            for (std::size_t c = 0; c < cout; ++c) gb[c] += g[f * cout + c];
                        }
                        if (t.requires_grad(x)) {
                          Tensor dcols({frames, k * cin});
                          as_mat(dcols).noalias() = as_mat(g) * as_mat(t.value(w.id)).transpose();
                          Tensor& gx = t.grad_buffer(x);
                          for (std::size_t f = 0; f < frames; ++f) {
                            for (std::size_t tap = 0; tap < k; ++tap) {
                              const std::ptrdiff_t src =
                                  static_cast<std::ptrdiff_t>(f) + static_cast<std::ptrdiff_t>(tap) - half;
                              if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
                              const float* d = dcols.data() + f * k * cin + tap * cin;
                              float* o = gx.data() + static_cast<std::size_t>(src) * cin;
                              for (std::size_t c = 0; c < cin; ++c) o[c] += d[c];
                            }
                          }
                        }
                      });
}

// Group normalization of [F, C]: statistics per channel group over all
// frames, then per-channel affine.
inline Var group_norm(Var x, std::size_t groups, Var gamma, Var beta, float eps = 1e-5f) {
  const Tensor& xv = x.value();
  detail::require_rank2("group_norm", xv.shape());
  const std::size_t frames = xv.rows(), ch = xv.cols();
  if (groups == 0 || ch % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(ch) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  detail::require(detail::is_row_vector(gamma.shape(), ch), "group_norm", xv.shape(), gamma.shape());
  detail::require(detail::is_row_vector(beta.shape(), ch), "group_norm", xv.shape(), beta.shape());
  const std::size_t per = ch / groups;
  const double count = static_cast<double>(frames * per);
  Tensor xhat(xv.shape());
  std::vector<float> inv_std(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double s = 0.0;
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t c = gi * per; c < (gi + 1) * per; ++c) s += xv[f * ch + c];
    const double mu = s / count;
    double v = 0.0;
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t c = gi * per; c < (gi + 1) * per; ++c) {
        const double d = xv[f * ch + c] - mu;
        v += d * d;
      }
    const double is = 1.0 / std::sqrt(v / count + eps);
    inv_std[gi] = static_cast<float>(is);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t c = gi * per; c < (gi + 1) * per; ++c)
        xhat[f * ch + c] = static_cast<float>((xv[f * ch + c] - mu) * is);
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor y(xv.shape());
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t c = 0; c < ch; ++c) y[f * ch + c] = xhat[f * ch + c] * gv[c] + bv[c];

  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), frames, ch, per, groups](
          Tape& t, const Tensor& g) {
        if (t.requires_grad(gamma) || t.requires_grad(beta)) {
          for (std::size_t c = 0; c < ch; ++c) {
            double dg = 0.0, db = 0.0;
            for (std::size_t f = 0; f < frames; ++f) {
              dg += g[f * ch + c] * xhat[f * ch + c];
              db += g[f * ch + c];
            }
            if (t.requires_grad(gamma)) t.grad_buffer(gamma)[c] += static_cast<float>(dg);
            if (t.requires_grad(beta)) t.grad_buffer(beta)[c] += static_cast<float>(db);
          }
        }
        if (!t.requires_grad(x)) return;
        const Tensor& gv = t.value(gamma.id);
        Tensor& gx = t.grad_buffer(x);
        const double n = static_cast<double>(frames * per);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t c = gi * per; c < (gi + 1) * per; ++c) {
              const double d = g[f * ch + c] * gv[c];
              sum_d += d;
              sum_dx += d * xhat[f * ch + c];
            }
          for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t c = gi * per; c < (gi + 1) * per; ++c) {
              const double d = g[f * ch + c] * gv[c];
              gx[f * ch + c] +=
                  static_cast<float>(inv_std[gi] * (d - sum_d / n - xhat[f * ch + c] * sum_dx / n));
            }
        }
      });
}

// Average pooling of row pairs: [F, C] -> [F/2, C]. F must be even.
inline Var avg_pool2(Var a) {
  const Tensor& x = a.value();
  detail::require_rank2("avg_pool2", x.shape());
  const std::size_t n = x.rows(), m = x.cols();
  if (n % 2 != 0) throw ShapeError("avg_pool2: odd row count in " + shape_str(x.shape()));
  Tensor y({n / 2, m});
  for (std::size_t i = 0; i < n / 2; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = 0.5f * (x[2 * i * m + j] + x[(2 * i + 1) * m + j]);
  return a.tape->record(std::move(y), {a}, [a, n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += 0.5f * g[(i / 2) * m + j];
  });
}

// Nearest-neighbour upsampling of rows: [F, C] -> [2F, C].
inline Var upsample2(Var a) {
  const Tensor& x = a.value();
  detail::require_rank2("upsample2", x.shape());
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y({2 * n, m});
  for (std::size_t i = 0; i < 2 * n; ++i) std::copy_n(x.data() + (i / 2) * m, m, y.data() + i * m);
  return a.tape->record(std::move(y), {a}, [a, n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < 2 * n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[(i / 2) * m + j] += g[i * m + j];
  });
}

// Row-wise L2 normalization.
inline Var l2_normalize_rows(Var a, float eps = 1e-12f) {
  const Tensor& x = a.value();
  detail::require_rank2("l2_normalize_rows", x.shape());
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y(x.shape());
  std::vector<float> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += static_cast<double>(x[i * m + j]) * x[i * m + j];
    norms[i] = static_cast<float>(std::sqrt(s + eps));
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = x[i * m + j] / norms[i];
  }
  Tensor saved = y;
  return a.tape->record(std::move(y), {a}, [a, saved = std::move(saved), norms = std::move(norms), n, m](
                                               Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * saved[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        ga[i * m + j] += (g[i * m + j] - static_cast<float>(dot) * saved[i * m + j]) / norms[i];
    }
  });
}

// Convenience: x W + b.
inline Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

}  // namespace cghoi::diffkit
