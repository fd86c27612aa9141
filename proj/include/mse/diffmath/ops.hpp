#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mse/diffmath/tensor.hpp"

namespace mse::diffmath {

namespace detail {

// Tape shared by the grad-requiring inputs, or nullptr when none needs grad.
inline Tape* tape_of(std::initializer_list<const Tensor*> inputs) {
  Tape* found = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->requires_grad()) continue;
    if (found && t->tape() != found) throw StateError("operands recorded on different tapes");
    found = t->tape();
  }
  return found;
}

inline Tape* tape_of(std::span<const Tensor> inputs) {
  Tape* found = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    if (found && t.tape() != found) throw StateError("operands recorded on different tapes");
    found = t.tape();
  }
  return found;
}

inline Tensor finish(Tape* tape, Shape shape, std::vector<double> values, Tape::BackwardFn fn) {
  if (tape == nullptr) return Tensor::constant(std::move(shape), std::move(values));
  return tape->record(std::move(shape), std::move(values), std::move(fn));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

/// Matrix product a[r x k] * b[k x c].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(r * c, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = out.data() + i * c;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += aip * brow[j];
    }
  }
  Tape* tape = detail::tape_of({&a, &b});
  return detail::finish(tape, {r, c}, std::move(out), [a, b, r, k, c](const std::vector<double>& g) {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    if (a.requires_grad()) {
      auto& ga = a.node().grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g.data() + i * c;
          const double* brow = bv + p * c;
          for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.node().grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          const double* grow = g.data() + i * c;
          double* gbrow = gb.data() + p * c;
          for (std::size_t j = 0; j < c; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

/// a[r x k] * b[c x k]^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t r = a.rows(), k = a.cols(), c = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt inner extents differ: " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(r * c);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * c + j] = acc;
    }
  }
  Tape* tape = detail::tape_of({&a, &b});
  return detail::finish(tape, {r, c}, std::move(out), [a, b, r, k, c](const std::vector<double>& g) {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    if (a.requires_grad()) {
      auto& ga = a.node().grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double gij = g[i * c + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
        }
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.node().grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double gij = g[i * c + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tape* tape = detail::tape_of({&a, &b});
  return detail::finish(tape, a.shape(), std::move(out), [a, b](const std::vector<double>& g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto& gt = t->node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

/// x + b where b is x-shaped, a [1 x c] row, an [r x 1] column or a [1 x 1] scalar.
inline Tensor add_broadcast(const Tensor& x, const Tensor& b) {
  if (b.shape() == x.shape()) return add(x, b);
  detail::require_matrix(x, "add_broadcast");
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t br = b.rows(), bc = b.cols();
  const bool row = br == 1 && bc == c;
  const bool col = br == r && bc == 1;
  const bool one = b.size() == 1;
  if (!(row || col || one)) {
    throw DimensionError("add_broadcast cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(x.shape()));
  }
  auto bidx = [=](std::size_t i, std::size_t j) { return one ? 0 : (row ? j : i); };
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[bidx(i, j)];
  }
  Tape* tape = detail::tape_of({&x, &b});
  return detail::finish(tape, x.shape(), std::move(out), [x, b, r, c, bidx](const std::vector<double>& g) {
    if (x.requires_grad()) {
      auto& gx = x.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.node().grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gb[bidx(i, j)] += g[i * c + j];
      }
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x[i];
  Tape* tape = detail::tape_of({&x});
  return detail::finish(tape, x.shape(), std::move(out), [x, s](const std::vector<double>& g) {
    auto& gx = x.node().grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

/// Elementwise product.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tape* tape = detail::tape_of({&a, &b});
  return detail::finish(tape, a.shape(), std::move(out), [a, b](const std::vector<double>& g) {
    if (a.requires_grad()) {
      auto& ga = a.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
}

enum class Unary { sigmoid, tanh, gelu, exp, log };

inline double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double gaussian_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline Tensor unary(const Tensor& x, Unary f) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    switch (f) {
      case Unary::sigmoid:
        out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        break;
      case Unary::tanh:
        out[i] = std::tanh(v);
        break;
      case Unary::gelu:
        out[i] = v * gaussian_cdf(v);
        break;
      case Unary::exp:
        out[i] = std::exp(v);
        break;
      case Unary::log:
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
        out[i] = std::log(v);
        break;
    }
  }
  Tape* tape = detail::tape_of({&x});
  if (tape == nullptr) return Tensor::constant(x.shape(), std::move(out));
  std::vector<double> y = out;
  return tape->record(x.shape(), std::move(out), [x, f, y = std::move(y)](const std::vector<double>& g) {
    auto& gx = x.node().grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      switch (f) {
        case Unary::sigmoid:
          d = y[i] * (1.0 - y[i]);
          break;
        case Unary::tanh:
          d = 1.0 - y[i] * y[i];
          break;
        case Unary::gelu:
          d = gaussian_cdf(x[i]) + x[i] * gaussian_pdf(x[i]);
          break;
        case Unary::exp:
          d = y[i];
          break;
        case Unary::log:
          d = 1.0 / x[i];
          break;
      }
      gx[i] += g[i] * d;
    }
  });
}

inline Tensor sigmoid(const Tensor& x) { return unary(x, Unary::sigmoid); }
inline Tensor tanh(const Tensor& x) { return unary(x, Unary::tanh); }
inline Tensor gelu(const Tensor& x) { return unary(x, Unary::gelu); }
inline Tensor exp(const Tensor& x) { return unary(x, Unary::exp); }
inline Tensor log(const Tensor& x) { return unary(x, Unary::log); }

/// Sum of all elements as a scalar of shape [1].
inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tape* tape = detail::tape_of({&x});
  return detail::finish(tape, {1}, {acc}, [x](const std::vector<double>& g) {
    auto& gx = x.node().grad_buffer();
    for (double& v : gx) v += g[0];
  });
}

/// Column means of x[l x d] as a [1 x d] row.
inline Tensor reduce_mean_rows(const Tensor& x) {
  detail::require_matrix(x, "reduce_mean_rows");
  const std::size_t l = x.rows(), d = x.cols();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  }
  for (double& v : out) v /= static_cast<double>(l);
  Tape* tape = detail::tape_of({&x});
  return detail::finish(tape, {1, d}, std::move(out), [x, l, d](const std::vector<double>& g) {
    auto& gx = x.node().grad_buffer();
    const double inv = 1.0 / static_cast<double>(l);
    for (std::size_t i = 0; i < l; ++i) {
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
    }
  });
}

/// -log softmax(logits)[target] for a single row of logits ([V] or [1 x V]).
namespace detail {
// -log softmax(z)[target]; log1p keeps precision when the target dominates.
inline double row_nll(const double* z, std::size_t v, std::size_t target, double& lse) {
  std::size_t top = 0;
  for (std::size_t j = 1; j < v; ++j) {
    if (z[j] > z[top]) top = j;
  }
  const double m = z[top];
  double rest = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    if (j != top) rest += std::exp(z[j] - m);
  }
  const double tail = std::log1p(rest);
  lse = m + tail;
  return (m - z[target]) + tail;
}
}  // namespace detail

inline Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.rows() != 1) {
    throw DimensionError("softmax_cross_entropy expects one row of logits, got " + shape_str(logits.shape()));
  }
  const std::size_t v = logits.size();
  if (target >= v) {
    throw IndexError("target id " + std::to_string(target) + " outside vocabulary of " + std::to_string(v));
  }
  double lse = 0.0;
  const double loss = detail::row_nll(logits.values().data(), v, target, lse);
  Tape* tape = detail::tape_of({&logits});
  return detail::finish(tape, {1}, {loss}, [logits, target, lse](const std::vector<double>& g) {
    auto& gl = logits.node().grad_buffer();
    for (std::size_t i = 0; i < gl.size(); ++i) {
      const double p = std::exp(logits[i] - lse);
      gl[i] += g[0] * (p - (i == target ? 1.0 : 0.0));
    }
  });
}

/// Sum over k of -log softmax(logits[rows[k]])[targets[k]], as one scalar.
inline Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> rows,
                                 std::span<const int> targets) {
  detail::require_matrix(logits, "cross_entropy_rows");
  if (rows.size() != targets.size()) throw DimensionError("cross_entropy_rows: rows/targets length differ");
  const std::size_t v = logits.cols();
  std::vector<double> lse(rows.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= logits.rows()) {
      throw IndexError("cross_entropy_rows: row " + std::to_string(rows[k]) + " outside " +
                       shape_str(logits.shape()));
    }
    if (targets[k] < 0 || static_cast<std::size_t>(targets[k]) >= v) {
      throw IndexError("target id " + std::to_string(targets[k]) + " outside vocabulary of " + std::to_string(v));
    }
    const double* z = logits.values().data() + rows[k] * v;
    loss += detail::row_nll(z, v, static_cast<std::size_t>(targets[k]), lse[k]);
  }
  Tape* tape = detail::tape_of({&logits});
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  std::vector<int> tv(targets.begin(), targets.end());
  return detail::finish(tape, {1}, {loss}, [logits, rv, tv, lse, v](const std::vector<double>& g) {
    auto& gl = logits.node().grad_buffer();
    for (std::size_t k = 0; k < rv.size(); ++k) {
      const double* z = logits.values().data() + rv[k] * v;
      double* gz = gl.data() + rv[k] * v;
      for (std::size_t j = 0; j < v; ++j) gz[j] += g[0] * std::exp(z[j] - lse[k]);
      gz[tv[k]] -= g[0];
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  Tape* tape = detail::tape_of({&x});
  return detail::finish(tape, {c, r}, std::move(out), [x, r, c](const std::vector<double>& g) {
    auto& gx = x.node().grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    }
  });
}

/// Rows [begin, begin + count) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_matrix(x, "slice_rows");
  const std::size_t c = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw IndexError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(x.shape()));
  }
  auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * c);
  std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(count * c));
  Tape* tape = detail::tape_of({&x});
  return detail::finish(tape, {count, c}, std::move(out), [x, begin, c](const std::vector<double>& g) {
    auto& gx = x.node().grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * c + i] += g[i];
  });
}

/// Columns [begin, begin + count) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || begin + count > c) {
    throw IndexError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(x.shape()));
  }
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * c + begin + j];
  }
  Tape* tape = detail::tape_of({&x});
  return detail::finish(tape, {r, count}, std::move(out), [x, begin, r, c, count](const std::vector<double>& g) {
    auto& gx = x.node().grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < count; ++j) gx[i * c + begin + j] += g[i * count + j];
    }
  });
}

/// Vertical concatenation; all parts share the column count.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const Tensor& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != c) {
      throw DimensionError("concat_rows width mismatch: " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tape* tape = detail::tape_of(std::span<const Tensor>(parts));
  return detail::finish(tape, {r, c}, std::move(out), [parts](const std::vector<double>& g) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      if (p.requires_grad()) {
        auto& gp = p.node().grad_buffer();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.size();
    }
  });
}

/// Horizontal concatenation; all parts share the row count.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const Tensor& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != r) {
      throw DimensionError("concat_cols height mismatch: " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < pc; ++j) out[i * c + offset + j] = p[i * pc + j];
    }
    offset += pc;
  }
  Tape* tape = detail::tape_of(std::span<const Tensor>(parts));
  return detail::finish(tape, {r, c}, std::move(out), [parts, r, c](const std::vector<double>& g) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      const std::size_t pc = p.cols();
      if (p.requires_grad()) {
        auto& gp = p.node().grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + offset + j];
        }
      }
      offset += pc;
    }
  });
}

/// Stacks [r x 1] columns side by side into [r x k].
inline Tensor stack_columns(const std::vector<Tensor>& columns) {
  for (const Tensor& col : columns) {
    if (col.rank() != 2 || col.cols() != 1) {
      throw DimensionError("stack_columns expects [r x 1] columns, got " + shape_str(col.shape()));
    }
  }
  return concat_cols(columns);
}

/// Rows of table[V x d] selected by ids.
inline Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  detail::require_matrix(table, "embedding_lookup");
  const std::size_t v = table.rows(), d = table.cols();
  if (ids.empty()) throw DimensionError("embedding_lookup of an empty id sequence");
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(v));
    }
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + i * d);
  }
  Tape* tape = detail::tape_of({&table});
  std::vector<int> idv(ids.begin(), ids.end());
  return detail::finish(tape, {ids.size(), d}, std::move(out), [table, idv, d](const std::vector<double>& g) {
    auto& gt = table.node().grad_buffer();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
    }
  });
}

/// Row-wise layer normalization with affine [1 x d] gain and bias.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_matrix(x, "layer_norm_rows");
  const std::size_t l = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm_rows affine shape mismatch: " + shape_str(gain.shape()) + ", " +
                         shape_str(bias.shape()) + " for " + shape_str(x.shape()));
  }
  std::vector<double> out(l * d), xhat(l * d), inv_std(l);
  for (std::size_t i = 0; i < l; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = x[i * d + j] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (x[i * d + j] - mean) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gain[j] + bias[j];
    }
  }
  Tape* tape = detail::tape_of({&x, &gain, &bias});
  return detail::finish(tape, {l, d}, std::move(out),
                        [x, gain, bias, l, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                            const std::vector<double>& g) {
                          if (gain.requires_grad() || bias.requires_grad()) {
                            for (std::size_t i = 0; i < l; ++i) {
                              for (std::size_t j = 0; j < d; ++j) {
                                if (gain.requires_grad()) gain.node().grad_buffer()[j] += g[i * d + j] * xhat[i * d + j];
                                if (bias.requires_grad()) bias.node().grad_buffer()[j] += g[i * d + j];
                              }
                            }
                          }
                          if (!x.requires_grad()) return;
                          auto& gx = x.node().grad_buffer();
                          std::vector<double> dxhat(d);
                          for (std::size_t i = 0; i < l; ++i) {
                            double mean_d = 0.0, mean_dx = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                              dxhat[j] = g[i * d + j] * gain[j];
                              mean_d += dxhat[j];
                              mean_dx += dxhat[j] * xhat[i * d + j];
                            }
                            mean_d /= static_cast<double>(d);
                            mean_dx /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              gx[i * d + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
                            }
                          }
                        });
}

/// Causal attention weights softmax(scale * q k^T) with future positions masked
/// out: row t only weighs positions <= t. Returns [l x l].
inline Tensor causal_attention_weights(const Tensor& q, const Tensor& k, double scale) {
  detail::require_matrix(q, "causal_attention_weights");
  detail::require_matrix(k, "causal_attention_weights");
  detail::require_same_shape(q, k, "causal_attention_weights");
  const std::size_t l = q.rows(), d = q.cols();
  std::vector<double> w(l * l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += q[i * d + p] * k[j * d + p];
      w[i * l + j] = scale * s;
      m = std::max(m, w[i * l + j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      w[i * l + j] = std::exp(w[i * l + j] - m);
      z += w[i * l + j];
    }
    for (std::size_t j = 0; j <= i; ++j) w[i * l + j] /= z;
  }
  Tape* tape = detail::tape_of({&q, &k});
  if (tape == nullptr) return Tensor::constant({l, l}, std::move(w));
  std::vector<double> weights = w;
  return tape->record({l, l}, std::move(w), [q, k, l, d, scale, weights = std::move(weights)](const std::vector<double>& g) {
    std::vector<double> ds(l * l, 0.0);
    for (std::size_t i = 0; i < l; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += g[i * l + j] * weights[i * l + j];
      for (std::size_t j = 0; j <= i; ++j) ds[i * l + j] = scale * weights[i * l + j] * (g[i * l + j] - dot);
    }
    if (q.requires_grad()) {
      auto& gq = q.node().grad_buffer();
      for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const double s = ds[i * l + j];
          if (s == 0.0) continue;
          for (std::size_t p = 0; p < d; ++p) gq[i * d + p] += s * k[j * d + p];
        }
      }
    }
    if (k.requires_grad()) {
      auto& gk = k.node().grad_buffer();
      for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const double s = ds[i * l + j];
          if (s == 0.0) continue;
          for (std::size_t p = 0; p < d; ++p) gk[j * d + p] += s * q[i * d + p];
        }
      }
    }
  });
}

/// Index of the largest value in row r; ties resolve to the lowest index.
inline std::size_t argmax_row(const Tensor& x, std::size_t r) {
  const std::size_t c = x.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (x[r * c + j] > x[r * c + best]) best = j;
  }
  return best;
}

}  // namespace mse::diffmath
