#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "drbert/error.hpp"
#include "drbert/tensor.hpp"

namespace drbert::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the differentiation graph. Leaves are constants or
/// parameters; interior nodes carry the rule that pushes their gradient
/// into their inputs.
struct Node {
  std::string op;
  std::string name;
  Tensor value;
  Tensor grad;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  bool is_leaf() const noexcept { return inputs.empty(); }

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }

  void zero_grad() { grad = Tensor(); }
};

inline Var constant(Tensor value, std::string name = {}) {
  auto n = std::make_shared<Node>();
  n->op = "constant";
  n->name = std::move(name);
  n->value = std::move(value);
  return n;
}

inline Var parameter(Tensor value, std::string name = {}) {
  auto n = std::make_shared<Node>();
  n->op = "parameter";
  n->name = std::move(name);
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

namespace detail {

// Inputs that need no gradient are dropped so constant subgraphs are freed early.
inline Var make(std::string op, Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward);
  }
  return n;
}

[[noreturn]] inline void dim_error(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] inline void dim_error(const std::string& op, const Shape& a, const std::string& why) {
  throw DimensionError(op + ": " + why + " (shape " + shape_str(a) + ")");
}

inline void accumulate(Node& target, std::span<const double> delta) {
  if (!target.requires_grad) return;
  auto g = target.grad_buffer().data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

/// Matrix product. Rank-1 left operands act as a single row, rank-1 right
/// operands as a single column; the result drops the corresponding axis.
inline Var matmul(const Var& a, const Var& b) {
  const Shape& as = a->value.shape();
  const Shape& bs = b->value.shape();
  if (as.empty() || bs.empty() || as.size() > 2 || bs.size() > 2 || (as.size() == 1 && bs.size() == 1)) {
    detail::dim_error("matmul", as, bs);
  }
  std::size_t n = as.size() == 2 ? as[0] : 1;
  std::size_t k = as.back();
  std::size_t kb = bs[0];
  std::size_t m = bs.size() == 2 ? bs[1] : 1;
  if (k != kb) detail::dim_error("matmul", as, bs);

  Shape out_shape;
  if (as.size() == 2) out_shape.push_back(n);
  if (bs.size() == 2) out_shape.push_back(m);
  Tensor out(out_shape);
  auto A = a->value.data();
  auto B = b->value.data();
  auto C = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B[p * m];
      double* crow = &C[i * m];
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return detail::make("matmul", std::move(out), {a, b}, [n, k, m](Node& self) {
    auto G = self.grad.data();
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto A_ = na.grad_buffer().data();
      auto B_ = nb.value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += G[i * m + j] * B_[p * m + j];
          A_[i * k + p] += s;
        }
    }
    if (nb.requires_grad) {
      auto Bg = nb.grad_buffer().data();
      auto A_ = na.value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double av = A_[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) Bg[p * m + j] += av * G[i * m + j];
        }
    }
  });
}

/// Elementwise sum. `b` may also be a rank-1 tensor matching the trailing
/// axis of a rank-2 `a`, in which case it is broadcast over the leading axis.
inline Var add(const Var& a, const Var& b) {
  const Shape& as = a->value.shape();
  const Shape& bs = b->value.shape();
  bool broadcast = as.size() == 2 && bs.size() == 1 && as[1] == bs[0];
  if (as != bs && !broadcast) detail::dim_error("add", as, bs);
  Tensor out = a->value;
  auto O = out.data();
  auto B = b->value.data();
  std::size_t period = B.size();
  for (std::size_t i = 0; i < O.size(); ++i) O[i] += B[i % period];
  return detail::make("add", std::move(out), {a, b}, [period](Node& self) {
    auto G = self.grad.data();
    detail::accumulate(*self.inputs[0], G);
    Node& nb = *self.inputs[1];
    if (!nb.requires_grad) return;
    auto Bg = nb.grad_buffer().data();
    for (std::size_t i = 0; i < G.size(); ++i) Bg[i % period] += G[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a->value.shape() != b->value.shape()) detail::dim_error("sub", a->value.shape(), b->value.shape());
  Tensor out = a->value;
  auto O = out.data();
  auto B = b->value.data();
  for (std::size_t i = 0; i < O.size(); ++i) O[i] -= B[i];
  return detail::make("sub", std::move(out), {a, b}, [](Node& self) {
    auto G = self.grad.data();
    detail::accumulate(*self.inputs[0], G);
    Node& nb = *self.inputs[1];
    if (!nb.requires_grad) return;
    auto Bg = nb.grad_buffer().data();
    for (std::size_t i = 0; i < G.size(); ++i) Bg[i] -= G[i];
  });
}

/// Elementwise (Hadamard) product, with the same broadcast rule as add().
inline Var mul(const Var& a, const Var& b) {
  const Shape& as = a->value.shape();
  const Shape& bs = b->value.shape();
  bool broadcast = as.size() == 2 && bs.size() == 1 && as[1] == bs[0];
  if (as != bs && !broadcast) detail::dim_error("mul", as, bs);
  Tensor out = a->value;
  auto O = out.data();
  auto B = b->value.data();
  std::size_t period = B.size();
  for (std::size_t i = 0; i < O.size(); ++i) O[i] *= B[i % period];
  return detail::make("mul", std::move(out), {a, b}, [period](Node& self) {
    auto G = self.grad.data();
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    auto A = na.value.data();
    auto B_ = nb.value.data();
    if (na.requires_grad) {
      auto Ag = na.grad_buffer().data();
      for (std::size_t i = 0; i < G.size(); ++i) Ag[i] += G[i] * B_[i % period];
    }
    if (nb.requires_grad) {
      auto Bg = nb.grad_buffer().data();
      for (std::size_t i = 0; i < G.size(); ++i) Bg[i % period] += G[i] * A[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.data()) v *= s;
  return detail::make("scale", std::move(out), {a}, [s](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Ag = na.grad_buffer().data();
    for (std::size_t i = 0; i < G.size(); ++i) Ag[i] += s * G[i];
  });
}

namespace detail {

// Elementwise op whose derivative is expressed through the output value.
template <typename Fwd, typename DerivFromOut>
Var unary(const char* op, const Var& a, Fwd fwd, DerivFromOut deriv) {
  Tensor out = a->value;
  for (auto& v : out.data()) v = fwd(v);
  return make(op, std::move(out), {a}, [deriv](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Y = self.value.data();
    auto X = na.value.data();
    auto Ag = na.grad_buffer().data();
    for (std::size_t i = 0; i < G.size(); ++i) Ag[i] += G[i] * deriv(X[i], Y[i]);
  });
}

}  // namespace detail

inline Var tanh(const Var& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(const Var& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Natural log with the argument clamped from below; the clamped region has
/// zero derivative.
inline Var log_clamped(const Var& a, double floor = 1e-12) {
  return detail::unary(
      "log", a, [floor](double x) { return std::log(x < floor ? floor : x); },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0 / x; });
}

/// Softmax over the last axis. `mask`, when given, has one entry per
/// position on that axis; zero entries act as -inf logits and receive
/// exactly zero probability in every row.
inline Var softmax(const Var& a, const std::vector<std::uint8_t>* mask = nullptr) {
  const Shape& s = a->value.shape();
  if (s.empty() || s.size() > 2) detail::dim_error("softmax", s, "expected rank 1 or 2");
  std::size_t cols = s.back();
  std::size_t rows = a->value.size() / cols;
  if (mask && mask->size() != cols) {
    throw DimensionError("softmax: mask of length " + std::to_string(mask->size()) +
                         " for axis of length " + std::to_string(cols));
  }
  auto keep = [&](std::size_t j) { return !mask || (*mask)[j] != 0; };
  bool any = false;
  for (std::size_t j = 0; j < cols; ++j) any = any || keep(j);
  if (!any) detail::dim_error("softmax", s, "every position is masked");

  Tensor out(s);
  auto X = a->value.data();
  auto Y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j)
      if (keep(j)) mx = std::max(mx, X[r * cols + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      double e = keep(j) ? std::exp(X[r * cols + j] - mx) : 0.0;
      Y[r * cols + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < cols; ++j) Y[r * cols + j] /= z;
  }
  return detail::make("softmax", std::move(out), {a}, [rows, cols](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Y_ = self.value.data();
    auto Ag = na.grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += G[r * cols + j] * Y_[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        std::size_t i = r * cols + j;
        Ag[i] += Y_[i] * (G[i] - dot);
      }
    }
  });
}

/// Maximum over the leading (token) axis of a rank-2 tensor. Rows with a
/// zero mask entry are skipped. `argmax`, if non-null, receives the winning
/// row per column; ties go to the lowest row index, which is also where the
/// gradient is routed.
inline Var max_rows(const Var& a, const std::vector<std::uint8_t>* mask = nullptr,
                    std::vector<std::size_t>* argmax = nullptr) {
  const Shape& s = a->value.shape();
  if (s.size() != 2) detail::dim_error("max_rows", s, "expected rank 2");
  std::size_t rows = s[0], cols = s[1];
  if (mask && mask->size() != rows) {
    throw DimensionError("max_rows: mask of length " + std::to_string(mask->size()) + " for " +
                         std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> winner(cols, rows);
  Tensor out(Shape{cols});
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask && !(*mask)[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      double v = a->value.at(r, c);
      if (winner[c] == rows || v > out[c]) {
        out[c] = v;
        winner[c] = r;
      }
    }
  }
  if (winner.empty() || winner[0] == rows) detail::dim_error("max_rows", s, "every row is masked");
  if (argmax) *argmax = winner;
  return detail::make("max_rows", std::move(out), {a}, [winner, cols](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Ag = na.grad_buffer().data();
    for (std::size_t c = 0; c < cols; ++c) Ag[winner[c] * cols + c] += G[c];
  });
}

/// Mean over the leading axis of a rank-2 tensor.
inline Var mean_rows(const Var& a) {
  const Shape& s = a->value.shape();
  if (s.size() != 2) detail::dim_error("mean_rows", s, "expected rank 2");
  std::size_t rows = s[0], cols = s[1];
  Tensor out(Shape{cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += a->value.at(r, c);
  for (auto& v : out.data()) v /= static_cast<double>(rows);
  return detail::make("mean_rows", std::move(out), {a}, [rows, cols](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Ag = na.grad_buffer().data();
    double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) Ag[r * cols + c] += G[c] * inv;
  });
}

/// Concatenation. Rank-1 inputs join end to end; rank-2 inputs join along
/// rows (axis 0) or columns (axis 1).
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0]->value.shape();
  if (s0.empty() || s0.size() > 2 || axis >= s0.size()) detail::dim_error("concat", s0, "bad axis");
  std::size_t rows = s0.size() == 2 ? s0[0] : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p->value.shape();
    if (s.size() != s0.size()) detail::dim_error("concat", s0, s);
    if (s.size() == 2 && s[1 - axis] != s0[1 - axis]) detail::dim_error("concat", s0, s);
    widths.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<double> data;
  data.reserve(shape_numel(out_shape));
  if (s0.size() == 1 || axis == 0) {
    for (const auto& p : parts) data.insert(data.end(), p->value.values().begin(), p->value.values().end());
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (const auto& p : parts) {
        auto row = p->value.row(r);
        data.insert(data.end(), row.begin(), row.end());
      }
  }
  bool by_rows = s0.size() == 1 || axis == 0;
  return detail::make("concat", Tensor(out_shape, std::move(data)), parts,
                      [widths, rows, total, by_rows](Node& self) {
                        auto G = self.grad.data();
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                          Node& in = *self.inputs[k];
                          if (by_rows) {
                            std::size_t n = in.value.size();
                            detail::accumulate(in, G.subspan(offset, n));
                            offset += n;
                          } else {
                            if (in.requires_grad) {
                              auto Ig = in.grad_buffer().data();
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < widths[k]; ++c)
                                  Ig[r * widths[k] + c] += G[r * total + offset + c];
                            }
                            offset += widths[k];
                          }
                        }
                      });
}

inline Var transpose(const Var& a) {
  const Shape& s = a->value.shape();
  if (s.size() != 2) detail::dim_error("transpose", s, "expected rank 2");
  std::size_t n = s[0], m = s[1];
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a->value.at(i, j);
  return detail::make("transpose", std::move(out), {a}, [n, m](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Ag = na.grad_buffer().data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) Ag[i * m + j] += G[j * n + i];
  });
}

/// Columns [begin, end) of a rank-2 tensor.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Shape& s = a->value.shape();
  if (s.size() != 2 || begin >= end || end > s[1]) detail::dim_error("slice_cols", s, "bad column range");
  std::size_t rows = s[0], cols = s[1], w = end - begin;
  Tensor out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = a->value.at(r, begin + c);
  return detail::make("slice_cols", std::move(out), {a}, [rows, cols, w, begin](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Ag = na.grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) Ag[r * cols + begin + c] += G[r * w + c];
  });
}

/// Row lookup: result row i is a[ids[i]]. Gradients scatter-add back into
/// exactly the rows that were read.
inline Var gather_rows(const Var& a, const std::vector<std::size_t>& ids) {
  const Shape& s = a->value.shape();
  if (s.size() != 2) detail::dim_error("gather_rows", s, "expected rank 2");
  if (ids.empty()) detail::dim_error("gather_rows", s, "empty index list");
  std::size_t cols = s[1];
  Tensor out(Shape{ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= s[0]) {
      throw DimensionError("gather_rows: index " + std::to_string(ids[i]) + " out of range for shape " +
                           shape_str(s));
    }
    auto src = a->value.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::make("gather_rows", std::move(out), {a}, [ids, cols](Node& self) {
    Node& na = *self.inputs[0];
    auto G = self.grad.data();
    auto Ag = na.grad_buffer().data();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) Ag[ids[i] * cols + c] += G[i * cols + c];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a->value.size()) detail::dim_error("reshape", a->value.shape(), shape);
  Tensor out(std::move(shape), a->value.values());
  return detail::make("reshape", std::move(out), {a},
                      [](Node& self) { detail::accumulate(*self.inputs[0], self.grad.data()); });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data()) s += v;
  return detail::make("sum", Tensor::scalar(s), {a}, [](Node& self) {
    Node& na = *self.inputs[0];
    double g = self.grad[0];
    for (auto& v : na.grad_buffer().data()) v += g;
  });
}

/// Per-row layer normalization with learned gain and bias over the last axis.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Shape& s = x->value.shape();
  if (s.size() != 2) detail::dim_error("layer_norm", s, "expected rank 2");
  std::size_t rows = s[0], d = s[1];
  if (gain->value.shape() != Shape{d}) detail::dim_error("layer_norm", s, gain->value.shape());
  if (bias->value.shape() != Shape{d}) detail::dim_error("layer_norm", s, bias->value.shape());
  Tensor out(s);
  Tensor xhat(s);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x->value.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      double h = (xr[c] - mean) * inv_std[r];
      xhat.at(r, c) = h;
      out.at(r, c) = h * gain->value[c] + bias->value[c];
    }
  }
  return detail::make("layer_norm", std::move(out), {x, gain, bias},
                      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                        Node& nx = *self.inputs[0];
                        Node& ng = *self.inputs[1];
                        Node& nb = *self.inputs[2];
                        auto G = self.grad.data();
                        auto gamma = ng.value.data();
                        if (ng.requires_grad || nb.requires_grad) {
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < d; ++c) {
                              if (ng.requires_grad) ng.grad_buffer()[c] += G[r * d + c] * xhat.at(r, c);
                              if (nb.requires_grad) nb.grad_buffer()[c] += G[r * d + c];
                            }
                        }
                        if (!nx.requires_grad) return;
                        auto Xg = nx.grad_buffer().data();
                        double n = static_cast<double>(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                          double sum_g = 0.0, sum_gx = 0.0;
                          for (std::size_t c = 0; c < d; ++c) {
                            double gh = G[r * d + c] * gamma[c];
                            sum_g += gh;
                            sum_gx += gh * xhat.at(r, c);
                          }
                          for (std::size_t c = 0; c < d; ++c) {
                            double gh = G[r * d + c] * gamma[c];
                            Xg[r * d + c] += inv_std[r] * (gh - sum_g / n - xhat.at(r, c) * sum_gx / n);
                          }
                        }
                      });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

namespace detail {

inline std::string describe(const Node& n) {
  return n.name.empty() ? "'" + n.op + "' node" : "'" + n.op + "' node '" + n.name + "'";
}

// Inputs precede consumers in the returned order.
inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

/// Accumulates d(root)/d(leaf) into the grad of every parameter reachable
/// from `root`. Interior gradients are reset on each call; leaf gradients
/// accumulate until zero_grad().
inline void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw DimensionError("backward: root must be scalar, got shape " + shape_str(root->value.shape()));
  }
  if (!root->requires_grad) return;
  auto order = detail::topo_order(root.get());
  for (Node* n : order) {
    if (!n->value.all_finite()) throw NumericError("backward: non-finite value produced by " + detail::describe(*n));
    if (!n->is_leaf()) n->zero_grad();
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    if (!n->grad.all_finite()) throw NumericError("backward: non-finite gradient at " + detail::describe(*n));
    n->backward_fn(*n);
  }
}

}  // namespace drbert::ad
