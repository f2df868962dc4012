#include "vvlab/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "vvlab/autodiff/kernels.hpp"
#include "vvlab/error.hpp"

namespace vvlab::ad {

namespace {

template <typename T>
using TensorT = BasicTensor<T>;

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
}

template <typename T>
void same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

template <typename T>
void require_matrix(const TensorT<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_to_string(x.shape()));
  }
}

template <typename T>
void add_into(TensorT<T>* dst, const TensorT<T>& src) {
  if (dst == nullptr) return;
  T* d = dst->ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0; i < src.numel(); ++i) d[i] += s[i];
}

template <typename T>
T gelu_value(T x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  const double xd = x;
  return static_cast<T>(0.5 * xd * (1.0 + std::tanh(kC * (xd + 0.044715 * xd * xd * xd))));
}

template <typename T>
T gelu_derivative(T x) {
  constexpr double kC = 0.7978845608028654;
  const double xd = x;
  const double th = std::tanh(kC * (xd + 0.044715 * xd * xd * xd));
  return static_cast<T>(0.5 * (1.0 + th) +
                        0.5 * xd * (1.0 - th * th) * kC * (1.0 + 3.0 * 0.044715 * xd * xd));
}

// log-sum-exp of one row, computed in double.
template <typename T>
double row_logsumexp(const T* row, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
  return mx + std::log(s);
}

template <typename T>
void check_targets(const TensorT<T>& logits, std::span<const std::int32_t> targets,
                   const char* op) {
  require_matrix(logits, op);
  if (targets.size() != logits.rows()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(targets.size()) +
                     " targets for logits " + shape_to_string(logits.shape()));
  }
  for (std::int32_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) {
      throw IndexError(std::string(op) + ": target " + std::to_string(t) +
                       " outside vocabulary of size " + std::to_string(logits.cols()));
    }
  }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul");
  const TensorT<T>& av = a.value();
  const TensorT<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw ShapeError("matmul: cannot multiply " + shape_to_string(av.shape()) + " by " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  TensorT<T> out({m, n});
  kernels::matmul_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  return a.tape->push(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* ga = tape.grad_buffer(a)) {
      TensorT<T> tmp({m, k});
      kernels::matmul_nt(g.ptr(), tape.value(b).ptr(), tmp.ptr(), m, n, k);
      add_into(ga, tmp);
    }
    if (TensorT<T>* gb = tape.grad_buffer(b)) {
      kernels::matmul_tn_accumulate(tape.value(a).ptr(), g.ptr(), gb->ptr(), m, k, n);
    }
  });
}

template <typename T>
Var<T> matmul_transposed(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul_transposed");
  const TensorT<T>& av = a.value();
  const TensorT<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1]) {
    throw ShapeError("matmul_transposed: cannot multiply " + shape_to_string(av.shape()) +
                     " by transpose of " + shape_to_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[0];
  TensorT<T> out({m, n});
  kernels::matmul_nt(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  return a.tape->push(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* ga = tape.grad_buffer(a)) {
      TensorT<T> tmp({m, k});
      kernels::matmul_nn(g.ptr(), tape.value(b).ptr(), tmp.ptr(), m, n, k);
      add_into(ga, tmp);
    }
    if (TensorT<T>* gb = tape.grad_buffer(b)) {
      kernels::matmul_tn_accumulate(g.ptr(), tape.value(a).ptr(), gb->ptr(), m, n, k);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b, "add");
  same_shape(a.value(), b.value(), "add");
  TensorT<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bp[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tape, const TensorT<T>& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_tape(a, b, "sub");
  same_shape(a.value(), b.value(), "sub");
  TensorT<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bp[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tape, const TensorT<T>& g) {
    tape.accumulate(a, g);
    if (TensorT<T>* gb = tape.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b, "mul");
  same_shape(a.value(), b.value(), "mul");
  TensorT<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bp[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* ga = tape.grad_buffer(a)) {
      const TensorT<T>& bv = tape.value(b);
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (TensorT<T>* gb = tape.grad_buffer(b)) {
      const TensorT<T>& av = tape.value(a);
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  same_tape(x, bias, "add_bias");
  const TensorT<T>& xv = x.value();
  const TensorT<T>& bv = bias.value();
  if (bv.numel() != xv.cols()) {
    throw ShapeError("add_bias: bias " + shape_to_string(bv.shape()) + " does not match " +
                     shape_to_string(xv.shape()));
  }
  TensorT<T> out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += bv[c];
  }
  return x.tape->push(std::move(out), {x, bias}, [x, bias, rows, cols](Tape<T>& tape, const TensorT<T>& g) {
    tape.accumulate(x, g);
    if (TensorT<T>* gb = tape.grad_buffer(bias)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.ptr() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += gr[c];
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  TensorT<T> out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= factor;
  return x.tape->push(std::move(out), {x}, [x, factor](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* gx = tape.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * factor;
    }
  });
}

template <typename T>
Var<T> scale_columns(Var<T> x, std::span<const T> factors) {
  const TensorT<T>& xv = x.value();
  if (factors.size() != xv.cols()) {
    throw ShapeError("scale_columns: " + std::to_string(factors.size()) +
                     " factors for " + shape_to_string(xv.shape()));
  }
  std::vector<T> f(factors.begin(), factors.end());
  TensorT<T> out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= f[c];
  }
  return x.tape->push(std::move(out), {x}, [x, f = std::move(f), rows, cols](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* gx = tape.grad_buffer(x)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += g[r * cols + c] * f[c];
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  TensorT<T> out = x.value().reshaped(std::move(shape));
  return x.tape->push(std::move(out), {x}, [x](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* gx = tape.grad_buffer(x)) add_into(gx, g);
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  TensorT<T> out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = gelu_value(out[i]);
  return x.tape->push(std::move(out), {x}, [x](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* gx = tape.grad_buffer(x)) {
      const TensorT<T>& xv = tape.value(x);
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * gelu_derivative(xv[i]);
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  const TensorT<T>& xv = x.value();
  const int rank = static_cast<int>(xv.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_to_string(xv.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= xv.shape()[i];
  for (int i = ax + 1; i < rank; ++i) inner *= xv.shape()[i];
  const std::size_t n = xv.shape()[ax];

  TensorT<T> out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(xv[base + j * inner]));
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += std::exp(static_cast<double>(xv[base + j * inner]) - mx);
      for (std::size_t j = 0; j < n; ++j) {
        out[base + j * inner] =
            static_cast<T>(std::exp(static_cast<double>(xv[base + j * inner]) - mx) / s);
      }
    }
  }
  TensorT<T> saved = out;
  return x.tape->push(std::move(out), {x},
                      [x, saved = std::move(saved), outer, inner, n](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dot += static_cast<double>(g[base + j * inner]) * saved[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          (*gx)[idx] += static_cast<T>(saved[idx] * (g[idx] - dot));
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps) {
  same_tape(x, gain, "layer_norm");
  same_tape(x, bias, "layer_norm");
  const TensorT<T>& xv = x.value();
  const std::size_t d = xv.cols(), rows = xv.rows();
  if (d < 2) throw ShapeError("layer_norm: feature dimension must be >= 2");
  if (gain.value().numel() != d || bias.value().numel() != d) {
    throw ShapeError("layer_norm: gain/bias do not match " + shape_to_string(xv.shape()));
  }
  const TensorT<T>& gv = gain.value();
  const TensorT<T>& bv = bias.value();
  TensorT<T> out(xv.shape());
  std::vector<double> means(rows), rstds(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    means[r] = mu;
    rstds[r] = rstd;
    T* o = out.ptr() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = static_cast<T>((xr[j] - mu) * rstd * gv[j] + bv[j]);
    }
  }
  return x.tape->push(std::move(out), {x, gain, bias},
                      [x, gain, bias, rows, d, means = std::move(means), rstds = std::move(rstds)](
                          Tape<T>& tape, const TensorT<T>& g) {
    const TensorT<T>& xv = tape.value(x);
    const TensorT<T>& gv = tape.value(gain);
    TensorT<T>* gx = tape.grad_buffer(x);
    TensorT<T>* gg = tape.grad_buffer(gain);
    TensorT<T>* gb = tape.grad_buffer(bias);
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.ptr() + r * d;
      const T* gr = g.ptr() + r * d;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (xr[j] - means[r]) * rstds[r];
        dxhat[j] = static_cast<double>(gr[j]) * gv[j];
        s1 += dxhat[j];
        s2 += dxhat[j] * xhat[j];
      }
      if (gx != nullptr) {
        T* dx = gx->ptr() + r * d;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          dx[j] += static_cast<T>(rstds[r] * (dxhat[j] - s1 * inv_d - xhat[j] * s2 * inv_d));
        }
      }
      if (gg != nullptr) {
        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += static_cast<T>(gr[j] * xhat[j]);
      }
      if (gb != nullptr) {
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gr[j];
      }
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets) {
  const TensorT<T>& lv = logits.value();
  check_targets(lv, targets, "cross_entropy");
  const std::size_t n = lv.rows(), v = lv.cols();
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lv.ptr() + i * v;
    total += row_logsumexp(row, v) - static_cast<double>(row[tg[i]]);
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  return logits.tape->push(std::move(out), {logits},
                           [logits, tg = std::move(tg), n, v](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gl = tape.grad_buffer(logits);
    if (gl == nullptr) return;
    const TensorT<T>& lv = tape.value(logits);
    const double scale = static_cast<double>(g[0]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = lv.ptr() + i * v;
      const double lse = row_logsumexp(row, v);
      T* gr = gl->ptr() + i * v;
      for (std::size_t j = 0; j < v; ++j) {
        double p = std::exp(static_cast<double>(row[j]) - lse);
        if (static_cast<std::int32_t>(j) == tg[i]) p -= 1.0;
        gr[j] += static_cast<T>(p * scale);
      }
    }
  });
}

template <typename T>
Var<T> token_log_probs(Var<T> logits, std::span<const std::int32_t> targets) {
  const TensorT<T>& lv = logits.value();
  check_targets(lv, targets, "token_log_probs");
  const std::size_t n = lv.rows(), v = lv.cols();
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  TensorT<T> out({n});
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lv.ptr() + i * v;
    out[i] = static_cast<T>(static_cast<double>(row[tg[i]]) - row_logsumexp(row, v));
  }
  return logits.tape->push(std::move(out), {logits},
                           [logits, tg = std::move(tg), n, v](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gl = tape.grad_buffer(logits);
    if (gl == nullptr) return;
    const TensorT<T>& lv = tape.value(logits);
    for (std::size_t i = 0; i < n; ++i) {
      if (g[i] == T(0)) continue;
      const T* row = lv.ptr() + i * v;
      const double lse = row_logsumexp(row, v);
      T* gr = gl->ptr() + i * v;
      const double gi = g[i];
      for (std::size_t j = 0; j < v; ++j) {
        double d = -std::exp(static_cast<double>(row[j]) - lse);
        if (static_cast<std::int32_t>(j) == tg[i]) d += 1.0;
        gr[j] += static_cast<T>(gi * d);
      }
    }
  });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, std::span<const T> labels) {
  const TensorT<T>& zv = logits.value();
  if (labels.size() != zv.numel()) {
    throw ShapeError("bce_with_logits: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_to_string(zv.shape()));
  }
  std::vector<T> y(labels.begin(), labels.end());
  const std::size_t n = zv.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = zv[i];
    total += std::max(z, 0.0) - z * y[i] + std::log1p(std::exp(-std::abs(z)));
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  return logits.tape->push(std::move(out), {logits},
                           [logits, y = std::move(y), n](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gl = tape.grad_buffer(logits);
    if (gl == nullptr) return;
    const TensorT<T>& zv = tape.value(logits);
    const double scale = static_cast<double>(g[0]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(zv[i])));
      (*gl)[i] += static_cast<T>((sig - y[i]) * scale);
    }
  });
}

template <typename T>
Var<T> mse(Var<T> pred, std::span<const T> target) {
  const TensorT<T>& pv = pred.value();
  if (target.size() != pv.numel()) {
    throw ShapeError("mse: " + std::to_string(target.size()) + " targets for " +
                     shape_to_string(pv.shape()));
  }
  std::vector<T> t(target.begin(), target.end());
  const std::size_t n = pv.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pv[i]) - t[i];
    total += d * d;
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  return pred.tape->push(std::move(out), {pred},
                         [pred, t = std::move(t), n](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gp = tape.grad_buffer(pred);
    if (gp == nullptr) return;
    const TensorT<T>& pv = tape.value(pred);
    const double scale = 2.0 * static_cast<double>(g[0]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      (*gp)[i] += static_cast<T>((static_cast<double>(pv[i]) - t[i]) * scale);
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> rows) {
  const TensorT<T>& tv = table.value();
  require_matrix(tv, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  const std::size_t d = tv.cols();
  std::vector<std::int32_t> idx(rows.begin(), rows.end());
  TensorT<T> out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= tv.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(idx[i]) * d, d, out.ptr() + i * d);
  }
  return table.tape->push(std::move(out), {table},
                          [table, idx = std::move(idx), d](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gt = tape.grad_buffer(table);
    if (gt == nullptr) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = gt->ptr() + static_cast<std::size_t>(idx[i]) * d;
      const T* src = g.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> segment_mean(Var<T> x, std::span<const Segment> segments) {
  const TensorT<T>& xv = x.value();
  require_matrix(xv, "segment_mean");
  if (segments.empty()) throw ShapeError("segment_mean: no segments");
  const std::size_t d = xv.cols();
  std::vector<Segment> segs(segments.begin(), segments.end());
  TensorT<T> out({segs.size(), d});
  for (std::size_t s = 0; s < segs.size(); ++s) {
    if (segs[s].length == 0 || segs[s].start + segs[s].length > xv.rows()) {
      throw ShapeError("segment_mean: segment out of bounds");
    }
    std::vector<double> acc(d, 0.0);
    for (std::size_t r = segs[s].start; r < segs[s].start + segs[s].length; ++r) {
      for (std::size_t j = 0; j < d; ++j) acc[j] += xv.at(r, j);
    }
    for (std::size_t j = 0; j < d; ++j) {
      out.at(s, j) = static_cast<T>(acc[j] / static_cast<double>(segs[s].length));
    }
  }
  return x.tape->push(std::move(out), {x}, [x, segs = std::move(segs), d](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const T inv = static_cast<T>(1.0 / static_cast<double>(segs[s].length));
      for (std::size_t r = segs[s].start; r < segs[s].start + segs[s].length; ++r) {
        for (std::size_t j = 0; j < d; ++j) gx->at(r, j) += g.at(s, j) * inv;
      }
    }
  });
}

template <typename T>
Var<T> causal_attention(Var<T> qkv, std::span<const Segment> segments, std::size_t n_heads) {
  const TensorT<T>& xv = qkv.value();
  require_matrix(xv, "causal_attention");
  if (xv.cols() % 3 != 0) throw ShapeError("causal_attention: columns must be 3*d");
  const std::size_t d = xv.cols() / 3;
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("causal_attention: d=" + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const std::size_t hd = d / n_heads;
  const std::size_t width = 3 * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Segment> segs(segments.begin(), segments.end());
  std::size_t prob_size = 0;
  for (const Segment& s : segs) {
    if (s.length == 0 || s.start + s.length > xv.rows()) {
      throw ShapeError("causal_attention: segment out of bounds");
    }
    prob_size += n_heads * s.length * s.length;
  }

  TensorT<T> out({xv.rows(), d});
  std::vector<T> probs(prob_size, T(0));
  std::vector<double> scores;
  std::size_t offset = 0;
  for (const Segment& s : segs) {
    const std::size_t len = s.length;
    scores.resize(len);
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* p = probs.data() + offset;
      for (std::size_t t = 0; t < len; ++t) {
        const T* q = xv.ptr() + (s.start + t) * width + h * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u <= t; ++u) {
          const T* k = xv.ptr() + (s.start + u) * width + d + h * hd;
          double dot = 0.0;
          for (std::size_t j = 0; j < hd; ++j) dot += static_cast<double>(q[j]) * k[j];
          scores[u] = dot * scale;
          mx = std::max(mx, scores[u]);
        }
        double z = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          scores[u] = std::exp(scores[u] - mx);
          z += scores[u];
        }
        T* o = out.ptr() + (s.start + t) * d + h * hd;
        for (std::size_t u = 0; u <= t; ++u) {
          const T pu = static_cast<T>(scores[u] / z);
          p[t * len + u] = pu;
          const T* v = xv.ptr() + (s.start + u) * width + 2 * d + h * hd;
          for (std::size_t j = 0; j < hd; ++j) o[j] += pu * v[j];
        }
      }
      offset += len * len;
    }
  }

  return qkv.tape->push(
      std::move(out), {qkv},
      [qkv, segs = std::move(segs), probs = std::move(probs), n_heads, d, hd, width, scale](
          Tape<T>& tape, const TensorT<T>& g) {
        TensorT<T>* gx = tape.grad_buffer(qkv);
        if (gx == nullptr) return;
        const TensorT<T>& xv = tape.value(qkv);
        const T sc = static_cast<T>(scale);
        std::vector<double> dp;
        std::size_t offset = 0;
        for (const Segment& s : segs) {
          const std::size_t len = s.length;
          dp.resize(len);
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* p = probs.data() + offset;
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t row_t = s.start + t;
              const T* go = g.ptr() + row_t * d + h * hd;
              double weighted = 0.0;
              for (std::size_t u = 0; u <= t; ++u) {
                const T* v = xv.ptr() + (s.start + u) * width + 2 * d + h * hd;
                double dot = 0.0;
                for (std::size_t j = 0; j < hd; ++j) dot += static_cast<double>(go[j]) * v[j];
                dp[u] = dot;
                weighted += dot * p[t * len + u];
              }
              const T* q = xv.ptr() + row_t * width + h * hd;
              T* dq = gx->ptr() + row_t * width + h * hd;
              for (std::size_t u = 0; u <= t; ++u) {
                const std::size_t row_u = s.start + u;
                const T pu = p[t * len + u];
                const T ds = static_cast<T>(pu * (dp[u] - weighted)) * sc;
                const T* k = xv.ptr() + row_u * width + d + h * hd;
                T* dk = gx->ptr() + row_u * width + d + h * hd;
                T* dv = gx->ptr() + row_u * width + 2 * d + h * hd;
                for (std::size_t j = 0; j < hd; ++j) {
                  dv[j] += pu * go[j];
                  dq[j] += ds * k[j];
                  dk[j] += ds * q[j];
                }
              }
            }
            offset += len * len;
          }
        }
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const TensorT<T>& xv = x.value();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) total += xv[i];
  return x.tape->push(TensorT<T>::scalar(static_cast<T>(total)), {x},
                      [x](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* gx = tape.grad_buffer(x)) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g[0];
    }
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const TensorT<T>& xv = x.value();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) total += xv[i];
  const std::size_t n = xv.numel();
  return x.tape->push(TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n))), {x},
                      [x, n](Tape<T>& tape, const TensorT<T>& g) {
    if (TensorT<T>* gx = tape.grad_buffer(x)) {
      const T share = static_cast<T>(static_cast<double>(g[0]) / static_cast<double>(n));
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += share;
    }
  });
}

template <typename T>
Var<T> row_norms(Var<T> x) {
  const TensorT<T>& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  TensorT<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += static_cast<double>(xv.at(r, j)) * xv.at(r, j);
    out[r] = static_cast<T>(std::sqrt(s));
  }
  TensorT<T> norms = out;
  return x.tape->push(std::move(out), {x},
                      [x, norms = std::move(norms), rows, cols](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    const TensorT<T>& xv = tape.value(x);
    for (std::size_t r = 0; r < rows; ++r) {
      if (norms[r] == T(0)) continue;
      const T f = g[r] / norms[r];
      for (std::size_t j = 0; j < cols; ++j) gx->at(r, j) += f * xv.at(r, j);
    }
  });
}

template <typename T>
Var<T> clamp_max(Var<T> x, T cap) {
  TensorT<T> out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(out[i], cap);
  return x.tape->push(std::move(out), {x}, [x, cap](Tape<T>& tape, const TensorT<T>& g) {
    TensorT<T>* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    const TensorT<T>& xv = tape.value(x);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (xv[i] < cap) (*gx)[i] += g[i];
    }
  });
}

#define VVLAB_INSTANTIATE_OPS(T)                                                   \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                       \
  template Var<T> matmul_transposed<T>(Var<T>, Var<T>);                            \
  template Var<T> add<T>(Var<T>, Var<T>);                                          \
  template Var<T> sub<T>(Var<T>, Var<T>);                                          \
  template Var<T> mul<T>(Var<T>, Var<T>);                                          \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                     \
  template Var<T> scale<T>(Var<T>, T);                                             \
  template Var<T> scale_columns<T>(Var<T>, std::span<const T>);                    \
  template Var<T> reshape<T>(Var<T>, Shape);                                       \
  template Var<T> gelu<T>(Var<T>);                                                 \
  template Var<T> softmax<T>(Var<T>, int);                                         \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, double);                   \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const std::int32_t>);         \
  template Var<T> token_log_probs<T>(Var<T>, std::span<const std::int32_t>);       \
  template Var<T> bce_with_logits<T>(Var<T>, std::span<const T>);                  \
  template Var<T> mse<T>(Var<T>, std::span<const T>);                              \
  template Var<T> gather_rows<T>(Var<T>, std::span<const std::int32_t>);           \
  template Var<T> segment_mean<T>(Var<T>, std::span<const Segment>);               \
  template Var<T> causal_attention<T>(Var<T>, std::span<const Segment>, std::size_t); \
  template Var<T> sum<T>(Var<T>);                                                  \
  template Var<T> mean<T>(Var<T>);                                                 \
  template Var<T> row_norms<T>(Var<T>);                                            \
  template Var<T> clamp_max<T>(Var<T>, T);

VVLAB_INSTANTIATE_OPS(float)
VVLAB_INSTANTIATE_OPS(double)

#undef VVLAB_INSTANTIATE_OPS

}  // namespace vvlab::ad
