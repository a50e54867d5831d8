#pragma once

// Dense tensors, a reverse-mode tape, Adam, and a finite-difference checker.
// Everything is double precision; a tape records one forward computation and
// is discarded after backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "shorttitle/errors.hpp"

namespace shorttitle::nn {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                       std::to_string(element_count(shape_)) + " values, got " +
                       std::to_string(values_.size()));
    }
  }

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }
  double item() const {
    if (values_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    }
    return values_[0];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(values_).subspan(r * cols(), cols());
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
      throw ShapeError("cannot accumulate " + shape_string(other.shape_) +
                       " into " + shape_string(shape_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other[i];
    return *this;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Seeded mt19937_64 with hand-written draws, so streams are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  static constexpr const char* algorithm() { return "mt19937_64"; }

  std::uint64_t next() { return engine_(); }

  // [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ValidationError("Rng::below(0)");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }
  // Inclusive range.
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(
                    below(static_cast<std::uint64_t>(hi - lo + 1)));
  }
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

inline void init_uniform(Parameter& p, Rng& rng, double lo, double hi) {
  for (double& x : p.value.values()) x = rng.uniform(lo, hi);
}

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), nullptr); }

  // Trainable leaf: backward() accumulates into p.grad.
  Var param(Parameter& p) {
    Var v = push_external(&p.value);
    nodes_.back().param = &p;
    return v;
  }
  // Frozen leaf: gradients stop here.
  Var param(const Parameter& p) { return push_external(&p.value); }

  Var record(Tensor value, BackwardFn backward) {
    return push(std::move(value), std::move(backward));
  }

  const Tensor& value(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.external ? *n.external : n.own;
  }

  // Gradient buffer of node i, allocated as zeros on first use.
  Tensor& grad(std::size_t i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) n.grad = Tensor(value(i).shape());
    return n.grad;
  }
  bool has_grad(std::size_t i) const { return !nodes_[i].grad.empty(); }
  const Tensor& grad_or_empty(std::size_t i) const { return nodes_[i].grad; }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (&loss.tape() != this) {
      throw ValidationError("backward() on a Var from another tape");
    }
    if (loss.value().size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " +
                       shape_string(loss.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad(loss.index())[0] = 1.0;
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Tensor own;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    BackwardFn backward;
  };

  Var push(Tensor value, BackwardFn backward) {
    Node n;
    n.own = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }
  Var push_external(const Tensor* value) {
    Node n;
    n.external = value;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(index_); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw ValidationError(std::string(op) + ": operands on different tapes");
  }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename F, typename D>
Var unary(Var a, F f, D dfdx_from_output) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ai = a.index();
  return a.tape().record(std::move(y), [ai, dfdx_from_output](Tape& t,
                                                              std::size_t self) {
    const Tensor& out = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * dfdx_from_output(out[i]);
    }
  });
}

}  // namespace detail

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return sigmoid(x); },
      [](double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double y) { return 1.0 - y * y; });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(y), [ai, bi](Tape& t, std::size_t self) {
    const Tensor g = t.grad(self);
    t.grad(ai) += g;
    t.grad(bi) += g;
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(y), [ai, bi](Tape& t, std::size_t self) {
    const Tensor g = t.grad(self);
    const Tensor& x = t.value(ai);
    const Tensor& z = t.value(bi);
    {
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * z[i];
    }
    Tensor& gb = t.grad(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
}

inline Var scale(Var a, double factor) {
  Tensor y = a.value();
  for (double& v : y.values()) v *= factor;
  const std::size_t ai = a.index();
  return a.tape().record(std::move(y), [ai, factor](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

// W [r x c] times x [c] -> [r].
inline Var matvec(Var w, Var x) {
  detail::require_same_tape(w, x, "matvec");
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  if (W.rank() != 2 || X.rank() != 1 || W.cols() != X.size()) {
    throw ShapeError("matvec: shape mismatch " + shape_string(W.shape()) +
                     " vs " + shape_string(X.shape()));
  }
  const std::size_t r = W.rows(), c = W.cols();
  Tensor y(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    const double* wr = &W.values()[i * c];
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += wr[j] * X[j];
    y[i] = acc;
  }
  const std::size_t wi = w.index(), xi = x.index();
  return w.tape().record(std::move(y), [wi, xi, r, c](Tape& t,
                                                       std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& W = t.value(wi);
    const Tensor& X = t.value(xi);
    {
      Tensor& gw = t.grad(wi);
      for (std::size_t i = 0; i < r; ++i) {
        if (g[i] == 0.0) continue;
        double* gr = &gw.values()[i * c];
        for (std::size_t j = 0; j < c; ++j) gr[j] += g[i] * X[j];
      }
    }
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < r; ++i) {
      const double* wr = &W.values()[i * c];
      for (std::size_t j = 0; j < c; ++j) gx[j] += g[i] * wr[j];
    }
  });
}

// A [m x k] times B [k x n] -> [m x n].
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_string(A.shape()) +
                     " vs " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor y(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      for (std::size_t j = 0; j < n; ++j) y.at(i, j) += aip * B.at(p, j);
    }
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(y), [ai, bi, m, k, n](Tape& t,
                                                         std::size_t self) {
    const Tensor g = t.grad(self);
    const Tensor& A = t.value(ai);
    const Tensor& B = t.value(bi);
    {
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * B.at(p, j);
          ga.at(i, p) += acc;
        }
    }
    Tensor& gb = t.grad(bi);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.at(i, p);
        for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += aip * g.at(i, j);
      }
  });
}

// Inner product of two equal-shape tensors -> scalar.
inline Var dot(Var a, Var b) {
  detail::require_same_shape(a, b, "dot");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * z[i];
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(Tensor::scalar(acc), [ai, bi](Tape& t,
                                                       std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& x = t.value(ai);
    const Tensor& z = t.value(bi);
    {
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * z[i];
    }
    Tensor& gb = t.grad(bi);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * x[i];
  });
}

inline Var sum(Var a) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const std::size_t ai = a.index();
  return a.tape().record(Tensor::scalar(acc), [ai](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ai).values()) v += g;
  });
}

// Flattens and joins the parts into one vector.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::require_same_tape(parts.front(), p, "concat");
    const auto v = p.value().values();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(p.index());
  }
  Tape& tape = parts.front().tape();
  return tape.record(Tensor::vector(std::move(out)),
                     [ids = std::move(ids)](Tape& t, std::size_t self) {
                       const Tensor g = t.grad(self);
                       std::size_t offset = 0;
                       for (std::size_t id : ids) {
                         Tensor& gp = t.grad(id);
                         for (std::size_t i = 0; i < gp.size(); ++i) {
                           gp[i] += g[offset + i];
                         }
                         offset += gp.size();
                       }
                     });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

// Contiguous sub-vector [offset, offset + length) of a rank-1 tensor.
inline Var slice(Var a, std::size_t offset, std::size_t length) {
  const Tensor& x = a.value();
  if (x.rank() != 1 || offset + length > x.size()) {
    throw ShapeError("slice [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") out of " +
                     shape_string(x.shape()));
  }
  std::vector<double> out(x.values().begin() + offset,
                          x.values().begin() + offset + length);
  const std::size_t ai = a.index();
  return a.tape().record(
      Tensor::vector(std::move(out)),
      [ai, offset](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
      });
}

// Row `id` of an embedding table [rows x dim]. Gradients go straight into
// the parameter's gradient row, so the full table is never materialized on
// the tape.
inline Var lookup_row(Tape& tape, Parameter& table, std::size_t id) {
  if (table.value.rank() != 2 || id >= table.value.rows()) {
    throw ShapeError("lookup_row: id " + std::to_string(id) +
                     " out of range for table " +
                     shape_string(table.value.shape()));
  }
  const auto r = table.value.row(id);
  Parameter* p = &table;
  return tape.record(Tensor::vector({r.begin(), r.end()}),
                     [p, id](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       auto gr = p->grad.row(id);
                       for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
                     });
}

inline Var lookup_row(Tape& tape, const Parameter& table, std::size_t id) {
  if (table.value.rank() != 2 || id >= table.value.rows()) {
    throw ShapeError("lookup_row: id " + std::to_string(id) +
                     " out of range for table " +
                     shape_string(table.value.shape()));
  }
  const auto r = table.value.row(id);
  return tape.constant(Tensor::vector({r.begin(), r.end()}));
}

// Mean of the vectors whose mask entry is nonzero.
inline Var masked_mean_pool(std::span<const Var> sequence,
                            std::span<const int> mask) {
  if (sequence.size() != mask.size()) {
    throw ShapeError("masked_mean_pool: " + std::to_string(sequence.size()) +
                     " vectors vs mask of " + std::to_string(mask.size()));
  }
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    if (mask[i]) ids.push_back(sequence[i].index());
  }
  if (ids.empty()) throw ValidationError("masked_mean_pool: all positions masked");
  Tape& tape = sequence.front().tape();
  const Shape shape = tape.value(ids.front()).shape();
  Tensor y(shape);
  for (std::size_t id : ids) {
    const Tensor& v = tape.value(id);
    if (v.shape() != shape) {
      throw ShapeError("masked_mean_pool: shape mismatch " +
                       shape_string(shape) + " vs " + shape_string(v.shape()));
    }
    y += v;
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& v : y.values()) v *= inv;
  return tape.record(std::move(y), [ids = std::move(ids), inv](
                                       Tape& t, std::size_t self) {
    const Tensor g = t.grad(self);
    for (std::size_t id : ids) {
      Tensor& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += inv * g[i];
    }
  });
}

inline constexpr double kScoreClamp = 1e-7;

// -sum over masked-in tokens of [y log s + (1-y) log(1-s)], with s clamped
// to [eps, 1-eps]. The clamp has zero derivative where it is active.
inline Var bce_sum(Var scores, std::span<const int> labels,
                   std::span<const int> mask) {
  const Tensor& s = scores.value();
  if (s.size() != labels.size() || s.size() != mask.size()) {
    throw ShapeError("bce: " + std::to_string(s.size()) + " scores, " +
                     std::to_string(labels.size()) + " labels, " +
                     std::to_string(mask.size()) + " mask entries");
  }
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<int> m(mask.begin(), mask.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!m[i]) continue;
    const double p = std::clamp(s[i], kScoreClamp, 1.0 - kScoreClamp);
    loss -= y[i] ? std::log(p) : std::log(1.0 - p);
  }
  const std::size_t si = scores.index();
  return scores.tape().record(
      Tensor::scalar(loss),
      [si, y = std::move(y), m = std::move(m)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor& s = t.value(si);
        Tensor& gs = t.grad(si);
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (!m[i]) continue;
          if (s[i] < kScoreClamp || s[i] > 1.0 - kScoreClamp) continue;
          gs[i] += g * (y[i] ? -1.0 / s[i] : 1.0 / (1.0 - s[i]));
        }
      });
}

// Mean per-token binary cross-entropy over masked-in positions.
inline Var binary_cross_entropy(Var scores, std::span<const int> labels,
                                std::span<const int> mask) {
  const auto count = std::count_if(mask.begin(), mask.end(),
                                   [](int m) { return m != 0; });
  if (count == 0) throw ValidationError("bce: no masked-in tokens");
  return scale(bce_sum(scores, labels, mask), 1.0 / static_cast<double>(count));
}

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  void restore(std::uint64_t step, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != v.size()) throw ValidationError("adam: moment count mismatch");
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  void step(std::span<Parameter* const> params) {
    if (m_.empty()) {
      for (const Parameter* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    if (m_.size() != params.size()) {
      throw ValidationError("adam: parameter list changed between steps");
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      if (m.shape() != p.value.shape()) {
        throw ShapeError("adam: moment shape " + shape_string(m.shape()) +
                         " vs parameter " + p.name + " " +
                         shape_string(p.value.shape()));
      }
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.value[i] -= config_.learning_rate * mhat /
                      (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

inline double grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(std::span<Parameter* const> params,
                             double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.values()) g *= f;
  }
  return norm;
}

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_error() const {
    double e = 0.0;
    for (const auto& x : entries) e = std::max(e, x.max_relative_error);
    return e;
  }
  bool passed() const { return max_error() <= tolerance; }
};

// |a - n| / max(|a|, |n|, floor); the floor makes near-zero gradients compare
// on an absolute scale.
inline double relative_error(double analytic, double numeric,
                             double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

using LossBuilder = std::function<Var(Tape&)>;

// Central differences against caller-supplied analytic gradients (one tensor
// per parameter, same order).
inline GradCheckReport finite_difference_check(
    std::span<Parameter* const> params, const LossBuilder& build_loss,
    const std::vector<Tensor>& analytic, double tolerance = 1e-4,
    double step = 1e-5) {
  if (analytic.size() != params.size()) {
    throw ValidationError("finite_difference_check: gradient count mismatch");
  }
  auto eval = [&]() {
    Tape tape;
    return build_loss(tape).value().item();
  };
  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    GradCheckEntry entry;
    entry.name = p.name;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double up = eval();
      p.value[i] = saved - step;
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[k][i], numeric);
      if (err >= entry.max_relative_error) {
        entry.max_relative_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[k][i];
        entry.numeric = numeric;
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// Runs backward once for the analytic gradients, then compares.
inline GradCheckReport finite_difference_check(
    std::span<Parameter* const> params, const LossBuilder& build_loss,
    double tolerance = 1e-4, double step = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = build_loss(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);
  return finite_difference_check(params, build_loss, analytic, tolerance, step);
}

}  // namespace shorttitle::nn
