#pragma once

// Reverse-mode scalar autodiff on a Wengert tape.
//
// Recording happens eagerly through operator overloads on Var: every
// arithmetic expression appends a node holding its parent ids and the local
// partial derivatives, so the backward sweep is a single reverse loop of
// fused multiply-adds with no op dispatch. Two n-ary node kinds exist purely
// for speed: AFFINE (sum of variables scaled by recording-time constants)
// and DOT (sum of variable*variable pairs). They keep the node count of a
// full victim forward pass ~40x smaller than elementary recording, which is
// what makes CPU-only attack runs practical.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcadv::grad {

// Raised for log/sqrt/div domain violations and non-finite forward values;
// carries the id of the offending node.
struct DomainError : std::domain_error {
  DomainError(const std::string& what, int64_t node)
      : std::domain_error(what + " (node " + std::to_string(node) + ")"), node_id(node) {}
  int64_t node_id;
};

class Tape;

// Handle to a recorded scalar: tape pointer, node id and a cached value.
class Var {
 public:
  Var() = default;
  double value() const { return value_; }
  int32_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int32_t id, double v) : tape_(t), id_(id), value_(v) {}
  Tape* tape_ = nullptr;
  int32_t id_ = -1;
  double value_ = 0;
};

class Tape {
  static constexpr int32_t kLeaf = -1;
  static constexpr int32_t kAffine = -2;
  static constexpr int32_t kDot = -3;

 public:
  // `capacity` bounds the node count; exceeding it throws std::length_error.
  explicit Tape(size_t capacity = size_t(1) << 27) : capacity_(capacity) {}

  Var input(double v) { return push(v, kLeaf, 0, 0, 0); }     // differentiable leaf
  Var constant(double v) { return push(v, kLeaf, 0, 0, 0); }  // leaf never asked for

  size_t size() const { return nodes_.size(); }
  size_t capacity() const { return capacity_; }
  double value(int32_t id) const { return val_[static_cast<size_t>(id)]; }

  // Drops all nodes but keeps allocations for reuse across attack steps.
  void clear() {
    nodes_.clear();
    val_.clear();
    ext_.clear();
    pool_ids_.clear();
    pool_co_.clear();
  }

  Var unary(double v, Var a, double da) { return push(v, a.id_, da, 0, 0); }
  Var binary(double v, Var a, double da, Var b, double db) {
    return push(v, a.id_, da, b.id_, db);
  }

  // sum_i coeffs[i] * xs[i] + bias, coefficients fixed at recording time
  Var affine(std::span<const Var> xs, std::span<const double> coeffs, double bias);
  // sum_i coeffs[i] * val_[ids[i]] + bias over raw node ids (hot path)
  Var affine_ids(std::span<const int32_t> ids, std::span<const double> coeffs, double bias);
  // sum_i a[i] * b[i], both sides differentiable
  Var dot(std::span<const Var> a, std::span<const Var> b);

  // Reverse sweep from `output`; returns d output / d inputs[i]. Inputs not
  // reachable from the output get gradient 0. Each gradient() call performs
  // exactly one backward pass visiting every node at most once;
  // last_backward_visits() reports the visit count for the linearity test.
  std::vector<double> gradient(Var output, std::span<const Var> inputs);
  size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {  // elementary: parents a,b with partials; a<0 encodes kind
    int32_t a, b;
    double da, db;
  };
  struct Ext {  // n-ary payload location in the pools; dot packs id pairs
    uint32_t off, len, co_off;  // co_off: coefficient offset (affine only)
  };

  Var push(double v, int32_t a, double da, int32_t b, double db) {
    if (nodes_.size() >= capacity_) throw std::length_error("tape capacity exceeded");
    if (!std::isfinite(v))
      throw DomainError("non-finite forward value", static_cast<int64_t>(nodes_.size()));
    nodes_.push_back({a, b, da, db});
    val_.push_back(v);
    return Var(this, static_cast<int32_t>(nodes_.size() - 1), v);
  }

  size_t capacity_;
  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> bar_;
  std::vector<Ext> ext_;
  std::vector<int32_t> pool_ids_;
  std::vector<double> pool_co_;
  size_t last_visits_ = 0;
};

namespace detail {
inline Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return *a.tape();
}
}  // namespace detail

// ---- elementary operations -------------------------------------------------

inline Var operator+(Var a, Var b) {
  return detail::same_tape(a, b).binary(a.value() + b.value(), a, 1, b, 1);
}
inline Var operator+(Var a, double c) { return a.tape()->unary(a.value() + c, a, 1); }
inline Var operator+(double c, Var a) { return a + c; }

inline Var operator-(Var a) { return a.tape()->unary(-a.value(), a, -1); }
inline Var operator-(Var a, Var b) {
  return detail::same_tape(a, b).binary(a.value() - b.value(), a, 1, b, -1);
}
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return a.tape()->unary(c - a.value(), a, -1); }

inline Var operator*(Var a, Var b) {
  return detail::same_tape(a, b).binary(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator*(Var a, double c) { return a.tape()->unary(a.value() * c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }

inline Var operator/(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (b.value() == 0) throw DomainError("division by zero", b.id());
  double inv = 1.0 / b.value();
  return t.binary(a.value() * inv, a, inv, b, -a.value() * inv * inv);
}
inline Var operator/(Var a, double c) {
  if (c == 0) throw DomainError("division by zero", a.id());
  return a * (1.0 / c);
}
inline Var operator/(double c, Var a) {
  if (a.value() == 0) throw DomainError("division by zero", a.id());
  double inv = 1.0 / a.value();
  return a.tape()->unary(c * inv, a, -c * inv * inv);
}

inline Var exp(Var a) {
  double v = std::exp(a.value());
  return a.tape()->unary(v, a, v);
}
inline Var log(Var a) {
  if (!(a.value() > 0)) throw DomainError("log of non-positive value", a.id());
  return a.tape()->unary(std::log(a.value()), a, 1.0 / a.value());
}
inline Var sqrt(Var a) {
  if (a.value() < 0) throw DomainError("sqrt of negative value", a.id());
  double s = std::sqrt(a.value());
  return a.tape()->unary(s, a, s > 0 ? 0.5 / s : 0.0);
}
inline Var tanh(Var a) {
  double v = std::tanh(a.value());
  return a.tape()->unary(v, a, 1.0 - v * v);
}
// max with the deterministic subgradient convention: ties go to the first
// argument, so chained folds backpropagate to the first argmax.
inline Var vmax(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  return a.value() >= b.value() ? t.binary(a.value(), a, 1, b, 0)
                                : t.binary(b.value(), a, 0, b, 1);
}

// ---- composites -------------------------------------------------------------

Var dot(std::span<const Var> a, std::span<const Var> b);  // fused
Var l2_norm(std::span<const Var> x);                      // sqrt(x.x)
Var sum(std::span<const Var> x);
// cos(a,b); zero-norm operand -> DomainError
Var cosine_similarity(std::span<const Var> a, std::span<const Var> b);
Var logsumexp(std::span<const Var> logits);
// logits[index] - logsumexp(logits)
Var log_softmax_at(std::span<const Var> logits, int index);
// -log_softmax_at(logits, target)
Var softmax_cross_entropy(std::span<const Var> logits, int target);

// ---- finite differences ------------------------------------------------------

// A differentiable scalar function: records f(x) on the given tape using the
// supplied leaf variables.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Records f at x, takes reverse-mode gradients, and compares them against
// central finite differences with step h. Returns
//   max_i |(f(x+h e_i) - f(x-h e_i))/(2h) - g_i| / max(1, |g_i|).
// Non-finite f anywhere -> DomainError.
double finite_diff_check(const ScalarFn& f, std::span<const double> x, double h);

}  // namespace pcadv::grad
