#include "pcadv/grad.hpp"

#include <algorithm>

namespace pcadv::grad {

Var Tape::affine(std::span<const Var> xs, std::span<const double> coeffs, double bias) {
  if (xs.size() != coeffs.size()) throw std::invalid_argument("affine: size mismatch");
  double v = bias;
  uint32_t off = static_cast<uint32_t>(pool_ids_.size());
  uint32_t co_off = static_cast<uint32_t>(pool_co_.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    v += coeffs[i] * xs[i].value();
    pool_ids_.push_back(xs[i].id());
    pool_co_.push_back(coeffs[i]);
  }
  ext_.push_back({off, static_cast<uint32_t>(xs.size()), co_off});
  return push(v, kAffine, 0, static_cast<int32_t>(ext_.size() - 1), 0);
}

Var Tape::affine_ids(std::span<const int32_t> ids, std::span<const double> coeffs, double bias) {
  if (ids.size() != coeffs.size()) throw std::invalid_argument("affine_ids: size mismatch");
  double v = bias;
  uint32_t off = static_cast<uint32_t>(pool_ids_.size());
  uint32_t co_off = static_cast<uint32_t>(pool_co_.size());
  pool_ids_.insert(pool_ids_.end(), ids.begin(), ids.end());
  pool_co_.insert(pool_co_.end(), coeffs.begin(), coeffs.end());
  const double* vals = val_.data();
  for (size_t i = 0; i < ids.size(); ++i) v += coeffs[i] * vals[ids[i]];
  ext_.push_back({off, static_cast<uint32_t>(ids.size()), co_off});
  return push(v, kAffine, 0, static_cast<int32_t>(ext_.size() - 1), 0);
}

Var Tape::dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double v = 0;
  uint32_t off = static_cast<uint32_t>(pool_ids_.size());
  for (size_t i = 0; i < a.size(); ++i) {
    v += a[i].value() * b[i].value();
    pool_ids_.push_back(a[i].id());
    pool_ids_.push_back(b[i].id());
  }
  ext_.push_back({off, static_cast<uint32_t>(a.size()), 0});
  return push(v, kDot, 0, static_cast<int32_t>(ext_.size() - 1), 0);
}

std::vector<double> Tape::gradient(Var output, std::span<const Var> inputs) {
  if (output.tape() != this) throw std::invalid_argument("gradient: output not on this tape");
  const size_t n = static_cast<size_t>(output.id()) + 1;
  bar_.assign(nodes_.size(), 0.0);
  bar_[output.id()] = 1.0;
  last_visits_ = 0;

  const double* vals = val_.data();
  for (size_t i = n; i-- > 0;) {
    ++last_visits_;
    const double g = bar_[i];
    if (g == 0.0) continue;
    const Node& nd = nodes_[i];
    if (nd.a >= 0) {
      bar_[nd.a] += g * nd.da;
      if (nd.b >= 0) bar_[nd.b] += g * nd.db;
    } else if (nd.a == kAffine) {
      const Ext e = ext_[nd.b];
      const int32_t* ids = pool_ids_.data() + e.off;
      const double* co = pool_co_.data() + e.co_off;
      for (uint32_t j = 0; j < e.len; ++j) bar_[ids[j]] += g * co[j];
    } else if (nd.a == kDot) {
      const Ext e = ext_[nd.b];
      const int32_t* ids = pool_ids_.data() + e.off;
      for (uint32_t j = 0; j < e.len; ++j) {
        const int32_t ia = ids[2 * j], ib = ids[2 * j + 1];
        bar_[ia] += g * vals[ib];
        bar_[ib] += g * vals[ia];
      }
    }
    // kLeaf: nothing to propagate
  }

  std::vector<double> out(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].tape() != this) throw std::invalid_argument("gradient: input not on this tape");
    out[i] = bar_[inputs[i].id()];
  }
  return out;
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.empty()) throw std::invalid_argument("dot: empty operands");
  return a[0].tape()->dot(a, b);
}

Var sum(std::span<const Var> x) {
  if (x.empty()) throw std::invalid_argument("sum: empty operand");
  static thread_local std::vector<double> ones;
  ones.assign(x.size(), 1.0);
  return x[0].tape()->affine(x, ones, 0.0);
}

Var l2_norm(std::span<const Var> x) { return sqrt(dot(x, x)); }

Var cosine_similarity(std::span<const Var> a, std::span<const Var> b) {
  Var na = l2_norm(a), nb = l2_norm(b);
  if (na.value() == 0 || nb.value() == 0)
    throw DomainError("cosine of zero-norm vector", na.value() == 0 ? na.id() : nb.id());
  return dot(a, b) / (na * nb);
}

Var logsumexp(std::span<const Var> logits) {
  if (logits.empty()) throw std::invalid_argument("logsumexp: empty logits");
  Var m = logits[0];
  for (size_t i = 1; i < logits.size(); ++i) m = vmax(m, logits[i]);
  Var s = exp(logits[0] - m);
  for (size_t i = 1; i < logits.size(); ++i) s = s + exp(logits[i] - m);
  return m + log(s);
}

Var log_softmax_at(std::span<const Var> logits, int index) {
  if (index < 0 || static_cast<size_t>(index) >= logits.size())
    throw std::invalid_argument("log_softmax_at: index out of range");
  return logits[index] - logsumexp(logits);
}

Var softmax_cross_entropy(std::span<const Var> logits, int target) {
  return -log_softmax_at(logits, target);
}

double finite_diff_check(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_check: h must be positive");

  auto eval = [&f](std::span<const double> pt, Tape& t) {
    std::vector<Var> vars;
    vars.reserve(pt.size());
    for (double v : pt) vars.push_back(t.input(v));
    Var y = f(t, vars);
    if (!std::isfinite(y.value())) throw DomainError("non-finite function value", y.id());
    return y.value();
  };

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(x.size());
  for (double v : x) vars.push_back(tape.input(v));
  Var y = f(tape, vars);
  if (!std::isfinite(y.value())) throw DomainError("non-finite function value", y.id());
  std::vector<double> g = tape.gradient(y, vars);

  std::vector<double> pt(x.begin(), x.end());
  double worst = 0;
  Tape scratch;
  for (size_t i = 0; i < pt.size(); ++i) {
    const double xi = pt[i];
    pt[i] = xi + h;
    scratch.clear();
    double fp = eval(pt, scratch);
    pt[i] = xi - h;
    scratch.clear();
    double fm = eval(pt, scratch);
    pt[i] = xi;
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace pcadv::grad
