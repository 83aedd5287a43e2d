#include "slalab/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace slalab {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

SoftLabel SoftLabel::one_hot(int cls, int k) {
  if (k < 2) throw ShapeError("one_hot: K must be >= 2");
  if (cls < 0 || cls >= k) throw DomainError("one_hot: class out of range");
  std::vector<double> p(static_cast<size_t>(k), 0.0);
  p[static_cast<size_t>(cls)] = 1.0;
  return SoftLabel(std::move(p));
}

bool SoftLabel::valid(double tol) const {
  if (k() < 2) return false;
  double sum = 0.0;
  for (double x : probs) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    sum += x;
  }
  return std::fabs(sum - 1.0) <= tol;
}

int SoftLabel::argmax() const {
  int best = 0;
  for (int i = 1; i < k(); ++i) {
    if (probs[static_cast<size_t>(i)] > probs[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

bool FeatureVec::finite() const {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
}

uint64_t Rng::below(uint64_t n) {
  if (n == 0) throw DomainError("Rng::below: n must be positive");
  return static_cast<uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Rng Rng::stream(uint64_t stream_id) const {
  // One splitmix mix of (seed, id) decorrelates the derived stream.
  uint64_t z = seed_ ^ (stream_id + 0x9e3779b97f4a7c15ull) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return Rng(z ^ (z >> 31));
}

SoftLabel softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw ShapeError("softmax: need K >= 2 logits");
  for (double x : logits) {
    if (!std::isfinite(x)) throw DomainError("softmax: non-finite logit");
  }
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return SoftLabel(std::move(p));
}

double cross_entropy_soft(const SoftLabel& pred, const SoftLabel& target) {
  if (pred.k() != target.k())
    throw ShapeError("cross_entropy_soft: mismatched K");
  double h = 0.0;
  for (int i = 0; i < pred.k(); ++i) {
    double t = target[i];
    if (t != 0.0) h -= t * std::log(std::max(pred[i], kLogEps));
  }
  return h;
}

double kl_divergence(const SoftLabel& from, const SoftLabel& to) {
  if (from.k() != to.k()) throw ShapeError("kl_divergence: mismatched K");
  double d = 0.0;
  for (int i = 0; i < from.k(); ++i) {
    double f = from[i];
    if (f > 0.0) d += f * (std::log(f) - std::log(std::max(to[i], kLogEps)));
  }
  return std::max(d, 0.0);
}

double sq_euclidean(const FeatureVec& a, const FeatureVec& b) {
  if (a.dim() != b.dim()) throw ShapeError("sq_euclidean: mismatched dims");
  double s = 0.0;
  for (int i = 0; i < a.dim(); ++i) {
    double d = a.v[static_cast<size_t>(i)] - b.v[static_cast<size_t>(i)];
    s += d * d;
  }
  return s;
}

std::vector<double> ema_smooth(std::span<const double> series, double ratio) {
  if (series.empty()) throw ShapeError("ema_smooth: empty series");
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw ConfigError("ema_smooth: ratio must be in [0, 1)");
  std::vector<double> out(series.size());
  out[0] = series[0];
  for (size_t t = 1; t < series.size(); ++t) {
    out[t] = ratio * out[t - 1] + (1.0 - ratio) * series[t];
  }
  return out;
}

double entropy(const SoftLabel& p) {
  double h = 0.0;
  for (int i = 0; i < p.k(); ++i) {
    double x = p[i];
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

}  // namespace slalab
