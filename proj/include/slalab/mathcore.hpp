#pragma once

#include <span>
#include <vector>

#include "slalab/common.hpp"

namespace slalab {

// Floor applied to probabilities before any log.
inline constexpr double kLogEps = 1e-12;

// A point on the K-class probability simplex.
struct SoftLabel {
  std::vector<double> probs;

  SoftLabel() = default;
  explicit SoftLabel(std::vector<double> p) : probs(std::move(p)) {}

  int k() const { return static_cast<int>(probs.size()); }
  double operator[](int i) const { return probs[static_cast<size_t>(i)]; }

  static SoftLabel one_hot(int cls, int k);

  // Entries nonnegative, sum within tol of 1, K >= 2.
  bool valid(double tol = 1e-9) const;

  // Ties broken toward the lowest class index.
  int argmax() const;
};

// A point in the extractor's feature space.
struct FeatureVec {
  std::vector<double> v;

  FeatureVec() = default;
  explicit FeatureVec(std::vector<double> values) : v(std::move(values)) {}

  int dim() const { return static_cast<int>(v.size()); }
  bool finite() const;
};

// Deterministic generator: a strided counter pushed through the splitmix64
// mix, so identical seeds give identical streams on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64();

  // Uniform in [0, 1), 53 bits.
  double uniform();

  // Standard normal via Box-Muller; consumes exactly two uniforms per draw.
  double normal();

  // Uniform integer in [0, n), n > 0.
  uint64_t below(uint64_t n);

  // Independent stream derived from the original seed and a stream id.
  Rng stream(uint64_t stream_id) const;

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
};

// Max-subtracted softmax. Throws DomainError on non-finite input,
// ShapeError for K < 2.
SoftLabel softmax(std::span<const double> logits);

// H(pred, target) = -sum_k target_k * log(max(pred_k, kLogEps)).
// Prediction first, target second; the target supplies the weights.
double cross_entropy_soft(const SoftLabel& pred, const SoftLabel& target);

// KL(from -> to). Terms with from_k = 0 contribute zero; the second
// argument is clamped by kLogEps before the log.
double kl_divergence(const SoftLabel& from, const SoftLabel& to);

// Squared Euclidean distance.
double sq_euclidean(const FeatureVec& a, const FeatureVec& b);

// out[0] = series[0]; out[t] = ratio*out[t-1] + (1-ratio)*series[t].
std::vector<double> ema_smooth(std::span<const double> series, double ratio);

// -sum_k p_k log p_k with the usual 0 log 0 = 0 convention.
double entropy(const SoftLabel& p);

}  // namespace slalab
