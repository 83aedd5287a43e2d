#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slalab/mathcore.hpp"

namespace slalab {

struct LinearLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // row-major, w[r*in + c]
  std::vector<double> b;  // length out

  static LinearLayer zeros(int in, int out);
  bool finite() const;
};

// Classifier g = softmax . head . f where f is an MLP feature extractor
// with tanh between layers (no activation after the last extractor layer).
struct Model {
  int input_dim = 0;
  int feature_dim = 0;
  int num_classes = 0;
  std::vector<LinearLayer> extractor;
  LinearLayer head;  // num_classes x feature_dim

  // Per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], weights
  // then biases, layer by layer, drawn in fixed order.
  static Model init(int input_dim, const std::vector<int>& hidden,
                    int feature_dim, int num_classes, Rng& rng);

  FeatureVec forward_features(std::span<const double> x) const;
  SoftLabel forward(std::span<const double> x) const;

  size_t param_count() const;
  bool finite() const;

  // FNV over the raw parameter bytes in fixed order.
  uint64_t param_hash() const;
};

// Shape-congruent with Model; also used for momentum velocities.
struct GradBuffer {
  std::vector<LinearLayer> extractor;
  LinearLayer head;

  static GradBuffer zeros_like(const Model& m);
  void add(const GradBuffer& other);
  void scale(double c);
  bool finite() const;
};

struct SgdState {
  double base_lr = 0.1;
  double momentum = 0.9;
  double decay_gamma = 1e-4;
  double decay_power = 0.75;
  int64_t step_count = 0;
  GradBuffer velocity;

  static SgdState init(const Model& m, double base_lr, double momentum,
                       double decay_gamma, double decay_power);

  // base_lr * (1 + gamma*t)^(-power); positive and nonincreasing in t.
  double lr_at(int64_t t) const;
};

struct CeExample {
  std::vector<double> x;
  SoftLabel target;
};

// Weighted-mean soft-target cross entropy over the batch and its exact
// gradient. Targets are constants; no gradient flows through them.
std::pair<GradBuffer, double> backward_ce(const Model& m,
                                          std::span<const CeExample> batch,
                                          std::span<const double> weights);

// Mean prediction entropy over the batch and its exact gradient.
std::pair<GradBuffer, double> backward_entropy(
    const Model& m, std::span<const std::vector<double>> batch);

// velocity <- momentum*velocity + grads; params <- params - lr(t)*velocity.
// Throws TrainingError on non-finite gradients.
void sgd_step(Model& m, const GradBuffer& grads, SgdState& opt);

// Resets step_count to 0; velocities and base_lr are preserved.
void scheduler_refresh(SgdState& opt);

// Versioned JSON checkpoint; doubles round-trip exactly.
void save_model(const Model& m, const std::string& path,
                const std::string& config_hash);
std::pair<Model, std::string> load_model(const std::string& path);

}  // namespace slalab
