#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "slalab/data.hpp"
#include "slalab/nnet.hpp"

namespace slalab {

enum class CenterSource { LabeledTarget, PseudoCenters, IdealCenters };

enum class CorrectionMode { None, SelfPrediction, Ppc };

// Class centers in feature space plus the protonet temperature.
struct ProtoState {
  std::vector<FeatureVec> centers;
  double temperature = 0.6;
  CenterSource source_tag = CenterSource::LabeledTarget;
  int64_t built_at_step = 0;

  int k() const { return static_cast<int>(centers.size()); }
  int feature_dim() const { return centers.empty() ? 0 : centers[0].dim(); }
};

struct SlaConfig {
  double alpha = 0.3;
  double temperature = 0.6;
  int64_t update_interval = 500;  // I
  int64_t warmup = 500;           // W
  CorrectionMode correction_mode = CorrectionMode::None;

  void validate() const;
};

// Hard pseudo label per unlabeled example id (id = position in U).
struct PseudoLabelTable {
  std::vector<int> labels;
  int64_t model_step = 0;

  std::vector<int64_t> class_counts(int k) const;
};

// Per-class arithmetic means. Throws EmptyClassError (with the class
// index) when a class has no members.
std::vector<FeatureVec> compute_centers(
    const std::vector<std::pair<FeatureVec, int>>& features, int k);

// Softmax over logits -T * d(feat, c_k), d = squared Euclidean.
SoftLabel protonet_predict(const ProtoState& state, const FeatureVec& feat);

// Equivalent linear classifier: w_k = 2T*c_k, b_k = -T*||c_k||^2.
// Returns (W row-major K x F, b).
std::pair<std::vector<double>, std::vector<double>> protonet_as_linear(
    const ProtoState& state);

// Argmax of the current model's prediction per unlabeled example; ties go
// to the lowest class index.
PseudoLabelTable assign_pseudo_labels(
    const Model& model, const std::vector<std::vector<double>>& unlabeled,
    int64_t model_step);

// Pseudo centers from unlabeled features grouped by pseudo label; classes
// absent from the pseudo labels fall back to their labeled-target center.
ProtoState build_ppc(const Model& model,
                     const std::vector<std::vector<double>>& unlabeled,
                     const PseudoLabelTable& table,
                     const std::vector<Example>& labeled_target,
                     double temperature, int64_t built_at_step);

// (1 - alpha) * y + alpha * cleaner_out.
SoftLabel adapt_label(const SoftLabel& y, const SoftLabel& cleaner_out,
                      double alpha);

// The per-mode source target: y during warmup (e <= W) and in mode None;
// afterwards the convex mix toward the PPC prediction or the model's own
// prediction. Throws StateError if the PPC snapshot is missing when needed.
SoftLabel adapted_source_target(const SlaConfig& cfg, int64_t step,
                                const SoftLabel& y, const Model& model,
                                const ProtoState* ppc,
                                std::span<const double> x_source);

// Fires at e = W+1 and every I steps after; recomputes the pseudo-label
// table and then the pseudo centers with the current model.
std::optional<std::pair<PseudoLabelTable, ProtoState>> maybe_refresh(
    const SlaConfig& cfg, int64_t step, const Model& model,
    const SsdaTask& task);

// Versioned JSON snapshot of a ProtoState.
void save_proto_state(const ProtoState& state, const std::string& path);
ProtoState load_proto_state(const std::string& path);

}  // namespace slalab
