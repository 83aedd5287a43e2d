#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slalab/sla.hpp"

namespace slalab {

enum class UnlabeledLossKind { None, Entropy };

struct TrainConfig {
  SlaConfig sla;
  UnlabeledLossKind unlabeled_loss = UnlabeledLossKind::None;
  double entropy_weight = 0.1;  // lambda for the ENT plugin

  int64_t total_iters = 5000;
  int64_t eval_every = 100;
  int b_source = 32;
  int b_labeled = 32;
  int b_unlabeled = 32;
  uint64_t seed = 1;

  // network + optimizer
  std::vector<int> hidden = {32};
  int feature_dim = 16;
  double base_lr = 0.1;
  double momentum = 0.9;
  double decay_gamma = 1e-4;
  double decay_power = 0.75;

  int64_t oracle_iters = 3000;

  // Comparison protocol: apply the W+1 scheduler refresh even in mode None
  // so an alpha=0 run and a plain run share the same lr sequence.
  bool parity_scheduler_refresh = false;

  // Record the PPC's own test accuracy at each refresh.
  bool eval_ppc_as_classifier = false;

  void validate() const;
  std::string config_hash() const;
  std::string to_json_string() const;
};

struct EvalPoint {
  int64_t step = 0;
  double test_acc = 0.0;
  double val_acc = 0.0;
  double loss_total = 0.0;
  double loss_source = 0.0;
  double loss_labeled = 0.0;
  double loss_unlabeled = 0.0;
  double kl_source = 0.0;
  uint64_t param_hash = 0;
};

struct RefreshEvent {
  int64_t step = 0;
  std::vector<int64_t> pseudo_counts;
  double mean_center_shift = 0.0;
  double ppc_test_acc = -1.0;  // -1 when not evaluated
};

struct RunRecord {
  std::vector<EvalPoint> evals;
  std::vector<RefreshEvent> refreshes;
  std::vector<double> kl_per_step;  // kl_per_step[e-1] = mean KL at step e
  uint64_t warmup_param_hash = 0;   // after step W (0 when W == 0)
  std::string config_hash;
  std::string checkpoint_path;
  double final_test_acc = 0.0;
  double final_val_acc = 0.0;
  double wall_clock_sec = 0.0;
  std::vector<std::string> audit_accesses;  // audit-label reads made by the run

  void write_metrics_csv(const std::string& path) const;
  void write_refresh_csv(const std::string& path) const;
  void write_kl_csv(const std::string& path) const;
  void write_summary_json(const std::string& path,
                          const std::string& config_json) const;

  // Reloads what the post-hoc analyses need (evals + kl series).
  static RunRecord load(const std::string& prefix);

  std::string metrics_csv_string() const;
};

struct TrainResult {
  RunRecord record;
  Model model;
  std::optional<ProtoState> final_ppc;
  SgdState opt;
};

// The full loop: refresh, batches, adapted source targets, the three-term
// loss, one SGD step per iteration, scheduler refresh once after warmup.
TrainResult train(const SsdaTask& task, const TrainConfig& cfg);

// Fixed-budget model trained on all target data with true labels (L plus
// audit-labeled U). Never reads source data.
Model train_oracle(const SsdaTask& task, const TrainConfig& cfg);

// Same loop as mode None but source targets are oracle soft predictions
// from the first iteration; no warmup, no refresh.
TrainResult train_ideally_adapted(const SsdaTask& task, const TrainConfig& cfg,
                                  const Model& oracle);

// lambda * mean prediction entropy and its gradient.
std::pair<GradBuffer, double> unlabeled_loss_entropy(
    const Model& model, std::span<const std::vector<double>> batch_u,
    double lambda);

double accuracy_on(const Model& model, const std::vector<Example>& dataset);

}  // namespace slalab
