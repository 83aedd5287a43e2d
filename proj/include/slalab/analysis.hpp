#pragma once

#include <string>
#include <utility>
#include <vector>

#include "slalab/trainer.hpp"

namespace slalab {

struct ConfusionMatrix {
  int k = 0;
  std::vector<int64_t> counts;  // row-major, counts[true*k + pred]

  int64_t at(int true_cls, int pred_cls) const {
    return counts[static_cast<size_t>(true_cls) * k + pred_cls];
  }
  int64_t total() const;
  double accuracy() const;
  // Row-normalized percentages; all-zero rows stay zero.
  std::vector<double> row_percent() const;
  // True class with the lowest diagonal percentage.
  int worst_row() const;
};

// Accuracy plus the confusion matrix, rows indexed by true class.
std::pair<double, ConfusionMatrix> evaluate(const Model& model,
                                            const std::vector<Example>& dataset);

struct CenterAudit {
  std::vector<double> ideal_to_labeled;  // per-class unsquared L2
  std::vector<double> ideal_to_pseudo;
  double mean_ideal_to_labeled = 0.0;
  double mean_ideal_to_pseudo = 0.0;
};

// Ideal centers from true-labeled U (audit access), labeled-target centers
// from L, pseudo centers from the model's own pseudo labels.
CenterAudit center_audit(const Model& model, const SsdaTask& task);

struct KlTracePoint {
  int64_t step = 0;
  double raw = 0.0;
  double ema = 0.0;
};

// Raw per-step source KL plus its EMA-0.8 smoothing.
std::vector<KlTracePoint> kl_trace(const RunRecord& run);

struct ClassLabelSummary {
  int cls = 0;
  SoftLabel mean_adapted;
  SoftLabel mean_ideal;
  std::vector<std::pair<int, double>> top3_adapted;
  std::vector<std::pair<int, double>> top3_ideal;
  double l1_adapted_to_ideal = 0.0;
  double l1_onehot_to_ideal = 0.0;
};

struct AdaptedLabelSummary {
  std::vector<ClassLabelSummary> classes;
};

AdaptedLabelSummary adapted_label_summary(const Model& model,
                                          const ProtoState& ppc,
                                          const Model& oracle,
                                          const SsdaTask& task, double alpha);

void write_confusion_csv(const ConfusionMatrix& cm, double accuracy,
                         const std::string& path);
void write_center_audit_csv(const CenterAudit& audit, const std::string& path);
void write_kl_trace_csv(const std::vector<KlTracePoint>& trace,
                        const std::string& path);
void write_label_summary_csv(const AdaptedLabelSummary& summary,
                             const std::string& path);

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

struct SweepConfigEntry {
  std::string name;
  TrainConfig cfg;
  std::string mode;  // st | ent | sla | sla+ent | self-pred | ideal
};

struct SweepGrid {
  DomainSpec spec;
  int n_shot = 3;
  std::vector<uint64_t> seeds;  // used for both task and training
  std::vector<SweepConfigEntry> configs;

  static SweepGrid load(const std::string& path);
};

struct SweepRunRow {
  std::string config_name;
  uint64_t seed = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  std::string status;  // "ok" or the error message
};

struct SweepAggregate {
  std::string config_name;
  int runs_ok = 0;
  double val_mean = 0.0, val_std = 0.0;
  double test_mean = 0.0, test_std = 0.0;
};

struct SweepResult {
  std::vector<SweepRunRow> rows;
  std::vector<SweepAggregate> aggregates;
  std::string best_config;  // highest mean validation accuracy
};

SweepResult sweep(const SweepGrid& grid);

// Selection by validation mean only; test columns are never consulted.
std::string select_best_by_validation(const std::vector<SweepAggregate>& aggs);

void write_sweep_csv(const SweepResult& result, const std::string& runs_path,
                     const std::string& agg_path);

// Applies a CLI mode string onto a TrainConfig.
void apply_mode(TrainConfig& cfg, const std::string& mode);

}  // namespace slalab
