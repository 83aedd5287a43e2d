#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "slalab/analysis.hpp"

namespace slalab {

// Committed reference numbers for the default spec, produced once by
// `calibrate` and compared against by CI / the acceptance suite.
// Accuracies are stored in percentage points.
struct ExpectedResults {
  std::string spec_file;
  std::string spec_hash;
  int n_shot = 3;
  std::vector<uint64_t> seeds;
  int64_t budget = 5000;

  struct Table2 {
    double st_mean = 0.0;
    double ideal_mean = 0.0;
    double margin = 0.0;
    double tolerance_pts = 3.0;
  } table2;

  struct Table4 {
    double mean_ideal_to_labeled = 0.0;
    double mean_ideal_to_pseudo = 0.0;
    int seeds_direction_ok = 0;
    int seeds_total = 0;
  } table4;

  struct Fig4 {
    double ema_ratio_mean = 0.0;  // ema(final) / ema(step 100), averaged
    int seeds_below_10pct = 0;
    int seeds_total = 0;
  } fig4;

  struct MainEffect {
    int64_t warmup = 500;  // tuned by validation during calibration
    double st_mean = 0.0;
    double ent_mean = 0.0;
    double sla_mean = 0.0;
    double sla_ent_mean = 0.0;
    double sla_margin = 0.0;      // sla_mean - st_mean
    double sla_ent_margin = 0.0;  // sla_ent_mean - ent_mean
    double tolerance_pts = 1.0;
  } main_effect;

  struct WarmupSweep {
    std::vector<int64_t> w_values;
    std::vector<double> means;
    double noise_band_pts = 1.0;  // max(1, largest per-cell std)
    double selfpred_mean = 0.0;   // self-prediction after full convergence
    double st_full_mean = 0.0;    // plain S+T at the matching budget
  } warmup_sweep;

  struct Fig6 {
    double closer_fraction_mean = 0.0;
  } fig6;

  bool oracle_beats_st_all_seeds = false;

  struct SweepBaseline {
    double val_mean = 0.0;
    double test_mean = 0.0;
  };
  std::vector<std::pair<std::string, SweepBaseline>> sweep_baselines;
  double sweep_tolerance_pts = 1.0;

  void save(const std::string& path) const;
  static ExpectedResults load(const std::string& path);
};

struct HarnessConfig {
  DomainSpec spec;
  std::string spec_file;
  std::string spec_hash;
  int n_shot = 3;
  std::vector<uint64_t> seeds = {11, 12, 13, 14, 15};
  int64_t budget = 5000;
  int64_t oracle_iters = 3000;
  bool tune_warmup = true;  // when false, use `warmup` as-is
  int64_t warmup = 500;
  std::vector<int64_t> warmup_grid = {200, 500, 1000};
};

// Runs the full default-spec battery: S+T, oracle, ideally-adapted, ENT,
// SLA (warmup tuned by validation), SLA+ENT, the warmup sweep, the
// self-prediction convergence check and the adapted-label audit.
ExpectedResults run_harness(const HarnessConfig& hc, std::ostream* log);

// Compares a fresh measurement against committed numbers at the committed
// tolerances. Returns human-readable mismatch lines; empty means agreement.
std::vector<std::string> compare_expected(const ExpectedResults& committed,
                                          const ExpectedResults& measured);

// Compares sweep aggregates against the committed sweep baselines.
std::vector<std::string> compare_sweep_expected(
    const ExpectedResults& committed, const std::vector<SweepAggregate>& aggs);

std::string file_fnv_hash(const std::string& path);

}  // namespace slalab
