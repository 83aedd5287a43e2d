#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "slalab/mathcore.hpp"

namespace slalab {

// Source domain: isotropic Gaussian mixture, one component per class.
// Target domain: the same mixture rotated in the plane of dims 0/1,
// translated, and with per-class mean jitter.
struct DomainSpec {
  int num_classes = 5;                           // K
  int input_dim = 2;                             // m
  std::vector<std::vector<double>> class_means;  // K x m, source components
  double cov_scale = 0.5;                        // per-dim stddev
  double rotation = 0.0;                         // radians
  std::vector<double> translation;               // length m
  double jitter_scale = 0.0;                     // per-class mean jitter stddev
  int source_per_class = 200;
  int unlabeled_per_class = 200;
  int test_per_class = 100;
  int val_per_class = 3;
  // Minimum error a source-only linear probe must make on test_target.
  // Zero disables the gate (used for no-shift configurations).
  double min_source_only_error = 0.2;

  void validate() const;
  static DomainSpec load(const std::string& path);
  void save(const std::string& path) const;
};

struct Example {
  std::vector<double> x;
  int label = 0;
};

// The (S, L, U, test) quadruple plus a small validation split. U's true
// labels are retained in a sealed audit field; every read through
// audit_labels() is recorded with its caller tag.
class SsdaTask {
 public:
  static SsdaTask from_parts(DomainSpec spec, int n_shot, uint64_t seed,
                             std::vector<Example> source,
                             std::vector<Example> labeled_target,
                             std::vector<std::vector<double>> unlabeled_x,
                             std::vector<int> unlabeled_true_labels,
                             std::vector<Example> test_target,
                             std::vector<Example> val_target);

  const DomainSpec& spec() const { return spec_; }
  int n_shot() const { return n_shot_; }
  uint64_t seed() const { return seed_; }
  int num_classes() const { return spec_.num_classes; }
  int input_dim() const { return spec_.input_dim; }

  const std::vector<Example>& source() const { return source_; }
  const std::vector<Example>& labeled_target() const { return labeled_; }
  const std::vector<std::vector<double>>& unlabeled_target() const {
    return unlabeled_x_;
  }
  const std::vector<Example>& test_target() const { return test_; }
  const std::vector<Example>& val_target() const { return val_; }

  // Sealed accessor: records the caller in the audit log. Only oracle and
  // analysis paths may use it; trainer paths are checked against the log.
  const std::vector<int>& audit_labels(std::string_view caller) const;
  const std::vector<std::string>& audit_access_log() const { return audit_log_; }

 private:
  friend void export_task(const SsdaTask& task, const std::string& path);
  SsdaTask() = default;

  DomainSpec spec_;
  int n_shot_ = 0;
  uint64_t seed_ = 0;
  std::vector<Example> source_;
  std::vector<Example> labeled_;
  std::vector<std::vector<double>> unlabeled_x_;
  std::vector<int> unlabeled_audit_;
  std::vector<Example> test_;
  std::vector<Example> val_;
  mutable std::vector<std::string> audit_log_;
};

// Deterministic in (spec, n_shot, seed). Per-class jitter seeds are
// resampled (bounded retries) until the source-only misalignment gate
// holds; throws GenerationError when the bound is exceeded.
SsdaTask generate_task(const DomainSpec& spec, int n_shot, uint64_t seed);

// Softmax-regression probe trained on S only, evaluated on test_target.
// Returns the error rate; this is the misalignment gate.
double source_only_linear_error(const std::vector<Example>& source,
                                const std::vector<Example>& test, int k, int m);

// Versioned JSON task file with an FNV checksum over the body.
void export_task(const SsdaTask& task, const std::string& path);
SsdaTask import_task(const std::string& path);

struct Batch {
  std::vector<int> source_idx;
  std::vector<int> labeled_idx;
  std::vector<int> unlabeled_idx;  // stable ids into unlabeled_target()
};

// Replacement-free shuffled cycling per split; reshuffles at epoch
// boundaries with the plan's own stream.
class BatchPlan {
 public:
  BatchPlan(const SsdaTask& task, int b_source, int b_labeled, int b_unlabeled,
            Rng rng);

  Batch next(const SsdaTask& task);

  int b_source() const { return b_source_; }
  int b_labeled() const { return b_labeled_; }
  int b_unlabeled() const { return b_unlabeled_; }

 private:
  struct Cycler {
    std::vector<int> order;
    size_t pos = 0;
    Rng rng;
    Cycler(int n, Rng r);
    int next();
  };
  int b_source_, b_labeled_, b_unlabeled_;
  Cycler source_, labeled_, unlabeled_;
};

inline Batch next_batch(const SsdaTask& task, BatchPlan& plan) {
  return plan.next(task);
}

}  // namespace slalab
