#include "slalab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "slalab/csvio.hpp"

namespace slalab {

using nlohmann::json;

namespace {

enum : uint64_t {
  kStreamModelInit = 1,
  kStreamBatches = 2,
  kStreamOracleInit = 3,
  kStreamOracleBatches = 4,
};

const char* unlabeled_loss_name(UnlabeledLossKind k) {
  return k == UnlabeledLossKind::Entropy ? "entropy" : "none";
}

const char* correction_mode_name(CorrectionMode m) {
  switch (m) {
    case CorrectionMode::SelfPrediction: return "self-prediction";
    case CorrectionMode::Ppc: return "ppc";
    default: return "none";
  }
}

}  // namespace

void TrainConfig::validate() const {
  sla.validate();
  if (total_iters < 1) throw ConfigError("TrainConfig: total_iters must be >= 1");
  if (sla.correction_mode != CorrectionMode::None && total_iters <= sla.warmup)
    throw ConfigError("TrainConfig: total_iters must exceed warmup W");
  if (entropy_weight < 0.0) throw ConfigError("TrainConfig: lambda must be >= 0");
  if (eval_every < 1) throw ConfigError("TrainConfig: eval_every must be >= 1");
  if (b_source < 1 || b_labeled < 1 || b_unlabeled < 1)
    throw ConfigError("TrainConfig: batch sizes must be >= 1");
  if (oracle_iters < 1) throw ConfigError("TrainConfig: oracle_iters must be >= 1");
}

std::string TrainConfig::to_json_string() const {
  json j;
  j["alpha"] = sla.alpha;
  j["temperature"] = sla.temperature;
  j["update_interval"] = sla.update_interval;
  j["warmup"] = sla.warmup;
  j["correction_mode"] = correction_mode_name(sla.correction_mode);
  j["unlabeled_loss"] = unlabeled_loss_name(unlabeled_loss);
  j["entropy_weight"] = entropy_weight;
  j["total_iters"] = total_iters;
  j["eval_every"] = eval_every;
  j["batch_sizes"] = {b_source, b_labeled, b_unlabeled};
  j["seed"] = seed;
  j["hidden"] = hidden;
  j["feature_dim"] = feature_dim;
  j["base_lr"] = base_lr;
  j["momentum"] = momentum;
  j["decay_gamma"] = decay_gamma;
  j["decay_power"] = decay_power;
  j["oracle_iters"] = oracle_iters;
  j["parity_scheduler_refresh"] = parity_scheduler_refresh;
  j["eval_ppc_as_classifier"] = eval_ppc_as_classifier;
  return j.dump();
}

std::string TrainConfig::config_hash() const {
  return hex64(fnv1a64(to_json_string()));
}

double accuracy_on(const Model& model, const std::vector<Example>& dataset) {
  if (dataset.empty()) throw DomainError("accuracy_on: empty dataset");
  int correct = 0;
  for (const auto& ex : dataset) {
    if (model.forward(ex.x).argmax() == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::pair<GradBuffer, double> unlabeled_loss_entropy(
    const Model& model, std::span<const std::vector<double>> batch_u,
    double lambda) {
  if (lambda < 0.0) throw ConfigError("unlabeled_loss_entropy: lambda < 0");
  auto [g, h] = backward_entropy(model, batch_u);
  g.scale(lambda);
  return {std::move(g), lambda * h};
}

namespace {

struct LoopOptions {
  const Model* ideal_oracle = nullptr;  // non-null: ideally-adapted variant
};

double mean_center_shift(const ProtoState& now, const ProtoState& before) {
  double s = 0.0;
  for (int c = 0; c < now.k(); ++c)
    s += std::sqrt(sq_euclidean(now.centers[static_cast<size_t>(c)],
                                before.centers[static_cast<size_t>(c)]));
  return s / static_cast<double>(now.k());
}

double protonet_accuracy(const ProtoState& state, const Model& model,
                         const std::vector<Example>& dataset) {
  int correct = 0;
  for (const auto& ex : dataset) {
    FeatureVec f = model.forward_features(ex.x);
    if (protonet_predict(state, f).argmax() == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

TrainResult run_loop(const SsdaTask& task, const TrainConfig& cfg,
                     const LoopOptions& opts) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const size_t audit_start = task.audit_access_log().size();
  const bool ideal = opts.ideal_oracle != nullptr;
  const CorrectionMode mode = ideal ? CorrectionMode::None : cfg.sla.correction_mode;

  Rng root(cfg.seed);
  Rng init_rng = root.stream(kStreamModelInit);
  Model model = Model::init(task.input_dim(), cfg.hidden, cfg.feature_dim,
                            task.num_classes(), init_rng);
  SgdState opt = SgdState::init(model, cfg.base_lr, cfg.momentum,
                                cfg.decay_gamma, cfg.decay_power);
  BatchPlan plan(task, cfg.b_source, cfg.b_labeled, cfg.b_unlabeled,
                 root.stream(kStreamBatches));

  std::optional<PseudoLabelTable> table;
  std::optional<ProtoState> ppc;

  RunRecord rec;
  rec.config_hash = cfg.config_hash();
  rec.kl_per_step.reserve(static_cast<size_t>(cfg.total_iters));

  std::vector<CeExample> src_batch(static_cast<size_t>(cfg.b_source));
  std::vector<double> src_w(static_cast<size_t>(cfg.b_source), 1.0);
  std::vector<CeExample> lbl_batch(static_cast<size_t>(cfg.b_labeled));
  std::vector<double> lbl_w(static_cast<size_t>(cfg.b_labeled), 1.0);
  std::vector<std::vector<double>> unl_batch(static_cast<size_t>(cfg.b_unlabeled));

  const int k = task.num_classes();

  for (int64_t e = 1; e <= cfg.total_iters; ++e) {
    // Scheduler refresh right after warmup so label adaptation trains at a
    // higher learning rate; in mode None only under the parity protocol.
    if (!ideal && e == cfg.sla.warmup + 1 &&
        (mode != CorrectionMode::None || cfg.parity_scheduler_refresh)) {
      scheduler_refresh(opt);
    }

    if (mode == CorrectionMode::Ppc) {
      if (auto refreshed = maybe_refresh(cfg.sla, e, model, task)) {
        RefreshEvent ev;
        ev.step = e;
        ev.pseudo_counts = refreshed->first.class_counts(k);
        ev.mean_center_shift =
            ppc ? mean_center_shift(refreshed->second, *ppc) : 0.0;
        if (cfg.eval_ppc_as_classifier)
          ev.ppc_test_acc =
              protonet_accuracy(refreshed->second, model, task.test_target());
        rec.refreshes.push_back(std::move(ev));
        table = std::move(refreshed->first);
        ppc = std::move(refreshed->second);
      }
    }

    Batch b = plan.next(task);

    double kl_sum = 0.0;
    for (int i = 0; i < cfg.b_source; ++i) {
      const Example& ex = task.source()[static_cast<size_t>(b.source_idx[static_cast<size_t>(i)])];
      SoftLabel y = SoftLabel::one_hot(ex.label, k);
      kl_sum += kl_divergence(y, model.forward(ex.x));
      SoftLabel target =
          ideal ? opts.ideal_oracle->forward(ex.x)
                : adapted_source_target(cfg.sla, e, y, model,
                                        ppc ? &*ppc : nullptr, ex.x);
      src_batch[static_cast<size_t>(i)] = CeExample{ex.x, std::move(target)};
    }
    rec.kl_per_step.push_back(kl_sum / static_cast<double>(cfg.b_source));

    for (int i = 0; i < cfg.b_labeled; ++i) {
      const Example& ex = task.labeled_target()[static_cast<size_t>(b.labeled_idx[static_cast<size_t>(i)])];
      lbl_batch[static_cast<size_t>(i)] = CeExample{ex.x, SoftLabel::one_hot(ex.label, k)};
    }

    auto [grads, loss_s] = backward_ce(model, src_batch, src_w);
    auto [g_l, loss_l] = backward_ce(model, lbl_batch, lbl_w);
    grads.add(g_l);

    double loss_u = 0.0;
    if (cfg.unlabeled_loss == UnlabeledLossKind::Entropy) {
      for (int i = 0; i < cfg.b_unlabeled; ++i)
        unl_batch[static_cast<size_t>(i)] =
            task.unlabeled_target()[static_cast<size_t>(b.unlabeled_idx[static_cast<size_t>(i)])];
      auto [g_u, lu] = unlabeled_loss_entropy(model, unl_batch, cfg.entropy_weight);
      grads.add(g_u);
      loss_u = lu;
    }

    sgd_step(model, grads, opt);

    if (e == cfg.sla.warmup) rec.warmup_param_hash = model.param_hash();

    if (e % cfg.eval_every == 0 || e == cfg.total_iters) {
      EvalPoint pt;
      pt.step = e;
      pt.test_acc = accuracy_on(model, task.test_target());
      pt.val_acc = accuracy_on(model, task.val_target());
      pt.loss_source = loss_s;
      pt.loss_labeled = loss_l;
      pt.loss_unlabeled = loss_u;
      pt.loss_total = loss_s + loss_l + loss_u;
      pt.kl_source = rec.kl_per_step.back();
      pt.param_hash = model.param_hash();
      rec.evals.push_back(pt);
    }
  }

  rec.final_test_acc = rec.evals.back().test_acc;
  rec.final_val_acc = rec.evals.back().val_acc;
  const auto& log = task.audit_access_log();
  rec.audit_accesses.assign(log.begin() + static_cast<long>(audit_start), log.end());
  rec.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  TrainResult res{std::move(rec), std::move(model), std::move(ppc), std::move(opt)};
  return res;
}

}  // namespace

TrainResult train(const SsdaTask& task, const TrainConfig& cfg) {
  return run_loop(task, cfg, LoopOptions{});
}

Model train_oracle(const SsdaTask& task, const TrainConfig& cfg) {
  cfg.validate();
  const int k = task.num_classes();

  // All target data with true labels; source is never touched.
  std::vector<Example> pool = task.labeled_target();
  const auto& audit = task.audit_labels("train_oracle");
  const auto& ux = task.unlabeled_target();
  for (size_t i = 0; i < ux.size(); ++i)
    pool.push_back(Example{ux[i], audit[i]});

  Rng root(cfg.seed);
  Rng init_rng = root.stream(kStreamOracleInit);
  Model model = Model::init(task.input_dim(), cfg.hidden, cfg.feature_dim, k,
                            init_rng);
  SgdState opt = SgdState::init(model, cfg.base_lr, cfg.momentum,
                                cfg.decay_gamma, cfg.decay_power);

  const int bsz = cfg.b_source + cfg.b_labeled;
  Rng cyc_rng = root.stream(kStreamOracleBatches);
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  cyc_rng.shuffle(order);
  size_t pos = 0;

  std::vector<CeExample> batch(static_cast<size_t>(bsz));
  std::vector<double> w(static_cast<size_t>(bsz), 1.0);
  for (int64_t e = 1; e <= cfg.oracle_iters; ++e) {
    for (int i = 0; i < bsz; ++i) {
      if (pos == order.size()) {
        cyc_rng.shuffle(order);
        pos = 0;
      }
      const Example& ex = pool[static_cast<size_t>(order[pos++])];
      batch[static_cast<size_t>(i)] = CeExample{ex.x, SoftLabel::one_hot(ex.label, k)};
    }
    auto [grads, loss] = backward_ce(model, batch, w);
    (void)loss;
    sgd_step(model, grads, opt);
  }
  return model;
}

TrainResult train_ideally_adapted(const SsdaTask& task, const TrainConfig& cfg,
                                  const Model& oracle) {
  LoopOptions opts;
  opts.ideal_oracle = &oracle;
  return run_loop(task, cfg, opts);
}

// ---------------------------------------------------------------------------
// RunRecord serialization
// ---------------------------------------------------------------------------

namespace {
const char* kMetricsHeader =
    "step,test_acc,val_acc,loss_total,loss_source,loss_labeled,loss_unlabeled,"
    "kl_source,param_hash";
}

std::string RunRecord::metrics_csv_string() const {
  std::string out(kMetricsHeader);
  out += "\n";
  for (const auto& p : evals) {
    out += std::to_string(p.step);
    out += ",";
    out += format_double(p.test_acc);
    out += ",";
    out += format_double(p.val_acc);
    out += ",";
    out += format_double(p.loss_total);
    out += ",";
    out += format_double(p.loss_source);
    out += ",";
    out += format_double(p.loss_labeled);
    out += ",";
    out += format_double(p.loss_unlabeled);
    out += ",";
    out += format_double(p.kl_source);
    out += ",";
    out += hex64(p.param_hash);
    out += "\n";
  }
  return out;
}

void RunRecord::write_metrics_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write metrics csv: " + path);
  out << metrics_csv_string();
}

void RunRecord::write_refresh_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write refresh csv: " + path);
  size_t k = refreshes.empty() ? 0 : refreshes[0].pseudo_counts.size();
  out << "step,mean_center_shift,ppc_test_acc";
  for (size_t c = 0; c < k; ++c) out << ",count_" << c;
  out << "\n";
  for (const auto& ev : refreshes) {
    out << ev.step << "," << format_double(ev.mean_center_shift) << ","
        << format_double(ev.ppc_test_acc);
    for (int64_t c : ev.pseudo_counts) out << "," << c;
    out << "\n";
  }
}

void RunRecord::write_kl_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write kl csv: " + path);
  out << "step,kl_source\n";
  for (size_t i = 0; i < kl_per_step.size(); ++i)
    out << (i + 1) << "," << format_double(kl_per_step[i]) << "\n";
}

void RunRecord::write_summary_json(const std::string& path,
                                   const std::string& config_json) const {
  json j;
  j["config_hash"] = config_hash;
  j["config"] = json::parse(config_json);
  j["final_test_acc"] = final_test_acc;
  j["final_val_acc"] = final_val_acc;
  j["checkpoint"] = checkpoint_path;
  j["warmup_param_hash"] = hex64(warmup_param_hash);
  j["num_refreshes"] = refreshes.size();
  j["audit_accesses"] = audit_accesses;
  j["wall_clock_sec"] = wall_clock_sec;
  j["model_selection"] = "final-iteration model; selection metric val_acc";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write summary json: " + path);
  out << j.dump(2) << "\n";
}

RunRecord RunRecord::load(const std::string& prefix) {
  RunRecord rec;
  auto rows = read_csv(prefix + "_metrics.csv");
  if (rows.empty() || rows[0].empty() || rows[0][0] != "step")
    throw LoadError("bad metrics csv header: " + prefix);
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 9) throw LoadError("bad metrics csv row");
    EvalPoint p;
    p.step = std::stoll(r[0]);
    p.test_acc = parse_double(r[1]);
    p.val_acc = parse_double(r[2]);
    p.loss_total = parse_double(r[3]);
    p.loss_source = parse_double(r[4]);
    p.loss_labeled = parse_double(r[5]);
    p.loss_unlabeled = parse_double(r[6]);
    p.kl_source = parse_double(r[7]);
    p.param_hash = std::stoull(r[8], nullptr, 16);
    rec.evals.push_back(p);
  }
  auto klrows = read_csv(prefix + "_kl.csv");
  for (size_t i = 1; i < klrows.size(); ++i) {
    if (klrows[i].size() != 2) throw LoadError("bad kl csv row");
    rec.kl_per_step.push_back(parse_double(klrows[i][1]));
  }
  if (!rec.evals.empty()) {
    rec.final_test_acc = rec.evals.back().test_acc;
    rec.final_val_acc = rec.evals.back().val_acc;
  }
  return rec;
}

}  // namespace slalab
