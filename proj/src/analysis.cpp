#include "slalab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "slalab/csvio.hpp"

namespace slalab {

using nlohmann::json;

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (int64_t c : counts) n += c;
  return n;
}

double ConfusionMatrix::accuracy() const {
  int64_t diag = 0;
  for (int i = 0; i < k; ++i) diag += at(i, i);
  int64_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(n);
}

std::vector<double> ConfusionMatrix::row_percent() const {
  std::vector<double> out(counts.size(), 0.0);
  for (int r = 0; r < k; ++r) {
    int64_t row_total = 0;
    for (int c = 0; c < k; ++c) row_total += at(r, c);
    if (row_total == 0) continue;
    for (int c = 0; c < k; ++c)
      out[static_cast<size_t>(r) * k + c] =
          100.0 * static_cast<double>(at(r, c)) / static_cast<double>(row_total);
  }
  return out;
}

int ConfusionMatrix::worst_row() const {
  auto pct = row_percent();
  int worst = 0;
  double worst_diag = 1e300;
  for (int r = 0; r < k; ++r) {
    double d = pct[static_cast<size_t>(r) * k + r];
    if (d < worst_diag) {
      worst_diag = d;
      worst = r;
    }
  }
  return worst;
}

std::pair<double, ConfusionMatrix> evaluate(const Model& model,
                                            const std::vector<Example>& dataset) {
  if (dataset.empty()) throw DomainError("evaluate: empty dataset");
  ConfusionMatrix cm;
  cm.k = model.num_classes;
  cm.counts.assign(static_cast<size_t>(cm.k) * static_cast<size_t>(cm.k), 0);
  for (const auto& ex : dataset) {
    if (ex.label < 0 || ex.label >= cm.k)
      throw DomainError("evaluate: label out of range");
    int pred = model.forward(ex.x).argmax();
    ++cm.counts[static_cast<size_t>(ex.label) * cm.k + pred];
  }
  return {cm.accuracy(), std::move(cm)};
}

CenterAudit center_audit(const Model& model, const SsdaTask& task) {
  const int k = task.num_classes();
  const auto& ux = task.unlabeled_target();
  const auto& truth = task.audit_labels("center_audit");

  std::vector<std::pair<FeatureVec, int>> ideal_feats;
  ideal_feats.reserve(ux.size());
  for (size_t i = 0; i < ux.size(); ++i)
    ideal_feats.emplace_back(model.forward_features(ux[i]), truth[i]);
  std::vector<FeatureVec> ideal = compute_centers(ideal_feats, k);

  std::vector<std::pair<FeatureVec, int>> labeled_feats;
  for (const auto& ex : task.labeled_target())
    labeled_feats.emplace_back(model.forward_features(ex.x), ex.label);
  std::vector<FeatureVec> labeled = compute_centers(labeled_feats, k);

  PseudoLabelTable table = assign_pseudo_labels(model, ux, 0);
  ProtoState ppc = build_ppc(model, ux, table, task.labeled_target(), 1.0, 0);

  CenterAudit audit;
  for (int c = 0; c < k; ++c) {
    audit.ideal_to_labeled.push_back(std::sqrt(
        sq_euclidean(ideal[static_cast<size_t>(c)], labeled[static_cast<size_t>(c)])));
    audit.ideal_to_pseudo.push_back(std::sqrt(
        sq_euclidean(ideal[static_cast<size_t>(c)], ppc.centers[static_cast<size_t>(c)])));
  }
  for (double d : audit.ideal_to_labeled) audit.mean_ideal_to_labeled += d;
  for (double d : audit.ideal_to_pseudo) audit.mean_ideal_to_pseudo += d;
  audit.mean_ideal_to_labeled /= static_cast<double>(k);
  audit.mean_ideal_to_pseudo /= static_cast<double>(k);
  return audit;
}

std::vector<KlTracePoint> kl_trace(const RunRecord& run) {
  if (run.kl_per_step.empty()) throw StateError("kl_trace: run has no KL trace");
  auto ema = ema_smooth(run.kl_per_step, 0.8);
  std::vector<KlTracePoint> out(run.kl_per_step.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i].step = static_cast<int64_t>(i) + 1;
    out[i].raw = run.kl_per_step[i];
    out[i].ema = ema[i];
  }
  return out;
}

namespace {

std::vector<std::pair<int, double>> top3(const SoftLabel& p) {
  std::vector<std::pair<int, double>> entries;
  for (int i = 0; i < p.k(); ++i) entries.emplace_back(i, p[i]);
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  entries.resize(std::min<size_t>(3, entries.size()));
  return entries;
}

double l1_distance(const SoftLabel& a, const SoftLabel& b) {
  double d = 0.0;
  for (int i = 0; i < a.k(); ++i) d += std::fabs(a[i] - b[i]);
  return d;
}

}  // namespace

AdaptedLabelSummary adapted_label_summary(const Model& model,
                                          const ProtoState& ppc,
                                          const Model& oracle,
                                          const SsdaTask& task, double alpha) {
  const int k = task.num_classes();
  std::vector<std::vector<double>> sum_adapted(
      static_cast<size_t>(k), std::vector<double>(static_cast<size_t>(k), 0.0));
  std::vector<std::vector<double>> sum_ideal = sum_adapted;
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);

  for (const auto& ex : task.source()) {
    SoftLabel y = SoftLabel::one_hot(ex.label, k);
    FeatureVec f = model.forward_features(ex.x);
    SoftLabel adapted = adapt_label(y, protonet_predict(ppc, f), alpha);
    SoftLabel ideal = adapt_label(y, oracle.forward(ex.x), alpha);
    auto& sa = sum_adapted[static_cast<size_t>(ex.label)];
    auto& si = sum_ideal[static_cast<size_t>(ex.label)];
    for (int i = 0; i < k; ++i) {
      sa[static_cast<size_t>(i)] += adapted[i];
      si[static_cast<size_t>(i)] += ideal[i];
    }
    ++counts[static_cast<size_t>(ex.label)];
  }

  AdaptedLabelSummary out;
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) throw EmptyClassError(c);
    ClassLabelSummary s;
    s.cls = c;
    auto sa = sum_adapted[static_cast<size_t>(c)];
    auto si = sum_ideal[static_cast<size_t>(c)];
    for (double& v : sa) v /= static_cast<double>(counts[static_cast<size_t>(c)]);
    for (double& v : si) v /= static_cast<double>(counts[static_cast<size_t>(c)]);
    s.mean_adapted = SoftLabel(std::move(sa));
    s.mean_ideal = SoftLabel(std::move(si));
    s.top3_adapted = top3(s.mean_adapted);
    s.top3_ideal = top3(s.mean_ideal);
    s.l1_adapted_to_ideal = l1_distance(s.mean_adapted, s.mean_ideal);
    s.l1_onehot_to_ideal = l1_distance(SoftLabel::one_hot(c, k), s.mean_ideal);
    out.classes.push_back(std::move(s));
  }
  return out;
}

void write_confusion_csv(const ConfusionMatrix& cm, double accuracy,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write confusion csv: " + path);
  out << "accuracy," << format_double(accuracy) << "\n";
  out << "worst_row," << cm.worst_row() << "\n";
  out << "true\\pred";
  for (int c = 0; c < cm.k; ++c) out << ",pred_" << c;
  out << ",row_pct_correct\n";
  auto pct = cm.row_percent();
  for (int r = 0; r < cm.k; ++r) {
    out << "class_" << r;
    for (int c = 0; c < cm.k; ++c) out << "," << cm.at(r, c);
    out << "," << format_double(pct[static_cast<size_t>(r) * cm.k + r]) << "\n";
  }
}

void write_center_audit_csv(const CenterAudit& audit, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write center audit csv: " + path);
  out << "class,ideal_to_labeled,ideal_to_pseudo\n";
  for (size_t c = 0; c < audit.ideal_to_labeled.size(); ++c)
    out << c << "," << format_double(audit.ideal_to_labeled[c]) << ","
        << format_double(audit.ideal_to_pseudo[c]) << "\n";
  out << "mean," << format_double(audit.mean_ideal_to_labeled) << ","
      << format_double(audit.mean_ideal_to_pseudo) << "\n";
}

void write_kl_trace_csv(const std::vector<KlTracePoint>& trace,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write kl trace csv: " + path);
  out << "step,kl_raw,kl_ema\n";
  for (const auto& p : trace)
    out << p.step << "," << format_double(p.raw) << "," << format_double(p.ema)
        << "\n";
}

void write_label_summary_csv(const AdaptedLabelSummary& summary,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write label summary csv: " + path);
  out << "class,kind,top1_class,top1_p,top2_class,top2_p,top3_class,top3_p,"
         "l1_to_mean_ideal\n";
  for (const auto& s : summary.classes) {
    auto row = [&](const char* kind, const std::vector<std::pair<int, double>>& t,
                   double l1) {
      out << s.cls << "," << kind;
      for (size_t i = 0; i < 3; ++i) {
        if (i < t.size())
          out << "," << t[i].first << "," << format_double(t[i].second);
        else
          out << ",,";
      }
      out << "," << format_double(l1) << "\n";
    };
    row("sla", s.top3_adapted, s.l1_adapted_to_ideal);
    row("ideal", s.top3_ideal, 0.0);
    row("onehot", {{s.cls, 1.0}}, s.l1_onehot_to_ideal);
  }
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

void apply_mode(TrainConfig& cfg, const std::string& mode) {
  if (mode == "st") {
    cfg.sla.correction_mode = CorrectionMode::None;
    cfg.unlabeled_loss = UnlabeledLossKind::None;
  } else if (mode == "ent") {
    cfg.sla.correction_mode = CorrectionMode::None;
    cfg.unlabeled_loss = UnlabeledLossKind::Entropy;
  } else if (mode == "sla") {
    cfg.sla.correction_mode = CorrectionMode::Ppc;
    cfg.unlabeled_loss = UnlabeledLossKind::None;
  } else if (mode == "sla+ent") {
    cfg.sla.correction_mode = CorrectionMode::Ppc;
    cfg.unlabeled_loss = UnlabeledLossKind::Entropy;
  } else if (mode == "self-pred") {
    cfg.sla.correction_mode = CorrectionMode::SelfPrediction;
    cfg.unlabeled_loss = UnlabeledLossKind::None;
  } else if (mode == "ideal") {
    cfg.sla.correction_mode = CorrectionMode::None;
    cfg.unlabeled_loss = UnlabeledLossKind::None;
  } else {
    throw ConfigError("unknown mode: " + mode);
  }
}

SweepGrid SweepGrid::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open sweep grid: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed sweep grid: ") + e.what());
  }
  SweepGrid grid;
  try {
    grid.spec = DomainSpec::load(j.at("spec_file").get<std::string>());
    grid.n_shot = j.value("n_shot", 3);
    grid.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    for (const auto& cj : j.at("configs")) {
      SweepConfigEntry e;
      e.name = cj.at("name").get<std::string>();
      e.mode = cj.value("mode", "sla");
      apply_mode(e.cfg, e.mode);
      e.cfg.sla.alpha = cj.value("alpha", e.cfg.sla.alpha);
      e.cfg.sla.temperature = cj.value("temperature", e.cfg.sla.temperature);
      e.cfg.sla.update_interval = cj.value("interval", e.cfg.sla.update_interval);
      e.cfg.sla.warmup = cj.value("warmup", e.cfg.sla.warmup);
      e.cfg.entropy_weight = cj.value("lambda", e.cfg.entropy_weight);
      e.cfg.total_iters = cj.value("iters", e.cfg.total_iters);
      e.cfg.eval_every = cj.value("eval_every", e.cfg.eval_every);
      grid.configs.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("sweep grid missing fields: ") + e.what());
  }
  if (grid.seeds.empty() || grid.configs.empty())
    throw ConfigError("sweep grid needs at least one seed and one config");
  return grid;
}

std::string select_best_by_validation(const std::vector<SweepAggregate>& aggs) {
  std::string best;
  double best_val = -1.0;
  for (const auto& a : aggs) {
    if (a.runs_ok > 0 && a.val_mean > best_val) {
      best_val = a.val_mean;
      best = a.config_name;
    }
  }
  return best;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

SweepResult sweep(const SweepGrid& grid) {
  SweepResult result;
  for (const auto& entry : grid.configs) {
    std::vector<double> vals, tests;
    for (uint64_t seed : grid.seeds) {
      SweepRunRow row;
      row.config_name = entry.name;
      row.seed = seed;
      try {
        SsdaTask task = generate_task(grid.spec, grid.n_shot, seed);
        TrainConfig cfg = entry.cfg;
        cfg.seed = seed;
        TrainResult res;
        if (entry.mode == "ideal") {
          Model oracle = train_oracle(task, cfg);
          res = train_ideally_adapted(task, cfg, oracle);
        } else {
          res = train(task, cfg);
        }
        row.val_acc = res.record.final_val_acc;
        row.test_acc = res.record.final_test_acc;
        row.status = "ok";
        vals.push_back(row.val_acc);
        tests.push_back(row.test_acc);
      } catch (const std::exception& e) {
        row.status = e.what();
      }
      result.rows.push_back(std::move(row));
    }
    SweepAggregate agg;
    agg.config_name = entry.name;
    agg.runs_ok = static_cast<int>(vals.size());
    std::tie(agg.val_mean, agg.val_std) = mean_std(vals);
    std::tie(agg.test_mean, agg.test_std) = mean_std(tests);
    result.aggregates.push_back(std::move(agg));
  }
  result.best_config = select_best_by_validation(result.aggregates);
  return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& runs_path,
                     const std::string& agg_path) {
  {
    std::ofstream out(runs_path, std::ios::binary);
    if (!out) throw LoadError("cannot write sweep runs csv: " + runs_path);
    out << "config,seed,val_acc,test_acc,status\n";
    for (const auto& r : result.rows)
      out << r.config_name << "," << r.seed << "," << format_double(r.val_acc)
          << "," << format_double(r.test_acc) << "," << r.status << "\n";
  }
  {
    std::ofstream out(agg_path, std::ios::binary);
    if (!out) throw LoadError("cannot write sweep aggregate csv: " + agg_path);
    out << "config,runs_ok,val_mean,val_std,test_mean,test_std,selected\n";
    for (const auto& a : result.aggregates)
      out << a.config_name << "," << a.runs_ok << "," << format_double(a.val_mean)
          << "," << format_double(a.val_std) << "," << format_double(a.test_mean)
          << "," << format_double(a.test_std) << ","
          << (a.config_name == result.best_config ? 1 : 0) << "\n";
  }
}

}  // namespace slalab
