#include "slalab/sla.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace slalab {

void SlaConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("SlaConfig: alpha must be in [0, 1]");
  if (!(temperature > 0.0))
    throw ConfigError("SlaConfig: temperature must be > 0");
  if (update_interval < 1) throw ConfigError("SlaConfig: interval I must be >= 1");
  if (warmup < 0) throw ConfigError("SlaConfig: warmup W must be >= 0");
}

std::vector<int64_t> PseudoLabelTable::class_counts(int k) const {
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  for (int c : labels) {
    if (c >= 0 && c < k) ++counts[static_cast<size_t>(c)];
  }
  return counts;
}

std::vector<FeatureVec> compute_centers(
    const std::vector<std::pair<FeatureVec, int>>& features, int k) {
  if (k < 2) throw ShapeError("compute_centers: K must be >= 2");
  if (features.empty()) throw EmptyClassError(0);
  const int dim = features[0].first.dim();
  std::vector<std::vector<double>> sums(static_cast<size_t>(k),
                                        std::vector<double>(static_cast<size_t>(dim), 0.0));
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  for (const auto& [f, cls] : features) {
    if (cls < 0 || cls >= k) throw DomainError("compute_centers: class out of range");
    if (f.dim() != dim) throw ShapeError("compute_centers: feature dim mismatch");
    auto& s = sums[static_cast<size_t>(cls)];
    for (int d = 0; d < dim; ++d) s[static_cast<size_t>(d)] += f.v[static_cast<size_t>(d)];
    ++counts[static_cast<size_t>(cls)];
  }
  std::vector<FeatureVec> centers;
  centers.reserve(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) throw EmptyClassError(c);
    auto s = sums[static_cast<size_t>(c)];
    for (double& v : s) v /= static_cast<double>(counts[static_cast<size_t>(c)]);
    centers.emplace_back(std::move(s));
  }
  return centers;
}

SoftLabel protonet_predict(const ProtoState& state, const FeatureVec& feat) {
  if (state.k() < 2) throw ShapeError("protonet_predict: need K >= 2 centers");
  std::vector<double> logits(static_cast<size_t>(state.k()));
  for (int c = 0; c < state.k(); ++c) {
    logits[static_cast<size_t>(c)] =
        -state.temperature * sq_euclidean(feat, state.centers[static_cast<size_t>(c)]);
  }
  return softmax(logits);
}

std::pair<std::vector<double>, std::vector<double>> protonet_as_linear(
    const ProtoState& state) {
  const int k = state.k();
  const int f = state.feature_dim();
  std::vector<double> w(static_cast<size_t>(k) * static_cast<size_t>(f));
  std::vector<double> b(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) {
    const auto& center = state.centers[static_cast<size_t>(c)].v;
    double norm2 = 0.0;
    for (int d = 0; d < f; ++d) {
      w[static_cast<size_t>(c) * f + d] = 2.0 * state.temperature * center[static_cast<size_t>(d)];
      norm2 += center[static_cast<size_t>(d)] * center[static_cast<size_t>(d)];
    }
    b[static_cast<size_t>(c)] = -state.temperature * norm2;
  }
  return {std::move(w), std::move(b)};
}

PseudoLabelTable assign_pseudo_labels(
    const Model& model, const std::vector<std::vector<double>>& unlabeled,
    int64_t model_step) {
  PseudoLabelTable t;
  t.model_step = model_step;
  t.labels.reserve(unlabeled.size());
  for (const auto& x : unlabeled) t.labels.push_back(model.forward(x).argmax());
  return t;
}

ProtoState build_ppc(const Model& model,
                     const std::vector<std::vector<double>>& unlabeled,
                     const PseudoLabelTable& table,
                     const std::vector<Example>& labeled_target,
                     double temperature, int64_t built_at_step) {
  if (table.labels.size() != unlabeled.size())
    throw ShapeError("build_ppc: table must cover the unlabeled ids");
  const int k = model.num_classes;
  const int f = model.feature_dim;

  std::vector<std::vector<double>> sums(static_cast<size_t>(k),
                                        std::vector<double>(static_cast<size_t>(f), 0.0));
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  for (size_t i = 0; i < unlabeled.size(); ++i) {
    FeatureVec feat = model.forward_features(unlabeled[i]);
    int cls = table.labels[i];
    auto& s = sums[static_cast<size_t>(cls)];
    for (int d = 0; d < f; ++d) s[static_cast<size_t>(d)] += feat.v[static_cast<size_t>(d)];
    ++counts[static_cast<size_t>(cls)];
  }

  // Labeled-target feature sums, the fallback for pseudo-empty classes.
  std::vector<std::vector<double>> lsums(static_cast<size_t>(k),
                                         std::vector<double>(static_cast<size_t>(f), 0.0));
  std::vector<int64_t> lcounts(static_cast<size_t>(k), 0);
  for (const auto& ex : labeled_target) {
    FeatureVec feat = model.forward_features(ex.x);
    auto& s = lsums[static_cast<size_t>(ex.label)];
    for (int d = 0; d < f; ++d) s[static_cast<size_t>(d)] += feat.v[static_cast<size_t>(d)];
    ++lcounts[static_cast<size_t>(ex.label)];
  }

  ProtoState state;
  state.temperature = temperature;
  state.source_tag = CenterSource::PseudoCenters;
  state.built_at_step = built_at_step;
  state.centers.reserve(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] > 0) {
      auto s = sums[static_cast<size_t>(c)];
      for (double& v : s) v /= static_cast<double>(counts[static_cast<size_t>(c)]);
      state.centers.emplace_back(std::move(s));
    } else if (lcounts[static_cast<size_t>(c)] > 0) {
      auto s = lsums[static_cast<size_t>(c)];
      for (double& v : s) v /= static_cast<double>(lcounts[static_cast<size_t>(c)]);
      state.centers.emplace_back(std::move(s));
    } else {
      throw EmptyClassError(c);
    }
  }
  return state;
}

SoftLabel adapt_label(const SoftLabel& y, const SoftLabel& cleaner_out,
                      double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("adapt_label: alpha must be in [0, 1]");
  if (y.k() != cleaner_out.k()) throw ShapeError("adapt_label: mismatched K");
  if (alpha == 0.0) return y;
  if (alpha == 1.0) return cleaner_out;
  std::vector<double> p(static_cast<size_t>(y.k()));
  for (int i = 0; i < y.k(); ++i)
    p[static_cast<size_t>(i)] = (1.0 - alpha) * y[i] + alpha * cleaner_out[i];
  return SoftLabel(std::move(p));
}

SoftLabel adapted_source_target(const SlaConfig& cfg, int64_t step,
                                const SoftLabel& y, const Model& model,
                                const ProtoState* ppc,
                                std::span<const double> x_source) {
  if (cfg.correction_mode == CorrectionMode::None) return y;
  if (step <= cfg.warmup) return y;
  switch (cfg.correction_mode) {
    case CorrectionMode::SelfPrediction:
      return adapt_label(y, model.forward(x_source), cfg.alpha);
    case CorrectionMode::Ppc: {
      if (ppc == nullptr)
        throw StateError("adapted_source_target: no PPC snapshot after warmup");
      FeatureVec feat = model.forward_features(x_source);
      return adapt_label(y, protonet_predict(*ppc, feat), cfg.alpha);
    }
    default:
      return y;
  }
}

std::optional<std::pair<PseudoLabelTable, ProtoState>> maybe_refresh(
    const SlaConfig& cfg, int64_t step, const Model& model,
    const SsdaTask& task) {
  // First snapshot right after warmup, then every I steps.
  if (step <= cfg.warmup) return std::nullopt;
  if ((step - cfg.warmup - 1) % cfg.update_interval != 0) return std::nullopt;
  PseudoLabelTable table =
      assign_pseudo_labels(model, task.unlabeled_target(), step);
  ProtoState state = build_ppc(model, task.unlabeled_target(), table,
                               task.labeled_target(), cfg.temperature, step);
  return std::make_pair(std::move(table), std::move(state));
}

namespace {

const char* center_source_name(CenterSource s) {
  switch (s) {
    case CenterSource::PseudoCenters: return "pseudo";
    case CenterSource::IdealCenters: return "ideal";
    default: return "labeled-target";
  }
}

CenterSource center_source_from_name(const std::string& s) {
  if (s == "pseudo") return CenterSource::PseudoCenters;
  if (s == "ideal") return CenterSource::IdealCenters;
  if (s == "labeled-target") return CenterSource::LabeledTarget;
  throw LoadError("proto state: unknown source tag '" + s + "'");
}

}  // namespace

void save_proto_state(const ProtoState& state, const std::string& path) {
  nlohmann::json j;
  j["format"] = "slalab-proto";
  j["version"] = 1;
  j["temperature"] = state.temperature;
  j["source_tag"] = center_source_name(state.source_tag);
  j["built_at_step"] = state.built_at_step;
  j["centers"] = nlohmann::json::array();
  for (const auto& c : state.centers) j["centers"].push_back(c.v);
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write proto state: " + path);
  out << j.dump(2) << "\n";
}

ProtoState load_proto_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open proto state: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed proto state: ") + e.what());
  }
  if (j.value("format", "") != "slalab-proto")
    throw LoadError("not a proto state file: " + path);
  if (j.at("version").get<int>() != 1)
    throw LoadError("proto state version mismatch");
  ProtoState s;
  s.temperature = j.at("temperature").get<double>();
  s.source_tag = center_source_from_name(j.at("source_tag").get<std::string>());
  s.built_at_step = j.at("built_at_step").get<int64_t>();
  for (const auto& cj : j.at("centers"))
    s.centers.emplace_back(cj.get<std::vector<double>>());
  return s;
}

}  // namespace slalab
