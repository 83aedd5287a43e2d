#include "slalab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace slalab {

using nlohmann::json;

namespace {

constexpr int kTaskVersion = 1;
constexpr int kMaxJitterAttempts = 20;

// Stream ids hung off the task seed.
enum : uint64_t {
  kStreamSource = 1,
  kStreamLabeled = 2,
  kStreamUnlabeled = 3,
  kStreamTest = 4,
  kStreamVal = 5,
  kStreamJitterBase = 100,
};

}  // namespace

void DomainSpec::validate() const {
  if (num_classes < 2) throw ConfigError("DomainSpec: K must be >= 2");
  if (input_dim < 2) throw ConfigError("DomainSpec: m must be >= 2");
  if (!(cov_scale > 0.0)) throw ConfigError("DomainSpec: cov_scale must be > 0");
  if (static_cast<int>(class_means.size()) != num_classes)
    throw ConfigError("DomainSpec: need one mean per class");
  for (const auto& mu : class_means) {
    if (static_cast<int>(mu.size()) != input_dim)
      throw ConfigError("DomainSpec: class mean dim mismatch");
  }
  if (static_cast<int>(translation.size()) != input_dim)
    throw ConfigError("DomainSpec: translation dim mismatch");
  if (jitter_scale < 0.0) throw ConfigError("DomainSpec: jitter_scale < 0");
  if (source_per_class < 1 || unlabeled_per_class < 1 || test_per_class < 1 ||
      val_per_class < 1)
    throw ConfigError("DomainSpec: per-split counts must be >= 1");
  if (min_source_only_error < 0.0 || min_source_only_error >= 1.0)
    throw ConfigError("DomainSpec: min_source_only_error must be in [0, 1)");
}

namespace {

json spec_to_json(const DomainSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"input_dim", s.input_dim},
              {"class_means", s.class_means},
              {"cov_scale", s.cov_scale},
              {"rotation", s.rotation},
              {"translation", s.translation},
              {"jitter_scale", s.jitter_scale},
              {"source_per_class", s.source_per_class},
              {"unlabeled_per_class", s.unlabeled_per_class},
              {"test_per_class", s.test_per_class},
              {"val_per_class", s.val_per_class},
              {"min_source_only_error", s.min_source_only_error}};
}

DomainSpec spec_from_json(const json& j) {
  DomainSpec s;
  s.num_classes = j.at("num_classes").get<int>();
  s.input_dim = j.at("input_dim").get<int>();
  s.class_means = j.at("class_means").get<std::vector<std::vector<double>>>();
  s.cov_scale = j.at("cov_scale").get<double>();
  s.rotation = j.at("rotation").get<double>();
  s.translation = j.at("translation").get<std::vector<double>>();
  s.jitter_scale = j.at("jitter_scale").get<double>();
  s.source_per_class = j.at("source_per_class").get<int>();
  s.unlabeled_per_class = j.at("unlabeled_per_class").get<int>();
  s.test_per_class = j.at("test_per_class").get<int>();
  s.val_per_class = j.value("val_per_class", 3);
  s.min_source_only_error = j.value("min_source_only_error", 0.2);
  s.validate();
  return s;
}

}  // namespace

DomainSpec DomainSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open spec file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed spec file: ") + e.what());
  }
  try {
    return spec_from_json(j);
  } catch (const json::exception& e) {
    throw LoadError(std::string("spec file missing fields: ") + e.what());
  }
}

void DomainSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write spec file: " + path);
  out << spec_to_json(*this).dump(2) << "\n";
}

SsdaTask SsdaTask::from_parts(DomainSpec spec, int n_shot, uint64_t seed,
                              std::vector<Example> source,
                              std::vector<Example> labeled_target,
                              std::vector<std::vector<double>> unlabeled_x,
                              std::vector<int> unlabeled_true_labels,
                              std::vector<Example> test_target,
                              std::vector<Example> val_target) {
  spec.validate();
  if (unlabeled_x.size() != unlabeled_true_labels.size())
    throw ShapeError("SsdaTask: audit labels must cover U");
  // L must be exactly class-balanced at n_shot per class.
  std::vector<int> counts(static_cast<size_t>(spec.num_classes), 0);
  for (const auto& ex : labeled_target) {
    if (ex.label < 0 || ex.label >= spec.num_classes)
      throw DomainError("SsdaTask: labeled-target label out of range");
    ++counts[static_cast<size_t>(ex.label)];
  }
  for (int c : counts) {
    if (c != n_shot)
      throw DomainError("SsdaTask: L must hold exactly n_shot per class");
  }
  SsdaTask t;
  t.spec_ = std::move(spec);
  t.n_shot_ = n_shot;
  t.seed_ = seed;
  t.source_ = std::move(source);
  t.labeled_ = std::move(labeled_target);
  t.unlabeled_x_ = std::move(unlabeled_x);
  t.unlabeled_audit_ = std::move(unlabeled_true_labels);
  t.test_ = std::move(test_target);
  t.val_ = std::move(val_target);
  return t;
}

const std::vector<int>& SsdaTask::audit_labels(std::string_view caller) const {
  audit_log_.emplace_back(caller);
  return unlabeled_audit_;
}

namespace {

std::vector<double> rotate_translate(const std::vector<double>& mu,
                                     double angle,
                                     const std::vector<double>& translation) {
  std::vector<double> out = mu;
  double c = std::cos(angle), s = std::sin(angle);
  out[0] = c * mu[0] - s * mu[1];
  out[1] = s * mu[0] + c * mu[1];
  for (size_t i = 0; i < out.size(); ++i) out[i] += translation[i];
  return out;
}

// Gaussian offsets drawn once per split; target means move across jitter
// attempts but the offsets stay fixed.
std::vector<std::vector<double>> draw_offsets(int count, int dim, Rng rng) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::vector<double> z(static_cast<size_t>(dim));
    for (double& v : z) v = rng.normal();
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<Example> materialize(const std::vector<std::vector<double>>& means,
                                 const std::vector<std::vector<double>>& offsets,
                                 int per_class, double sigma) {
  std::vector<Example> out;
  out.reserve(offsets.size());
  size_t idx = 0;
  for (size_t k = 0; k < means.size(); ++k) {
    for (int i = 0; i < per_class; ++i, ++idx) {
      Example ex;
      ex.label = static_cast<int>(k);
      ex.x.resize(means[k].size());
      for (size_t d = 0; d < ex.x.size(); ++d)
        ex.x[d] = means[k][d] + sigma * offsets[idx][d];
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace

double source_only_linear_error(const std::vector<Example>& source,
                                const std::vector<Example>& test, int k,
                                int m) {
  // Plain softmax regression, full-batch gradient descent from zero init.
  std::vector<double> w(static_cast<size_t>(k) * static_cast<size_t>(m), 0.0);
  std::vector<double> b(static_cast<size_t>(k), 0.0);
  const double lr = 0.5;
  const int iters = 200;
  const double inv_n = 1.0 / static_cast<double>(source.size());
  std::vector<double> logits(static_cast<size_t>(k));
  std::vector<double> gw(w.size()), gb(b.size());
  for (int it = 0; it < iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (const auto& ex : source) {
      for (int r = 0; r < k; ++r) {
        double s = b[static_cast<size_t>(r)];
        for (int c = 0; c < m; ++c)
          s += w[static_cast<size_t>(r) * m + c] * ex.x[static_cast<size_t>(c)];
        logits[static_cast<size_t>(r)] = s;
      }
      SoftLabel p = softmax(logits);
      for (int r = 0; r < k; ++r) {
        double d = p[r] - (r == ex.label ? 1.0 : 0.0);
        for (int c = 0; c < m; ++c)
          gw[static_cast<size_t>(r) * m + c] += d * ex.x[static_cast<size_t>(c)];
        gb[static_cast<size_t>(r)] += d;
      }
    }
    for (size_t j = 0; j < w.size(); ++j) w[j] -= lr * inv_n * gw[j];
    for (size_t j = 0; j < b.size(); ++j) b[j] -= lr * inv_n * gb[j];
  }
  int wrong = 0;
  for (const auto& ex : test) {
    int best = 0;
    double bestv = -1e300;
    for (int r = 0; r < k; ++r) {
      double s = b[static_cast<size_t>(r)];
      for (int c = 0; c < m; ++c)
        s += w[static_cast<size_t>(r) * m + c] * ex.x[static_cast<size_t>(c)];
      if (s > bestv) {
        bestv = s;
        best = r;
      }
    }
    if (best != ex.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

SsdaTask generate_task(const DomainSpec& spec, int n_shot, uint64_t seed) {
  spec.validate();
  if (n_shot != 1 && n_shot != 3)
    throw ConfigError("generate_task: n_shot must be 1 or 3");

  const int k = spec.num_classes;
  const int m = spec.input_dim;
  Rng root(seed);

  auto src_offsets = draw_offsets(k * spec.source_per_class, m, root.stream(kStreamSource));
  auto lbl_offsets = draw_offsets(k * n_shot, m, root.stream(kStreamLabeled));
  auto unl_offsets = draw_offsets(k * spec.unlabeled_per_class, m, root.stream(kStreamUnlabeled));
  auto tst_offsets = draw_offsets(k * spec.test_per_class, m, root.stream(kStreamTest));
  auto val_offsets = draw_offsets(k * spec.val_per_class, m, root.stream(kStreamVal));

  std::vector<Example> source =
      materialize(spec.class_means, src_offsets, spec.source_per_class, spec.cov_scale);

  for (int attempt = 0; attempt < kMaxJitterAttempts; ++attempt) {
    Rng jitter_rng = root.stream(kStreamJitterBase + static_cast<uint64_t>(attempt));
    std::vector<std::vector<double>> target_means(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
      auto nu = rotate_translate(spec.class_means[static_cast<size_t>(c)],
                                 spec.rotation, spec.translation);
      for (double& v : nu) v += spec.jitter_scale * jitter_rng.normal();
      target_means[static_cast<size_t>(c)] = std::move(nu);
    }

    std::vector<Example> labeled = materialize(target_means, lbl_offsets, n_shot, spec.cov_scale);
    std::vector<Example> unl = materialize(target_means, unl_offsets, spec.unlabeled_per_class, spec.cov_scale);
    std::vector<Example> test = materialize(target_means, tst_offsets, spec.test_per_class, spec.cov_scale);
    std::vector<Example> val = materialize(target_means, val_offsets, spec.val_per_class, spec.cov_scale);

    if (spec.min_source_only_error > 0.0) {
      double err = source_only_linear_error(source, test, k, m);
      if (err < spec.min_source_only_error) continue;
    }

    std::vector<std::vector<double>> unl_x;
    std::vector<int> unl_y;
    unl_x.reserve(unl.size());
    unl_y.reserve(unl.size());
    for (auto& ex : unl) {
      unl_x.push_back(std::move(ex.x));
      unl_y.push_back(ex.label);
    }
    return SsdaTask::from_parts(spec, n_shot, seed, std::move(source),
                                std::move(labeled), std::move(unl_x),
                                std::move(unl_y), std::move(test),
                                std::move(val));
  }
  throw GenerationError(
      "generate_task: misalignment gate not met after " +
      std::to_string(kMaxJitterAttempts) +
      " jitter attempts; increase shift (rotation/translation/jitter)");
}

namespace {

json examples_to_json(const std::vector<Example>& v) {
  json xs = json::array(), ys = json::array();
  for (const auto& ex : v) {
    xs.push_back(ex.x);
    ys.push_back(ex.label);
  }
  return json{{"x", std::move(xs)}, {"y", std::move(ys)}};
}

std::vector<Example> examples_from_json(const json& j) {
  auto xs = j.at("x").get<std::vector<std::vector<double>>>();
  auto ys = j.at("y").get<std::vector<int>>();
  if (xs.size() != ys.size()) throw LoadError("task file: x/y length mismatch");
  std::vector<Example> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    out[i].x = std::move(xs[i]);
    out[i].label = ys[i];
  }
  return out;
}

}  // namespace

void export_task(const SsdaTask& task, const std::string& path) {
  json body;
  body["source"] = examples_to_json(task.source_);
  body["labeled_target"] = examples_to_json(task.labeled_);
  body["unlabeled_x"] = task.unlabeled_x_;
  body["unlabeled_audit_y"] = task.unlabeled_audit_;
  body["test_target"] = examples_to_json(task.test_);
  body["val_target"] = examples_to_json(task.val_);

  json j;
  j["format"] = "slalab-task";
  j["version"] = kTaskVersion;
  j["spec"] = spec_to_json(task.spec_);
  j["n_shot"] = task.n_shot_;
  j["seed"] = task.seed_;
  j["checksum"] = hex64(fnv1a64(body.dump()));
  j["body"] = std::move(body);

  std::ofstream out(path);
  if (!out) throw LoadError("cannot write task file: " + path);
  out << j.dump() << "\n";
}

SsdaTask import_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open task file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed task file: ") + e.what());
  }
  try {
    if (j.value("format", "") != "slalab-task")
      throw LoadError("not a task file: " + path);
    if (j.at("version").get<int>() != kTaskVersion)
      throw LoadError("task file version mismatch: expected " +
                      std::to_string(kTaskVersion));
    const json& body = j.at("body");
    if (j.at("checksum").get<std::string>() != hex64(fnv1a64(body.dump())))
      throw LoadError("task file checksum mismatch: " + path);
    return SsdaTask::from_parts(
        spec_from_json(j.at("spec")), j.at("n_shot").get<int>(),
        j.at("seed").get<uint64_t>(), examples_from_json(body.at("source")),
        examples_from_json(body.at("labeled_target")),
        body.at("unlabeled_x").get<std::vector<std::vector<double>>>(),
        body.at("unlabeled_audit_y").get<std::vector<int>>(),
        examples_from_json(body.at("test_target")),
        examples_from_json(body.at("val_target")));
  } catch (const json::exception& e) {
    throw LoadError(std::string("task file missing fields: ") + e.what());
  }
}

BatchPlan::Cycler::Cycler(int n, Rng r) : rng(r) {
  order.resize(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
}

int BatchPlan::Cycler::next() {
  if (pos == order.size()) {
    rng.shuffle(order);
    pos = 0;
  }
  return order[pos++];
}

BatchPlan::BatchPlan(const SsdaTask& task, int b_source, int b_labeled,
                     int b_unlabeled, Rng rng)
    : b_source_(b_source),
      b_labeled_(b_labeled),
      b_unlabeled_(b_unlabeled),
      source_(static_cast<int>(task.source().size()), rng.stream(1)),
      labeled_(static_cast<int>(task.labeled_target().size()), rng.stream(2)),
      unlabeled_(static_cast<int>(task.unlabeled_target().size()), rng.stream(3)) {
  if (b_source < 1 || b_labeled < 1 || b_unlabeled < 1)
    throw ConfigError("BatchPlan: batch sizes must be >= 1");
}

Batch BatchPlan::next(const SsdaTask&) {
  Batch b;
  b.source_idx.reserve(static_cast<size_t>(b_source_));
  for (int i = 0; i < b_source_; ++i) b.source_idx.push_back(source_.next());
  b.labeled_idx.reserve(static_cast<size_t>(b_labeled_));
  for (int i = 0; i < b_labeled_; ++i) b.labeled_idx.push_back(labeled_.next());
  b.unlabeled_idx.reserve(static_cast<size_t>(b_unlabeled_));
  for (int i = 0; i < b_unlabeled_; ++i) b.unlabeled_idx.push_back(unlabeled_.next());
  return b;
}

}  // namespace slalab
