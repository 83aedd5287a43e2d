#include "slalab/nnet.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace slalab {

using nlohmann::json;

LinearLayer LinearLayer::zeros(int in, int out) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  l.w.assign(static_cast<size_t>(in) * static_cast<size_t>(out), 0.0);
  l.b.assign(static_cast<size_t>(out), 0.0);
  return l;
}

bool LinearLayer::finite() const {
  for (double x : w)
    if (!std::isfinite(x)) return false;
  for (double x : b)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace {

void init_layer(LinearLayer& l, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
  for (double& x : l.w) x = (2.0 * rng.uniform() - 1.0) * bound;
  for (double& x : l.b) x = (2.0 * rng.uniform() - 1.0) * bound;
}

// y += W x + b
void affine(const LinearLayer& l, const double* x, double* y) {
  for (int r = 0; r < l.out; ++r) {
    double s = l.b[static_cast<size_t>(r)];
    const double* wr = l.w.data() + static_cast<size_t>(r) * l.in;
    for (int c = 0; c < l.in; ++c) s += wr[c] * x[c];
    y[r] = s;
  }
}

}  // namespace

Model Model::init(int input_dim, const std::vector<int>& hidden,
                  int feature_dim, int num_classes, Rng& rng) {
  if (input_dim < 1 || feature_dim < 1 || num_classes < 2)
    throw ConfigError("Model::init: bad dimensions");
  Model m;
  m.input_dim = input_dim;
  m.feature_dim = feature_dim;
  m.num_classes = num_classes;
  int prev = input_dim;
  for (int h : hidden) {
    if (h < 1) throw ConfigError("Model::init: bad hidden size");
    m.extractor.push_back(LinearLayer::zeros(prev, h));
    prev = h;
  }
  m.extractor.push_back(LinearLayer::zeros(prev, feature_dim));
  m.head = LinearLayer::zeros(feature_dim, num_classes);
  for (auto& l : m.extractor) init_layer(l, rng);
  init_layer(m.head, rng);
  return m;
}

FeatureVec Model::forward_features(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != input_dim)
    throw ShapeError("forward_features: input dim mismatch");
  std::vector<double> cur(x.begin(), x.end());
  for (size_t i = 0; i < extractor.size(); ++i) {
    const auto& l = extractor[i];
    std::vector<double> next(static_cast<size_t>(l.out));
    affine(l, cur.data(), next.data());
    if (i + 1 < extractor.size()) {
      for (double& v : next) v = std::tanh(v);
    }
    cur = std::move(next);
  }
  return FeatureVec(std::move(cur));
}

SoftLabel Model::forward(std::span<const double> x) const {
  FeatureVec f = forward_features(x);
  std::vector<double> logits(static_cast<size_t>(num_classes));
  affine(head, f.v.data(), logits.data());
  return softmax(logits);
}

size_t Model::param_count() const {
  size_t n = head.w.size() + head.b.size();
  for (const auto& l : extractor) n += l.w.size() + l.b.size();
  return n;
}

bool Model::finite() const {
  for (const auto& l : extractor)
    if (!l.finite()) return false;
  return head.finite();
}

uint64_t Model::param_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const std::vector<double>& v) {
    h = fnv1a64(v.data(), v.size() * sizeof(double), h);
  };
  for (const auto& l : extractor) {
    feed(l.w);
    feed(l.b);
  }
  feed(head.w);
  feed(head.b);
  return h;
}

GradBuffer GradBuffer::zeros_like(const Model& m) {
  GradBuffer g;
  for (const auto& l : m.extractor)
    g.extractor.push_back(LinearLayer::zeros(l.in, l.out));
  g.head = LinearLayer::zeros(m.head.in, m.head.out);
  return g;
}

void GradBuffer::add(const GradBuffer& other) {
  for (size_t i = 0; i < extractor.size(); ++i) {
    auto& a = extractor[i];
    const auto& b = other.extractor[i];
    for (size_t j = 0; j < a.w.size(); ++j) a.w[j] += b.w[j];
    for (size_t j = 0; j < a.b.size(); ++j) a.b[j] += b.b[j];
  }
  for (size_t j = 0; j < head.w.size(); ++j) head.w[j] += other.head.w[j];
  for (size_t j = 0; j < head.b.size(); ++j) head.b[j] += other.head.b[j];
}

void GradBuffer::scale(double c) {
  for (auto& l : extractor) {
    for (double& x : l.w) x *= c;
    for (double& x : l.b) x *= c;
  }
  for (double& x : head.w) x *= c;
  for (double& x : head.b) x *= c;
}

bool GradBuffer::finite() const {
  for (const auto& l : extractor)
    if (!l.finite()) return false;
  return head.finite();
}

SgdState SgdState::init(const Model& m, double base_lr, double momentum,
                        double decay_gamma, double decay_power) {
  if (!(base_lr >= 0.0)) throw ConfigError("SgdState: base_lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("SgdState: momentum must be in [0, 1)");
  if (!(decay_gamma >= 0.0) || !(decay_power >= 0.0))
    throw ConfigError("SgdState: decay parameters must be >= 0");
  SgdState s;
  s.base_lr = base_lr;
  s.momentum = momentum;
  s.decay_gamma = decay_gamma;
  s.decay_power = decay_power;
  s.step_count = 0;
  s.velocity = GradBuffer::zeros_like(m);
  return s;
}

double SgdState::lr_at(int64_t t) const {
  return base_lr * std::pow(1.0 + decay_gamma * static_cast<double>(t),
                            -decay_power);
}

namespace {

// Forward pass with the caches backward needs: post-activation values per
// extractor layer plus features, logits and probabilities.
struct ForwardCache {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts.back() = features
  std::vector<double> logits;
  SoftLabel probs;
};

ForwardCache run_forward(const Model& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.input_dim)
    throw ShapeError("backward: input dim mismatch");
  ForwardCache c;
  c.acts.emplace_back(x.begin(), x.end());
  for (size_t i = 0; i < m.extractor.size(); ++i) {
    const auto& l = m.extractor[i];
    std::vector<double> next(static_cast<size_t>(l.out));
    affine(l, c.acts.back().data(), next.data());
    if (i + 1 < m.extractor.size()) {
      for (double& v : next) v = std::tanh(v);
    }
    c.acts.push_back(std::move(next));
  }
  c.logits.resize(static_cast<size_t>(m.num_classes));
  affine(m.head, c.acts.back().data(), c.logits.data());
  c.probs = softmax(c.logits);
  return c;
}

// Accumulates wgt * gradient for one example given dL/dp.
void backprop_from_dp(const Model& m, const ForwardCache& c,
                      const std::vector<double>& dp, double wgt,
                      GradBuffer& g) {
  const int k = m.num_classes;
  const auto& p = c.probs.probs;
  // Through softmax: dz_j = p_j * (dp_j - sum_k dp_k p_k).
  double dot = 0.0;
  for (int j = 0; j < k; ++j) dot += dp[static_cast<size_t>(j)] * p[static_cast<size_t>(j)];
  std::vector<double> dlogits(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j)
    dlogits[static_cast<size_t>(j)] = p[static_cast<size_t>(j)] * (dp[static_cast<size_t>(j)] - dot);

  const auto& feat = c.acts.back();
  for (int r = 0; r < m.head.out; ++r) {
    double d = dlogits[static_cast<size_t>(r)];
    double* gw = g.head.w.data() + static_cast<size_t>(r) * m.head.in;
    for (int cc = 0; cc < m.head.in; ++cc) gw[cc] += wgt * d * feat[static_cast<size_t>(cc)];
    g.head.b[static_cast<size_t>(r)] += wgt * d;
  }
  std::vector<double> delta(static_cast<size_t>(m.head.in), 0.0);
  for (int r = 0; r < m.head.out; ++r) {
    double d = dlogits[static_cast<size_t>(r)];
    const double* wr = m.head.w.data() + static_cast<size_t>(r) * m.head.in;
    for (int cc = 0; cc < m.head.in; ++cc) delta[static_cast<size_t>(cc)] += wr[cc] * d;
  }

  for (int li = static_cast<int>(m.extractor.size()) - 1; li >= 0; --li) {
    const auto& l = m.extractor[static_cast<size_t>(li)];
    const auto& out_act = c.acts[static_cast<size_t>(li) + 1];
    if (li + 1 < static_cast<int>(m.extractor.size())) {
      // out_act holds tanh(z); tanh' = 1 - tanh^2.
      for (int r = 0; r < l.out; ++r)
        delta[static_cast<size_t>(r)] *= 1.0 - out_act[static_cast<size_t>(r)] * out_act[static_cast<size_t>(r)];
    }
    const auto& in_act = c.acts[static_cast<size_t>(li)];
    auto& gl = g.extractor[static_cast<size_t>(li)];
    for (int r = 0; r < l.out; ++r) {
      double d = delta[static_cast<size_t>(r)];
      double* gw = gl.w.data() + static_cast<size_t>(r) * l.in;
      for (int cc = 0; cc < l.in; ++cc) gw[cc] += wgt * d * in_act[static_cast<size_t>(cc)];
      gl.b[static_cast<size_t>(r)] += wgt * d;
    }
    if (li > 0) {
      std::vector<double> prev(static_cast<size_t>(l.in), 0.0);
      for (int r = 0; r < l.out; ++r) {
        double d = delta[static_cast<size_t>(r)];
        const double* wr = l.w.data() + static_cast<size_t>(r) * l.in;
        for (int cc = 0; cc < l.in; ++cc) prev[static_cast<size_t>(cc)] += wr[cc] * d;
      }
      delta = std::move(prev);
    }
  }
}

}  // namespace

std::pair<GradBuffer, double> backward_ce(const Model& m,
                                          std::span<const CeExample> batch,
                                          std::span<const double> weights) {
  if (batch.empty()) throw ShapeError("backward_ce: empty batch");
  if (weights.size() != batch.size())
    throw ShapeError("backward_ce: weights/batch size mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0.0)) throw DomainError("backward_ce: weights must sum > 0");

  GradBuffer g = GradBuffer::zeros_like(m);
  double loss = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    if (ex.target.k() != m.num_classes)
      throw ShapeError("backward_ce: target K mismatch");
    ForwardCache c = run_forward(m, ex.x);
    double wgt = weights[i] / wsum;
    loss += wgt * cross_entropy_soft(c.probs, ex.target);
    // dL/dp_k = -t_k / p_k where the clamp is inactive, else 0.
    std::vector<double> dp(static_cast<size_t>(m.num_classes), 0.0);
    for (int j = 0; j < m.num_classes; ++j) {
      double pj = c.probs[j];
      double tj = ex.target[j];
      if (tj != 0.0 && pj > kLogEps) dp[static_cast<size_t>(j)] = -tj / pj;
    }
    backprop_from_dp(m, c, dp, wgt, g);
  }
  return {std::move(g), loss};
}

std::pair<GradBuffer, double> backward_entropy(
    const Model& m, std::span<const std::vector<double>> batch) {
  if (batch.empty()) throw ShapeError("backward_entropy: empty batch");
  GradBuffer g = GradBuffer::zeros_like(m);
  double loss = 0.0;
  double wgt = 1.0 / static_cast<double>(batch.size());
  for (const auto& x : batch) {
    ForwardCache c = run_forward(m, x);
    loss += wgt * entropy(c.probs);
    // dH/dp_k = -(log p_k + 1).
    std::vector<double> dp(static_cast<size_t>(m.num_classes));
    for (int j = 0; j < m.num_classes; ++j)
      dp[static_cast<size_t>(j)] = -(std::log(std::max(c.probs[j], kLogEps)) + 1.0);
    backprop_from_dp(m, c, dp, wgt, g);
  }
  return {std::move(g), loss};
}

void sgd_step(Model& m, const GradBuffer& grads, SgdState& opt) {
  if (!grads.finite())
    throw TrainingError("sgd_step: non-finite gradient at step " +
                        std::to_string(opt.step_count));
  double lr = opt.lr_at(opt.step_count);
  auto apply = [&](LinearLayer& p, LinearLayer& v, const LinearLayer& g) {
    for (size_t j = 0; j < p.w.size(); ++j) {
      v.w[j] = opt.momentum * v.w[j] + g.w[j];
      p.w[j] -= lr * v.w[j];
    }
    for (size_t j = 0; j < p.b.size(); ++j) {
      v.b[j] = opt.momentum * v.b[j] + g.b[j];
      p.b[j] -= lr * v.b[j];
    }
  };
  for (size_t i = 0; i < m.extractor.size(); ++i)
    apply(m.extractor[i], opt.velocity.extractor[i], grads.extractor[i]);
  apply(m.head, opt.velocity.head, grads.head);
  ++opt.step_count;
}

void scheduler_refresh(SgdState& opt) { opt.step_count = 0; }

namespace {

json layer_to_json(const LinearLayer& l) {
  return json{{"in", l.in}, {"out", l.out}, {"w", l.w}, {"b", l.b}};
}

LinearLayer layer_from_json(const json& j) {
  LinearLayer l;
  l.in = j.at("in").get<int>();
  l.out = j.at("out").get<int>();
  l.w = j.at("w").get<std::vector<double>>();
  l.b = j.at("b").get<std::vector<double>>();
  if (l.w.size() != static_cast<size_t>(l.in) * static_cast<size_t>(l.out) ||
      l.b.size() != static_cast<size_t>(l.out))
    throw LoadError("model checkpoint: layer shape mismatch");
  return l;
}

constexpr int kModelVersion = 1;

}  // namespace

void save_model(const Model& m, const std::string& path,
                const std::string& config_hash) {
  json j;
  j["format"] = "slalab-model";
  j["version"] = kModelVersion;
  j["config_hash"] = config_hash;
  j["input_dim"] = m.input_dim;
  j["feature_dim"] = m.feature_dim;
  j["num_classes"] = m.num_classes;
  j["extractor"] = json::array();
  for (const auto& l : m.extractor) j["extractor"].push_back(layer_to_json(l));
  j["head"] = layer_to_json(m.head);
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write model checkpoint: " + path);
  out << j.dump(2) << "\n";
}

std::pair<Model, std::string> load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open model checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed model checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "slalab-model")
    throw LoadError("not a model checkpoint: " + path);
  if (j.at("version").get<int>() != kModelVersion)
    throw LoadError("model checkpoint version mismatch");
  Model m;
  m.input_dim = j.at("input_dim").get<int>();
  m.feature_dim = j.at("feature_dim").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  for (const auto& lj : j.at("extractor")) m.extractor.push_back(layer_from_json(lj));
  m.head = layer_from_json(j.at("head"));
  if (!m.finite()) throw LoadError("model checkpoint: non-finite parameters");
  return {std::move(m), j.value("config_hash", "")};
}

}  // namespace slalab
