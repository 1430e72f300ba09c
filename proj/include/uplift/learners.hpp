#pragma once

// Base-learner family: linear model, deep ReLU network, wide & deep, and
// deep & cross, all trained by mini-batch gradient descent with optional
// warm start, plus a finite-difference gradient-check harness.
//
// One parameterization covers all four kinds:
//   cross tower (deep_and_cross only):
//       x_{l+1} = x_0 * (x_l . w_l) + b_l + x_l        (scalar projection)
//   deep tower: ReLU stack over the configured hidden widths
//   head: linear over the concatenated tower outputs, then the loss link
// Head input per kind:
//   linear          [x]
//   deep            [deep_out]            ([x] when no hidden layers)
//   wide_and_deep   [x | deep_out]        (wide side = raw feature vector)
//   deep_and_cross  [cross_out | deep_out]
// With zero cross layers the cross tower is the identity, so deep_and_cross
// with no hidden layers degenerates to the linear model exactly; the same
// holds for wide_and_deep with an empty deep tower.
//
// Losses: log_loss (sigmoid link, labels in {0,1}) and squared_error (identity
// link). The training objective is mean data loss plus l2_penalty * sum of
// squared non-bias weights. Initialization is fan-in-scaled uniform from the
// config seed with zero biases; shuffling is an explicit Fisher-Yates, so a
// (config, data order, seed) triple reproduces a checkpoint bit-for-bit.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/transform.hpp"

namespace uplift {

enum class LearnerKind { linear, deep, wide_and_deep, deep_and_cross };

inline std::string_view to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::linear: return "linear";
    case LearnerKind::deep: return "deep";
    case LearnerKind::wide_and_deep: return "wide_and_deep";
    default: return "deep_and_cross";
  }
}

inline LearnerKind learner_kind_from(std::string_view s) {
  if (s == "linear") return LearnerKind::linear;
  if (s == "deep") return LearnerKind::deep;
  if (s == "wide_and_deep") return LearnerKind::wide_and_deep;
  if (s == "deep_and_cross") return LearnerKind::deep_and_cross;
  throw ConfigError("unknown learner kind '" + std::string(s) + "'");
}

enum class Loss { log_loss, squared_error };

inline std::string_view to_string(Loss l) {
  return l == Loss::log_loss ? "log_loss" : "squared_error";
}

inline Loss loss_from(std::string_view s) {
  if (s == "log_loss") return Loss::log_loss;
  if (s == "squared_error") return Loss::squared_error;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

struct LearnerConfig {
  LearnerKind kind = LearnerKind::linear;
  std::vector<int> hidden_layers;  // deep tower widths
  int n_cross_layers = 0;          // deep_and_cross only
  Loss loss = Loss::log_loss;
  double learning_rate = 0.05;
  int batch_size = 256;
  int epochs = 5;
  double l2_penalty = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (l2_penalty < 0.0) throw ConfigError("l2_penalty must be >= 0");
    for (int w : hidden_layers) {
      if (w < 1) throw ConfigError("hidden layer widths must be >= 1");
    }
    if (n_cross_layers < 0) throw ConfigError("n_cross_layers must be >= 0");
    if (kind != LearnerKind::deep_and_cross && n_cross_layers != 0) {
      throw ConfigError("n_cross_layers applies to deep_and_cross only");
    }
    if (kind == LearnerKind::linear && !hidden_layers.empty()) {
      throw ConfigError("linear learner takes no hidden layers");
    }
  }

  bool same_architecture(const LearnerConfig& o) const {
    return kind == o.kind && hidden_layers == o.hidden_layers &&
           n_cross_layers == o.n_cross_layers && loss == o.loss;
  }

  json to_json() const {
    return json{{"kind", std::string(to_string(kind))},
                {"hidden_layers", hidden_layers},
                {"n_cross_layers", n_cross_layers},
                {"loss", std::string(to_string(loss))},
                {"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"epochs", epochs},
                {"l2_penalty", l2_penalty},
                {"seed", seed}};
  }

  static LearnerConfig from_json(const json& j) {
    LearnerConfig c;
    c.kind = learner_kind_from(j.at("kind").get<std::string>());
    c.hidden_layers = j.value("hidden_layers", std::vector<int>{});
    c.n_cross_layers = j.value("n_cross_layers", 0);
    c.loss = loss_from(j.value("loss", "log_loss"));
    c.learning_rate = j.value("learning_rate", 0.05);
    c.batch_size = j.value("batch_size", 256);
    c.epochs = j.value("epochs", 5);
    c.l2_penalty = j.value("l2_penalty", 0.0);
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
  }
};

// Named weight tensors. Shapes derive from (config, input_dim).
struct NetParams {
  std::vector<std::vector<double>> cross_w, cross_b;  // each input_dim
  std::vector<std::vector<double>> deep_w;            // row-major out x in
  std::vector<std::vector<double>> deep_b;
  std::vector<double> head_w;
  double head_b = 0.0;

  template <typename Fn>
  void for_each(Fn&& fn) {  // deterministic parameter order
    for (auto& v : cross_w)
      for (double& x : v) fn(x);
    for (auto& v : cross_b)
      for (double& x : v) fn(x);
    for (auto& v : deep_w)
      for (double& x : v) fn(x);
    for (auto& v : deep_b)
      for (double& x : v) fn(x);
    for (double& x : head_w) fn(x);
    fn(head_b);
  }

  template <typename Fn>
  void for_each_weight(Fn&& fn) {  // l2 applies to non-bias weights only
    for (auto& v : cross_w)
      for (double& x : v) fn(x);
    for (auto& v : deep_w)
      for (double& x : v) fn(x);
    for (double& x : head_w) fn(x);
  }

  std::size_t count() const {
    std::size_t n = head_w.size() + 1;
    for (const auto& v : cross_w) n += 2 * v.size();
    for (const auto& v : deep_w) n += v.size();
    for (const auto& v : deep_b) n += v.size();
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    const_cast<NetParams*>(this)->for_each([&](double& x) {
      ok = ok && std::isfinite(x);
    });
    return ok;
  }
};

namespace detail {

inline std::size_t head_input_dim(const LearnerConfig& cfg, std::size_t input_dim) {
  const std::size_t deep_out = cfg.hidden_layers.empty()
                                   ? 0
                                   : static_cast<std::size_t>(cfg.hidden_layers.back());
  switch (cfg.kind) {
    case LearnerKind::linear: return input_dim;
    case LearnerKind::deep: return deep_out == 0 ? input_dim : deep_out;
    case LearnerKind::wide_and_deep: return input_dim + deep_out;
    default: return input_dim + deep_out;  // deep_and_cross
  }
}

inline NetParams init_params(const LearnerConfig& cfg, std::size_t input_dim) {
  NetParams p;
  Rng rng(derive_seed(cfg.seed, "init"));
  auto fan_in_uniform = [&](std::vector<double>& v, std::size_t fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
    for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * s;
  };
  if (cfg.kind == LearnerKind::deep_and_cross) {
    for (int l = 0; l < cfg.n_cross_layers; ++l) {
      p.cross_w.emplace_back(input_dim);
      fan_in_uniform(p.cross_w.back(), input_dim);
      p.cross_b.emplace_back(input_dim, 0.0);
    }
  }
  const bool has_deep = !cfg.hidden_layers.empty() && cfg.kind != LearnerKind::linear;
  if (has_deep) {
    std::size_t in = input_dim;
    for (int width : cfg.hidden_layers) {
      const std::size_t out = static_cast<std::size_t>(width);
      p.deep_w.emplace_back(out * in);
      fan_in_uniform(p.deep_w.back(), in);
      p.deep_b.emplace_back(out, 0.0);
      in = out;
    }
  }
  p.head_w.resize(head_input_dim(cfg, input_dim));
  fan_in_uniform(p.head_w, p.head_w.size());
  p.head_b = 0.0;
  return p;
}

inline NetParams zeros_like(const NetParams& p) {
  NetParams z = p;
  z.for_each([](double& x) { x = 0.0; });
  return z;
}

// Per-example forward state reused by backward.
struct Workspace {
  std::vector<std::vector<double>> cross_x;  // x_0..x_L
  std::vector<double> cross_s;               // s_l = x_l . w_l
  std::vector<std::vector<double>> deep_pre;
  std::vector<std::vector<double>> deep_act;
  std::vector<double> head_in;
  std::vector<double> scratch;               // backward buffers
  std::vector<double> scratch2;
};

// Raw model output before the loss link.
inline double forward(const LearnerConfig& cfg, const NetParams& p,
                      std::span<const double> x, Workspace& ws) {
  const std::size_t d = x.size();
  const bool use_cross = cfg.kind == LearnerKind::deep_and_cross;
  const bool use_deep = !p.deep_w.empty();

  if (use_cross) {
    ws.cross_x.resize(p.cross_w.size() + 1);
    ws.cross_s.resize(p.cross_w.size());
    ws.cross_x[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < p.cross_w.size(); ++l) {
      const auto& xl = ws.cross_x[l];
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += xl[k] * p.cross_w[l][k];
      ws.cross_s[l] = s;
      auto& xn = ws.cross_x[l + 1];
      xn.resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        xn[k] = x[k] * s + p.cross_b[l][k] + xl[k];
      }
    }
  }

  if (use_deep) {
    ws.deep_pre.resize(p.deep_w.size());
    ws.deep_act.resize(p.deep_w.size());
    std::span<const double> in = x;
    for (std::size_t i = 0; i < p.deep_w.size(); ++i) {
      const std::size_t out = p.deep_b[i].size();
      const std::size_t in_dim = in.size();
      ws.deep_pre[i].resize(out);
      ws.deep_act[i].resize(out);
      for (std::size_t r = 0; r < out; ++r) {
        double s = p.deep_b[i][r];
        const double* wrow = p.deep_w[i].data() + r * in_dim;
        for (std::size_t k = 0; k < in_dim; ++k) s += wrow[k] * in[k];
        ws.deep_pre[i][r] = s;
        ws.deep_act[i][r] = s > 0.0 ? s : 0.0;
      }
      in = ws.deep_act[i];
    }
  }

  ws.head_in.clear();
  auto append = [&](std::span<const double> v) {
    ws.head_in.insert(ws.head_in.end(), v.begin(), v.end());
  };
  switch (cfg.kind) {
    case LearnerKind::linear:
      append(x);
      break;
    case LearnerKind::deep:
      if (use_deep) {
        append(ws.deep_act.back());
      } else {
        append(x);
      }
      break;
    case LearnerKind::wide_and_deep:
      append(x);
      if (use_deep) append(ws.deep_act.back());
      break;
    case LearnerKind::deep_and_cross:
      append(use_cross && !p.cross_w.empty() ? std::span<const double>(ws.cross_x.back())
                                             : x);
      if (use_deep) append(ws.deep_act.back());
      break;
  }

  double z = p.head_b;
  for (std::size_t k = 0; k < ws.head_in.size(); ++k) z += p.head_w[k] * ws.head_in[k];
  return z;
}

// Accumulates dL/dparams for one example; dz is dL/dz already scaled by the
// batch-averaging factor.
inline void backward(const LearnerConfig& cfg, const NetParams& p,
                     std::span<const double> x, Workspace& ws, double dz,
                     NetParams& g) {
  const std::size_t d = x.size();
  const bool use_deep = !p.deep_w.empty();

  g.head_b += dz;
  for (std::size_t k = 0; k < ws.head_in.size(); ++k) {
    g.head_w[k] += dz * ws.head_in[k];
  }

  // Gradient w.r.t. the tower outputs, read off the head weights.
  std::size_t off = 0;
  std::span<const double> wh(p.head_w);
  std::vector<double>& g_first = ws.scratch;
  std::vector<double>& g_deep = ws.scratch2;
  g_first.clear();
  g_deep.clear();
  const std::size_t deep_dim = use_deep ? p.deep_b.back().size() : 0;

  switch (cfg.kind) {
    case LearnerKind::linear:
      return;  // head gradients only; inputs are data
    case LearnerKind::deep:
      if (!use_deep) return;
      for (std::size_t k = 0; k < deep_dim; ++k) g_deep.push_back(dz * wh[k]);
      break;
    case LearnerKind::wide_and_deep:
      off = d;  // wide side feeds x directly; no parameters behind it
      for (std::size_t k = 0; k < deep_dim; ++k) g_deep.push_back(dz * wh[off + k]);
      break;
    case LearnerKind::deep_and_cross:
      for (std::size_t k = 0; k < d; ++k) g_first.push_back(dz * wh[k]);
      off = d;
      for (std::size_t k = 0; k < deep_dim; ++k) g_deep.push_back(dz * wh[off + k]);
      break;
  }

  if (use_deep && !g_deep.empty()) {
    // Standard ReLU MLP backprop; gradient into x is discarded.
    std::vector<double> grad = g_deep;
    for (std::size_t i = p.deep_w.size(); i-- > 0;) {
      const std::size_t out = p.deep_b[i].size();
      std::span<const double> in =
          i == 0 ? x : std::span<const double>(ws.deep_act[i - 1]);
      const std::size_t in_dim = in.size();
      std::vector<double> next(in_dim, 0.0);
      for (std::size_t r = 0; r < out; ++r) {
        const double gr = ws.deep_pre[i][r] > 0.0 ? grad[r] : 0.0;
        if (gr == 0.0) continue;
        g.deep_b[i][r] += gr;
        double* gw = g.deep_w[i].data() + r * in_dim;
        const double* wrow = p.deep_w[i].data() + r * in_dim;
        for (std::size_t k = 0; k < in_dim; ++k) {
          gw[k] += gr * in[k];
          next[k] += gr * wrow[k];
        }
      }
      grad = std::move(next);
    }
  }

  if (cfg.kind == LearnerKind::deep_and_cross && !p.cross_w.empty()) {
    // x_{l+1} = x0 * s_l + b_l + x_l with s_l = x_l . w_l, so
    //   dL/db_l = g,  dL/dw_l = (g . x0) x_l,  dL/dx_l = g + (g . x0) w_l.
    std::vector<double> grad = g_first;
    for (std::size_t l = p.cross_w.size(); l-- > 0;) {
      double a = 0.0;
      for (std::size_t k = 0; k < d; ++k) a += grad[k] * x[k];
      for (std::size_t k = 0; k < d; ++k) {
        g.cross_b[l][k] += grad[k];
        g.cross_w[l][k] += a * ws.cross_x[l][k];
      }
      for (std::size_t k = 0; k < d; ++k) grad[k] += a * p.cross_w[l][k];
    }
  }
}

inline double link(const LearnerConfig& cfg, double z) {
  return cfg.loss == Loss::log_loss ? 1.0 / (1.0 + std::exp(-z)) : z;
}

inline double example_loss(const LearnerConfig& cfg, double z, double y) {
  if (cfg.loss == Loss::log_loss) {
    const double p = std::clamp(1.0 / (1.0 + std::exp(-z)), 1e-12, 1.0 - 1e-12);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  const double e = z - y;
  return e * e;
}

inline double dloss_dz(const LearnerConfig& cfg, double z, double y) {
  if (cfg.loss == Loss::log_loss) {
    return 1.0 / (1.0 + std::exp(-z)) - y;
  }
  return 2.0 * (z - y);
}

// Mean data loss plus the l2 term; the quantity gradients descend on.
inline double batch_objective(const LearnerConfig& cfg, const NetParams& p,
                              const FeatureMatrix& X, std::span<const double> y,
                              Workspace& ws) {
  double total = 0.0;
  for (std::size_t i = 0; i < X.rows; ++i) {
    total += example_loss(cfg, forward(cfg, p, X.row(i), ws), y[i]);
  }
  total /= static_cast<double>(X.rows);
  if (cfg.l2_penalty > 0.0) {
    double ss = 0.0;
    const_cast<NetParams&>(p).for_each_weight([&](double& w) { ss += w * w; });
    total += cfg.l2_penalty * ss;
  }
  return total;
}

}  // namespace detail

struct TrainingHistory {
  std::vector<double> train_loss;  // per-epoch mean data loss
  std::vector<double> val_loss;    // empty when no validation data given
};

struct ModelCheckpoint {
  LearnerConfig config;
  std::size_t input_dim = 0;
  NetParams params;
  std::string transform_hash;
  TrainingHistory history;
  std::string lineage;  // parent checkpoint id, empty at the root
  std::string checkpoint_id;

  json to_json(bool with_id = true) const {
    json weights;
    for (std::size_t l = 0; l < params.cross_w.size(); ++l) {
      weights["cross." + std::to_string(l) + ".w"] = params.cross_w[l];
      weights["cross." + std::to_string(l) + ".b"] = params.cross_b[l];
    }
    for (std::size_t i = 0; i < params.deep_w.size(); ++i) {
      const std::size_t out = params.deep_b[i].size();
      const std::size_t in = params.deep_w[i].size() / out;
      weights["deep." + std::to_string(i) + ".W"] =
          json{{"shape", {out, in}}, {"data", params.deep_w[i]}};
      weights["deep." + std::to_string(i) + ".b"] = params.deep_b[i];
    }
    weights["head.w"] = params.head_w;
    weights["head.b"] = params.head_b;
    json j{{"config", config.to_json()},
           {"input_dim", input_dim},
           {"weights", weights},
           {"transform_hash", transform_hash},
           {"history",
            {{"train_loss", history.train_loss}, {"val_loss", history.val_loss}}},
           {"lineage", lineage}};
    if (with_id) j["checkpoint_id"] = checkpoint_id;
    return j;
  }

  static ModelCheckpoint from_json(const json& j) {
    ModelCheckpoint c;
    c.config = LearnerConfig::from_json(j.at("config"));
    c.input_dim = j.at("input_dim").get<std::size_t>();
    const json& w = j.at("weights");
    for (int l = 0;; ++l) {
      const std::string key = "cross." + std::to_string(l) + ".w";
      if (!w.contains(key)) break;
      c.params.cross_w.push_back(w.at(key).get<std::vector<double>>());
      c.params.cross_b.push_back(
          w.at("cross." + std::to_string(l) + ".b").get<std::vector<double>>());
    }
    for (int i = 0;; ++i) {
      const std::string key = "deep." + std::to_string(i) + ".W";
      if (!w.contains(key)) break;
      c.params.deep_w.push_back(w.at(key).at("data").get<std::vector<double>>());
      c.params.deep_b.push_back(
          w.at("deep." + std::to_string(i) + ".b").get<std::vector<double>>());
    }
    c.params.head_w = w.at("head.w").get<std::vector<double>>();
    c.params.head_b = w.at("head.b").get<double>();
    c.transform_hash = j.value("transform_hash", "");
    if (j.contains("history")) {
      c.history.train_loss =
          j.at("history").at("train_loss").get<std::vector<double>>();
      c.history.val_loss = j.at("history").at("val_loss").get<std::vector<double>>();
    }
    c.lineage = j.value("lineage", "");
    c.checkpoint_id = j.value("checkpoint_id", "");
    return c;
  }

  void finalize_id() { checkpoint_id = hex64(fnv1a64(to_json(false).dump())); }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << to_json().dump(2) << "\n";
  }

  static ModelCheckpoint load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read checkpoint " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    ModelCheckpoint c = from_json(j);
    const std::string id = c.checkpoint_id;
    c.finalize_id();
    if (!id.empty() && id != c.checkpoint_id) {
      throw DataError("checkpoint " + path.string() + " failed id verification");
    }
    return c;
  }
};

struct TrainOptions {
  const ModelCheckpoint* init = nullptr;  // warm start
  const FeatureMatrix* x_val = nullptr;
  const std::vector<double>* y_val = nullptr;
  std::string transform_hash;
};

inline ModelCheckpoint train(const LearnerConfig& cfg, const FeatureMatrix& x,
                             const std::vector<double>& y,
                             const TrainOptions& opts = {}) {
  cfg.validate();
  if (x.rows == 0) throw TrainingError("no training rows");
  if (x.rows != y.size()) throw TrainingError("feature/label row mismatch");
  if (cfg.loss == Loss::log_loss) {
    for (double v : y) {
      if (v != 0.0 && v != 1.0) {
        throw ConfigError("log_loss requires outcomes in {0,1}, saw " + dtos(v));
      }
    }
  }

  NetParams params;
  std::string lineage;
  if (opts.init) {
    if (!opts.init->config.same_architecture(cfg) || opts.init->input_dim != x.cols) {
      throw TrainingError("warm-start checkpoint architecture is incompatible");
    }
    params = opts.init->params;
    lineage = opts.init->checkpoint_id;
  } else {
    params = detail::init_params(cfg, x.cols);
  }

  detail::Workspace ws;
  NetParams grads = detail::zeros_like(params);
  std::vector<std::size_t> order(x.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

  TrainingHistory history;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    seeded_shuffle(order, shuffle_rng);
    const std::size_t n_batches = (x.rows + bs - 1) / bs;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * bs;
      const std::size_t hi = std::min(x.rows, lo + bs);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      grads.for_each([](double& g) { g = 0.0; });
      double batch_loss = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        const double z = detail::forward(cfg, params, x.row(i), ws);
        batch_loss += detail::example_loss(cfg, z, y[i]);
        detail::backward(cfg, params, x.row(i), ws,
                         inv * detail::dloss_dz(cfg, z, y[i]), grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + " batch " + std::to_string(b + 1));
      }
      // update; the l2 term contributes 2*l2*w on non-bias weights
      const double lr = cfg.learning_rate;
      const double l2 = cfg.l2_penalty;
      for (std::size_t k = 0; k < params.head_w.size(); ++k) {
        params.head_w[k] -= lr * (grads.head_w[k] + 2.0 * l2 * params.head_w[k]);
      }
      params.head_b -= lr * grads.head_b;
      for (std::size_t l = 0; l < params.cross_w.size(); ++l) {
        for (std::size_t k = 0; k < params.cross_w[l].size(); ++k) {
          params.cross_w[l][k] -=
              lr * (grads.cross_w[l][k] + 2.0 * l2 * params.cross_w[l][k]);
          params.cross_b[l][k] -= lr * grads.cross_b[l][k];
        }
      }
      for (std::size_t i = 0; i < params.deep_w.size(); ++i) {
        for (std::size_t k = 0; k < params.deep_w[i].size(); ++k) {
          params.deep_w[i][k] -=
              lr * (grads.deep_w[i][k] + 2.0 * l2 * params.deep_w[i][k]);
        }
        for (std::size_t k = 0; k < params.deep_b[i].size(); ++k) {
          params.deep_b[i][k] -= lr * grads.deep_b[i][k];
        }
      }
    }
    if (!params.all_finite()) {
      throw TrainingError("training diverged: non-finite weights after epoch " +
                          std::to_string(epoch));
    }
    double train_loss = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      train_loss +=
          detail::example_loss(cfg, detail::forward(cfg, params, x.row(i), ws), y[i]);
    }
    history.train_loss.push_back(train_loss / static_cast<double>(x.rows));
    if (opts.x_val && opts.y_val && opts.x_val->rows > 0) {
      double val_loss = 0.0;
      for (std::size_t i = 0; i < opts.x_val->rows; ++i) {
        val_loss += detail::example_loss(
            cfg, detail::forward(cfg, params, opts.x_val->row(i), ws),
            (*opts.y_val)[i]);
      }
      history.val_loss.push_back(val_loss / static_cast<double>(opts.x_val->rows));
    }
  }

  ModelCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.input_dim = x.cols;
  ckpt.params = std::move(params);
  ckpt.transform_hash = opts.transform_hash;
  ckpt.history = std::move(history);
  ckpt.lineage = lineage;
  ckpt.finalize_id();
  return ckpt;
}

// Stateless scorer over a checkpoint; cheap to copy per thread.
class Scorer {
 public:
  explicit Scorer(const ModelCheckpoint& ckpt) : ckpt_(&ckpt) {}

  double operator()(std::span<const double> x) const {
    if (x.size() != ckpt_->input_dim) {
      throw DataError("input dimension " + std::to_string(x.size()) +
                      " does not match checkpoint dimension " +
                      std::to_string(ckpt_->input_dim));
    }
    return detail::link(ckpt_->config,
                        detail::forward(ckpt_->config, ckpt_->params, x, ws_));
  }

 private:
  const ModelCheckpoint* ckpt_;
  mutable detail::Workspace ws_;
};

inline double predict(const ModelCheckpoint& ckpt, std::span<const double> x) {
  return Scorer(ckpt)(x);
}

// Compares analytic gradients against central finite differences over every
// parameter; returns the max relative error
// |a - f| / max(|a|, |f|, 1e-4).
inline double gradient_check(const LearnerConfig& cfg, const FeatureMatrix& batch,
                             const std::vector<double>& y, double epsilon) {
  cfg.validate();
  if (batch.rows < 1) throw ConfigError("gradient check needs at least one row");
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ConfigError("epsilon must lie in [1e-7, 1e-3]");
  }
  NetParams params = detail::init_params(cfg, batch.cols);
  detail::Workspace ws;

  NetParams analytic = detail::zeros_like(params);
  const double inv = 1.0 / static_cast<double>(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) {
    const double z = detail::forward(cfg, params, batch.row(i), ws);
    detail::backward(cfg, params, batch.row(i), ws,
                     inv * detail::dloss_dz(cfg, z, y[i]), analytic);
  }
  if (cfg.l2_penalty > 0.0) {
    // align analytic with the objective's penalty term
    NetParams* a = &analytic;
    NetParams* p = &params;
    auto add = [&](std::vector<double>& ag, const std::vector<double>& pw) {
      for (std::size_t k = 0; k < ag.size(); ++k) ag[k] += 2.0 * cfg.l2_penalty * pw[k];
    };
    for (std::size_t l = 0; l < a->cross_w.size(); ++l) add(a->cross_w[l], p->cross_w[l]);
    for (std::size_t i = 0; i < a->deep_w.size(); ++i) add(a->deep_w[i], p->deep_w[i]);
    add(a->head_w, p->head_w);
  }

  std::vector<double*> slots;
  params.for_each([&](double& v) { slots.push_back(&v); });
  std::vector<double> analytic_flat;
  analytic.for_each([&](double& v) { analytic_flat.push_back(v); });

  double max_rel = 0.0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double saved = *slots[k];
    *slots[k] = saved + epsilon;
    const double up = detail::batch_objective(cfg, params, batch,
                                              std::span<const double>(y), ws);
    *slots[k] = saved - epsilon;
    const double down = detail::batch_objective(cfg, params, batch,
                                                std::span<const double>(y), ws);
    *slots[k] = saved;
    const double fd = (up - down) / (2.0 * epsilon);
    const double a = analytic_flat[k];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace uplift
