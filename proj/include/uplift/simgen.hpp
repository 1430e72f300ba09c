#pragma once

// Synthetic A/B experiment generator with known per-user ground-truth ITE.
//
// Outcome families:
//   conversion — binary outcome through a logistic link on a linear base
//     score; the intercept is calibrated on the drawn population so the mean
//     control probability equals base_rate, and the treatment effect is
//     additive on the probability scale: p1(x) = p0(x) + tau(x).
//   engagement — real outcome, linear base score centered at base_rate (the
//     base level), Gaussian noise, additive effect: mu1(x) = mu0(x) + tau(x).
//
// tau(x) = tau_bar * (1 + effect_heterogeneity * clamp(u(x), -1.5, 1.5)) with
// tau_bar = base_rate * target_relative_lift and u(x) per effect_form:
//   constant          u = 0
//   linear            u = beta . x_numeric
//   cross_interaction u = c_lin*(beta . x_numeric) + c_int * mu[a] * nu[b],
//     a multiplicative pairwise term over the first two categorical features
//     (per-level coefficient products; the regime where feature-crossing
//     architectures pay off). Falls back to a numeric product x_i * x_j when
//     fewer than two categorical features exist.
// The clamp bounds tau (so conversion probabilities stay valid) while keeping
// the effect exactly linear/bilinear in the features over most of the
// population.
//
// Features are a pure function of (seed, user index): a fixed user panel keeps
// its features across weekly batches. Week-over-week drift rotates the effect
// coefficients by drift_rate radians per week. Potential outcomes share one
// noise draw per user, so the stored ITE equals the difference of the stored
// potential-outcome means exactly.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uplift/common.hpp"
#include "uplift/data.hpp"

namespace uplift {

enum class EffectForm { constant, linear, cross_interaction };

inline std::string_view to_string(EffectForm f) {
  switch (f) {
    case EffectForm::constant: return "constant";
    case EffectForm::linear: return "linear";
    default: return "cross_interaction";
  }
}

inline EffectForm effect_form_from(std::string_view s) {
  if (s == "constant") return EffectForm::constant;
  if (s == "linear") return EffectForm::linear;
  if (s == "cross_interaction") return EffectForm::cross_interaction;
  throw ConfigError("unknown effect_form '" + std::string(s) + "'");
}

enum class OutcomeFamily { conversion, engagement };

inline std::string_view to_string(OutcomeFamily f) {
  return f == OutcomeFamily::conversion ? "conversion" : "engagement";
}

inline OutcomeFamily outcome_family_from(std::string_view s) {
  if (s == "conversion") return OutcomeFamily::conversion;
  if (s == "engagement") return OutcomeFamily::engagement;
  throw ConfigError("unknown outcome family '" + std::string(s) + "'");
}

struct GeneratorConfig {
  std::string experiment_id = "exp";
  int n_users = 1000;
  int n_numeric = 5;
  int n_categorical = 2;
  int cat_vocab = 8;
  double treatment_share = 0.5;
  double base_rate = 0.05;  // conversion probability / engagement base level
  double target_relative_lift = 0.0;
  EffectForm effect_form = EffectForm::constant;
  double effect_heterogeneity = 1.0;  // spread of tau(x) around tau_bar
  double base_heterogeneity = 0.5;    // spread of the base score across users
  double noise_scale = 0.0;           // logit-scale (conversion) / outcome-scale (engagement)
  double drift_rate = 0.0;            // radians of effect rotation per week
  Date end_date{2025, 6, 30};
  std::uint64_t seed = 1;
  std::uint64_t effect_seed = 0;  // 0 -> derived from seed; share to share an effect function
  OutcomeFamily outcome = OutcomeFamily::conversion;
  std::string metric = "conversion";
  std::string vertical;
  std::string advertiser_id;
  std::string ad_product;
  std::string user_prefix = "u";  // distinct prefixes give disjoint user populations

  void validate() const {
    if (n_users < 2) throw ConfigError("n_users must be >= 2");
    if (n_numeric < 0 || n_categorical < 0 || n_numeric + n_categorical < 1) {
      throw ConfigError("need at least one feature");
    }
    if (n_categorical > 0 && cat_vocab < 2) {
      throw ConfigError("cat_vocab must be >= 2");
    }
    if (!(treatment_share > 0.0 && treatment_share < 1.0)) {
      throw ConfigError("treatment_share must lie in (0,1)");
    }
    if (outcome == OutcomeFamily::conversion &&
        !(base_rate > 0.0 && base_rate < 1.0)) {
      throw ConfigError("base_rate must lie in (0,1) for conversion outcomes");
    }
    if (noise_scale < 0.0) throw ConfigError("noise_scale must be >= 0");
    if (drift_rate < 0.0) throw ConfigError("drift_rate must be >= 0");
    if (effect_heterogeneity < 0.0) {
      throw ConfigError("effect_heterogeneity must be >= 0");
    }
    if (metric.empty()) throw ConfigError("metric name must be non-empty");
  }

  FeatureSchema schema() const {
    FeatureSchema s;
    s.version = 1;
    for (int i = 0; i < n_numeric; ++i) {
      s.features.push_back({"x_num_" + std::to_string(i), FeatureKind::numeric});
    }
    for (int i = 0; i < n_categorical; ++i) {
      s.features.push_back({"x_cat_" + std::to_string(i), FeatureKind::categorical});
    }
    return s;
  }

  std::string content_hash() const {
    std::string s;
    s += experiment_id;
    for (long v : {long(n_users), long(n_numeric), long(n_categorical),
                   long(cat_vocab)}) {
      s += "|" + std::to_string(v);
    }
    for (double v : {treatment_share, base_rate, target_relative_lift,
                     effect_heterogeneity, base_heterogeneity, noise_scale,
                     drift_rate}) {
      s += "|" + dtos(v);
    }
    s += "|" + std::string(to_string(effect_form));
    s += "|" + std::string(to_string(outcome));
    s += "|" + end_date.to_string();
    s += "|" + std::to_string(seed) + "|" + std::to_string(effect_seed);
    s += "|" + metric + "|" + vertical + "|" + advertiser_id + "|" + ad_product;
    s += "|" + user_prefix;
    return hex64(fnv1a64(s));
  }
};

// Per-user truth emitted alongside an experiment; evaluation oracle only,
// never part of the experiment file.
struct GroundTruthITE {
  std::vector<std::string> user_ids;  // parallels experiment observations
  std::vector<double> ite;
  std::vector<double> mean_y0;  // potential-outcome means (p0 / mu0)
  std::vector<double> mean_y1;
  std::string config_hash;

  double mean_ite() const { return mean_of(ite); }

  double ite_of(std::string_view uid) const {
    for (std::size_t i = 0; i < user_ids.size(); ++i) {
      if (user_ids[i] == uid) return ite[i];
    }
    throw DataError("no ground truth for user " + std::string(uid));
  }
};

inline void save_ground_truth(const std::filesystem::path& path,
                              const GroundTruthITE& gt) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ground-truth file " + path.string());
  out << "# config_hash=" << gt.config_hash << "\n";
  out << "user_id,true_ite\n";
  for (std::size_t i = 0; i < gt.user_ids.size(); ++i) {
    out << gt.user_ids[i] << "," << dtos(gt.ite[i]) << "\n";
  }
}

inline GroundTruthITE load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read ground-truth file " + path.string());
  GroundTruthITE gt;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("config_hash=");
      if (pos != std::string::npos) gt.config_hash = line.substr(pos + 12);
      continue;
    }
    if (line == "user_id,true_ite") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(path.filename().string() + " line " +
                      std::to_string(line_no) + ": malformed row");
    }
    gt.user_ids.push_back(line.substr(0, comma));
    gt.ite.push_back(std::stod(line.substr(comma + 1)));
  }
  return gt;
}

namespace detail {

struct EffectCoefficients {
  std::vector<double> beta;  // unit-norm direction over numeric features
  int ia = 0, ib = 1;        // numeric interaction pair (fallback form)
  std::vector<double> mu, nu;  // per-level coefficients over two categoricals
  bool categorical_cross = false;
  double c_lin = 0.0, c_int = 0.0;
};

// Effect coefficients are a function of (effect_seed, week): the base
// direction comes from the seed, then week t rotates consecutive coordinate
// pairs (and the linear/interaction mix) by drift_rate*(t-1) radians.
inline EffectCoefficients make_effect(const GeneratorConfig& cfg, int week) {
  EffectCoefficients e;
  const std::uint64_t es =
      cfg.effect_seed != 0 ? cfg.effect_seed : derive_seed(cfg.seed, "effect");
  Rng rng(derive_seed(es, "effect_coefficients"));
  e.beta.resize(cfg.n_numeric, 0.0);
  double norm = 0.0;
  for (double& b : e.beta) {
    b = rng.normal();
    norm += b * b;
  }
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& b : e.beta) b /= norm;
  }
  if (cfg.effect_form == EffectForm::cross_interaction) {
    // interaction-dominant mix
    const double inv = 1.0 / std::sqrt(0.5 * 0.5 + 1.0);
    e.c_lin = 0.5 * inv;
    e.c_int = 1.0 * inv;
    e.categorical_cross = cfg.n_categorical >= 2;
    if (e.categorical_cross) {
      e.mu.resize(cfg.cat_vocab);
      e.nu.resize(cfg.cat_vocab);
      for (double& v : e.mu) v = rng.normal();
      for (double& v : e.nu) v = rng.normal();
    } else if (cfg.n_numeric >= 2) {
      e.ia = static_cast<int>(rng.uniform_index(cfg.n_numeric));
      e.ib = static_cast<int>(rng.uniform_index(cfg.n_numeric - 1));
      if (e.ib >= e.ia) ++e.ib;
    } else {
      e.ia = e.ib = 0;
    }
  }
  const double theta = cfg.drift_rate * (week - 1);
  if (theta != 0.0) {
    const double c = std::cos(theta), s = std::sin(theta);
    auto rotate_pairs = [c, s](std::vector<double>& v) {
      for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
        const double a = v[i], b = v[i + 1];
        v[i] = c * a - s * b;
        v[i + 1] = s * a + c * b;
      }
    };
    rotate_pairs(e.beta);
    if (cfg.effect_form == EffectForm::cross_interaction) {
      rotate_pairs(e.mu);
      rotate_pairs(e.nu);
      const double a = e.c_lin, b = e.c_int;
      e.c_lin = c * a - s * b;
      e.c_int = s * a + c * b;
    }
  }
  return e;
}

struct BaseCoefficients {
  std::vector<double> beta_num;
  std::vector<std::vector<double>> cat_offsets;  // [feature][level]
};

// Base-score coefficients derive from the experiment seed, so every
// experiment carries its own idiosyncratic audience-response surface.
inline BaseCoefficients make_base(const GeneratorConfig& cfg) {
  BaseCoefficients b;
  Rng rng(derive_seed(cfg.seed, "base_coefficients"));
  const double num_scale =
      cfg.n_numeric > 0
          ? cfg.base_heterogeneity / std::sqrt(static_cast<double>(cfg.n_numeric))
          : 0.0;
  b.beta_num.resize(cfg.n_numeric);
  for (double& v : b.beta_num) v = num_scale * rng.normal();
  b.cat_offsets.resize(cfg.n_categorical);
  for (auto& levels : b.cat_offsets) {
    levels.resize(cfg.cat_vocab);
    for (double& v : levels) v = 0.3 * cfg.base_heterogeneity * rng.normal();
  }
  return b;
}

struct DrawnUser {
  std::vector<double> numerics;
  std::vector<int> cat_levels;
};

// Pure function of (seed, user index); weeks never alter a user's features.
inline DrawnUser draw_user(const GeneratorConfig& cfg, std::uint64_t index) {
  DrawnUser u;
  Rng rng(derive_seed(cfg.seed, "features", index));
  u.numerics.resize(cfg.n_numeric);
  for (double& v : u.numerics) v = rng.normal();
  u.cat_levels.resize(cfg.n_categorical);
  for (int& lvl : u.cat_levels) {
    // skewed level distribution, weights 1/(k+1)
    double total = 0.0;
    for (int k = 0; k < cfg.cat_vocab; ++k) total += 1.0 / (k + 1.0);
    double r = rng.uniform() * total;
    lvl = cfg.cat_vocab - 1;
    for (int k = 0; k < cfg.cat_vocab; ++k) {
      r -= 1.0 / (k + 1.0);
      if (r <= 0.0) {
        lvl = k;
        break;
      }
    }
  }
  return u;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

// Generates one experiment plus its ground truth for a given week index
// (weeks are 1-based; week 1 is the undrifted effect function).
inline std::pair<Experiment, GroundTruthITE> generate_week(
    const GeneratorConfig& cfg, int week) {
  cfg.validate();
  if (week < 1) throw ConfigError("week index must be >= 1");

  const auto effect = detail::make_effect(cfg, week);
  const auto base = detail::make_base(cfg);
  const double tau_bar = cfg.base_rate * cfg.target_relative_lift;
  const std::uint64_t n = static_cast<std::uint64_t>(cfg.n_users);

  Experiment exp;
  exp.experiment_id =
      week == 1 ? cfg.experiment_id : cfg.experiment_id + "_w" + std::to_string(week);
  exp.end_date = cfg.end_date.plus_days(7l * (week - 1));
  exp.vertical = cfg.vertical;
  exp.advertiser_id = cfg.advertiser_id;
  exp.ad_product = cfg.ad_product;
  exp.primary_outcome = cfg.metric;
  exp.schema = cfg.schema();
  exp.observations.reserve(n);

  GroundTruthITE gt;
  gt.config_hash = cfg.content_hash() + (week == 1 ? "" : "/w" + std::to_string(week));
  gt.user_ids.reserve(n);
  gt.ite.reserve(n);
  gt.mean_y0.reserve(n);
  gt.mean_y1.reserve(n);

  // Pass 1: draw users, compute base scores and effect scores.
  std::vector<detail::DrawnUser> users(n);
  std::vector<double> base_score(n), tau(n);
  Rng noise_rng(derive_seed(cfg.seed, "noise", static_cast<std::uint64_t>(week)));
  for (std::uint64_t i = 0; i < n; ++i) {
    users[i] = detail::draw_user(cfg, i);
    const auto& u = users[i];
    double s = 0.0;
    for (int k = 0; k < cfg.n_numeric; ++k) s += base.beta_num[k] * u.numerics[k];
    for (int k = 0; k < cfg.n_categorical; ++k) {
      s += base.cat_offsets[k][u.cat_levels[k]];
    }
    if (cfg.outcome == OutcomeFamily::conversion) s += cfg.noise_scale * noise_rng.normal();
    base_score[i] = s;

    double u_eff = 0.0;
    if (cfg.effect_form == EffectForm::linear) {
      for (int k = 0; k < cfg.n_numeric; ++k) u_eff += effect.beta[k] * u.numerics[k];
    } else if (cfg.effect_form == EffectForm::cross_interaction) {
      double lin = 0.0;
      for (int k = 0; k < cfg.n_numeric; ++k) lin += effect.beta[k] * u.numerics[k];
      double prod = 0.0;
      if (effect.categorical_cross) {
        prod = effect.mu[u.cat_levels[0]] * effect.nu[u.cat_levels[1]];
      } else if (cfg.n_numeric >= 2) {
        prod = u.numerics[effect.ia] * u.numerics[effect.ib];
      }
      u_eff = effect.c_lin * lin + effect.c_int * prod;
    }
    tau[i] = tau_bar *
             (1.0 + cfg.effect_heterogeneity * std::clamp(u_eff, -1.5, 1.5));
  }

  // Center / calibrate the base so the control mean matches base_rate.
  double intercept = 0.0;
  if (cfg.outcome == OutcomeFamily::conversion) {
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      double m = 0.0;
      for (std::uint64_t i = 0; i < n; ++i) m += detail::sigmoid(mid + base_score[i]);
      m /= static_cast<double>(n);
      (m < cfg.base_rate ? lo : hi) = mid;
    }
    intercept = 0.5 * (lo + hi);
  } else {
    intercept = cfg.base_rate - mean_of(base_score);
  }

  // Pass 2: potential outcomes, arm assignment, realized outcomes.
  Rng arm_rng(derive_seed(cfg.seed, "arm", static_cast<std::uint64_t>(week)));
  Rng outcome_rng(derive_seed(cfg.seed, "outcome", static_cast<std::uint64_t>(week)));
  char uid[64];
  for (std::uint64_t i = 0; i < n; ++i) {
    std::snprintf(uid, sizeof(uid), "%s%08llu", cfg.user_prefix.c_str(),
                  static_cast<unsigned long long>(i));
    const bool treated = arm_rng.uniform() < cfg.treatment_share;

    double y0 = 0.0, y1 = 0.0, m0 = 0.0, m1 = 0.0;
    if (cfg.outcome == OutcomeFamily::conversion) {
      m0 = detail::sigmoid(intercept + base_score[i]);
      m1 = m0 + tau[i];
      if (m1 < 0.0 || m1 > 1.0) {
        throw ConfigError(
            "target_relative_lift/effect_heterogeneity push treated outcome "
            "probability to " +
            dtos(m1) + " for user " + uid);
      }
      const double r = outcome_rng.uniform();  // shared across potential arms
      y0 = r < m0 ? 1.0 : 0.0;
      y1 = r < m1 ? 1.0 : 0.0;
    } else {
      m0 = intercept + base_score[i];
      m1 = m0 + tau[i];
      const double eps = cfg.noise_scale * outcome_rng.normal();
      y0 = m0 + eps;
      y1 = m1 + eps;
    }

    UserObservation obs;
    obs.user_id = uid;
    obs.arm = treated ? Arm::treatment : Arm::control;
    obs.features.reserve(cfg.n_numeric + cfg.n_categorical);
    for (int k = 0; k < cfg.n_numeric; ++k) obs.features.emplace_back(users[i].numerics[k]);
    for (int k = 0; k < cfg.n_categorical; ++k) {
      obs.features.emplace_back("v" + std::to_string(users[i].cat_levels[k]));
    }
    obs.outcomes.emplace_back(cfg.metric, treated ? y1 : y0);

    exp.observations.push_back(std::move(obs));
    gt.user_ids.push_back(uid);
    gt.ite.push_back(m1 - m0);
    gt.mean_y0.push_back(m0);
    gt.mean_y1.push_back(m1);
  }

  exp.validate();
  return {std::move(exp), std::move(gt)};
}

inline std::pair<Experiment, GroundTruthITE> generate_experiment(
    const GeneratorConfig& cfg) {
  return generate_week(cfg, 1);
}

struct WeeklyBatch {
  int week = 1;
  Experiment experiment;
  GroundTruthITE ground_truth;
};

inline std::vector<WeeklyBatch> generate_stream(const GeneratorConfig& cfg,
                                                int weeks) {
  if (weeks < 1) throw ConfigError("weeks must be >= 1");
  std::vector<WeeklyBatch> out;
  out.reserve(weeks);
  for (int w = 1; w <= weeks; ++w) {
    auto [exp, gt] = generate_week(cfg, w);
    out.push_back(WeeklyBatch{w, std::move(exp), std::move(gt)});
  }
  return out;
}

}  // namespace uplift
