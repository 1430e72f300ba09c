#pragma once

// Uplift-curve and AUUC computation plus the robustness/stability report
// suite.
//
// Curve definition: sort users by predicted ITE descending, ties broken by
// user_id ascending. For the prefix holding the top fraction t of users with
// n_T treated (mean outcome yT) and n_C control (mean yC):
//     gain(t) = (yT - yC) * (n_T + n_C).
// The curve samples n_points evenly spaced prefixes plus t = 1; prefixes with
// an empty arm are undefined and linearly interpolated from their defined
// neighbors (gain(0) = 0 anchors the left end). AUUC is the trapezoidal
// integral of gain over t in [0,1] divided by gain(1), which puts random
// targeting at ~0.5. Experiments whose |total gain| falls below the
// degenerate floor (1e-6 * n * mean |outcome| by default) refuse to produce
// an AUUC: the normalization is unstable there.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "uplift/common.hpp"
#include "uplift/data.hpp"
#include "uplift/selection.hpp"
#include "uplift/tlearner.hpp"

namespace uplift {

struct CurvePoint {
  double t = 0.0;
  double gain = 0.0;
  bool interpolated = false;
};

struct UpliftCurve {
  std::vector<CurvePoint> samples;  // t strictly increasing, starts at 0
  double total_gain = 0.0;          // gain(1)
  double auuc_normalized = std::numeric_limits<double>::quiet_NaN();
  double degenerate_floor = 0.0;
  std::int64_t n_treatment = 0;
  std::int64_t n_control = 0;
};

struct EvalOptions {
  int n_points = 100;
  double min_total_gain_factor = 1e-6;
  int workers = 1;
};

inline double auuc(const UpliftCurve& curve) {
  if (curve.samples.size() < 2) throw DataError("uplift curve has no samples");
  if (std::abs(curve.total_gain) < curve.degenerate_floor) {
    throw DataError("degenerate experiment: |total gain| " +
                    dtos(std::abs(curve.total_gain)) + " below floor " +
                    dtos(curve.degenerate_floor));
  }
  double area = 0.0;
  for (std::size_t k = 1; k < curve.samples.size(); ++k) {
    const auto& a = curve.samples[k - 1];
    const auto& b = curve.samples[k];
    area += (b.t - a.t) * (a.gain + b.gain) * 0.5;
  }
  return area / curve.total_gain;
}

inline UpliftCurve uplift_curve(const std::vector<ITEScore>& scores,
                                const Experiment& eval_exp,
                                const std::string& metric, int n_points,
                                double min_total_gain_factor = 1e-6) {
  if (n_points < 1) throw ConfigError("n_points must be >= 1");
  const std::size_t n = eval_exp.observations.size();
  if (n == 0) throw DataError("evaluation experiment is empty");

  std::map<std::string_view, double> score_of;
  for (const auto& s : scores) score_of[s.user_id] = s.ite;

  struct Row {
    std::string_view user_id;
    double score;
    double y;
    bool treated;
  };
  std::vector<Row> rows;
  rows.reserve(n);
  std::size_t n_t = 0, n_c = 0;
  double abs_sum = 0.0;
  for (const auto& o : eval_exp.observations) {
    const auto it = score_of.find(o.user_id);
    if (it == score_of.end()) {
      throw DataError("user " + o.user_id + " in evaluation experiment " +
                      eval_exp.experiment_id + " has no score");
    }
    const double y = o.outcome(metric);
    rows.push_back(Row{o.user_id, it->second, y, o.arm == Arm::treatment});
    abs_sum += std::abs(y);
    (o.arm == Arm::treatment ? n_t : n_c) += 1;
  }
  if (n_t == 0 || n_c == 0) {
    throw DataError("evaluation experiment " + eval_exp.experiment_id +
                    " is missing an arm");
  }

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.user_id < b.user_id;  // deterministic tie break
  });

  // Prefix sizes: n_points evenly spaced fractions plus t=1, deduplicated.
  std::vector<std::size_t> prefix_sizes;
  const std::size_t k_points = std::min<std::size_t>(n_points, n);
  for (std::size_t j = 1; j <= k_points; ++j) {
    std::size_t m = static_cast<std::size_t>(
        std::llround(static_cast<double>(j) * static_cast<double>(n) /
                     static_cast<double>(k_points)));
    m = std::clamp<std::size_t>(m, 1, n);
    if (prefix_sizes.empty() || m > prefix_sizes.back()) prefix_sizes.push_back(m);
  }
  if (prefix_sizes.back() != n) prefix_sizes.push_back(n);

  UpliftCurve curve;
  curve.n_treatment = static_cast<std::int64_t>(n_t);
  curve.n_control = static_cast<std::int64_t>(n_c);
  curve.samples.push_back(CurvePoint{0.0, 0.0, false});

  double sum_t = 0.0, sum_c = 0.0;
  std::size_t cnt_t = 0, cnt_c = 0;
  std::size_t next = 0;
  std::vector<std::optional<double>> gains(prefix_sizes.size());
  for (std::size_t m = 1; m <= n; ++m) {
    const Row& r = rows[m - 1];
    if (r.treated) {
      sum_t += r.y;
      ++cnt_t;
    } else {
      sum_c += r.y;
      ++cnt_c;
    }
    if (next < prefix_sizes.size() && m == prefix_sizes[next]) {
      if (cnt_t > 0 && cnt_c > 0) {
        gains[next] =
            (sum_t / cnt_t - sum_c / cnt_c) * static_cast<double>(cnt_t + cnt_c);
      }
      ++next;
    }
  }

  // Interpolate undefined prefixes between defined neighbors; t=0 anchors the
  // left side and the full prefix is always defined.
  for (std::size_t k = 0; k < prefix_sizes.size(); ++k) {
    const double t = static_cast<double>(prefix_sizes[k]) / static_cast<double>(n);
    if (gains[k]) {
      curve.samples.push_back(CurvePoint{t, *gains[k], false});
      continue;
    }
    double t_lo = 0.0, g_lo = 0.0;
    for (std::size_t b = k; b-- > 0;) {
      if (gains[b]) {
        t_lo = static_cast<double>(prefix_sizes[b]) / static_cast<double>(n);
        g_lo = *gains[b];
        break;
      }
    }
    double t_hi = 1.0, g_hi = 0.0;
    for (std::size_t a = k + 1; a < prefix_sizes.size(); ++a) {
      if (gains[a]) {
        t_hi = static_cast<double>(prefix_sizes[a]) / static_cast<double>(n);
        g_hi = *gains[a];
        break;
      }
    }
    const double w = (t - t_lo) / (t_hi - t_lo);
    curve.samples.push_back(CurvePoint{t, g_lo + w * (g_hi - g_lo), true});
  }

  curve.total_gain = curve.samples.back().gain;
  curve.degenerate_floor = min_total_gain_factor * static_cast<double>(n) *
                           (abs_sum > 0.0 ? abs_sum / static_cast<double>(n) : 1.0);
  if (std::abs(curve.total_gain) >= curve.degenerate_floor) {
    curve.auuc_normalized = auuc(curve);
  }
  return curve;
}

inline void write_curve_csv(const std::filesystem::path& path,
                            const UpliftCurve& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write curve file " + path.string());
  out << "t,gain,gain_normalized\n";
  for (const auto& p : curve.samples) {
    const double norm = curve.total_gain != 0.0 ? p.gain / curve.total_gain : 0.0;
    out << dtos(p.t) << "," << dtos(p.gain) << "," << dtos(norm) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Rank statistics
// ---------------------------------------------------------------------------

// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson_correlation(const std::vector<double>& a,
                                  const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DataError("correlation needs two equal-length series of size >= 2");
  }
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw DataError("correlation undefined for a constant series");
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman_correlation(const std::vector<double>& a,
                                   const std::vector<double>& b) {
  return pearson_correlation(average_ranks(a), average_ranks(b));
}

// Spearman over the user intersection of two score sets.
inline double pairwise_rank_correlation(const std::vector<ITEScore>& a,
                                        const std::vector<ITEScore>& b) {
  std::map<std::string_view, double> bmap;
  for (const auto& s : b) bmap[s.user_id] = s.ite;
  std::vector<double> xa, xb;
  for (const auto& s : a) {
    const auto it = bmap.find(s.user_id);
    if (it != bmap.end()) {
      xa.push_back(s.ite);
      xb.push_back(it->second);
    }
  }
  if (xa.empty()) throw DataError("score sets share no users");
  return spearman_correlation(xa, xb);
}

// ---------------------------------------------------------------------------
// Model evaluation reports
// ---------------------------------------------------------------------------

struct ModelEval {
  std::string model_id;
  std::vector<double> per_experiment_auuc;
  double mean_auuc = 0.0;
  double ci_half_width = 0.0;  // 95% t-interval over per-experiment AUUCs
};

struct EvalReport {
  std::vector<ModelEval> models;
  double random_baseline_auuc = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::tuple<std::string, std::string, double>> pairwise_rank_corr;
};

inline ModelEval summarize_auucs(std::string model_id, std::vector<double> auucs) {
  ModelEval ev;
  ev.model_id = std::move(model_id);
  ev.per_experiment_auuc = std::move(auucs);
  ev.mean_auuc = mean_of(ev.per_experiment_auuc);
  const std::size_t n = ev.per_experiment_auuc.size();
  if (n >= 2) {
    const double sd = std::sqrt(sample_variance(ev.per_experiment_auuc));
    ev.ci_half_width =
        student_t_975(static_cast<int>(n - 1)) * sd / std::sqrt(static_cast<double>(n));
  }
  return ev;
}

// Mean AUUC per model over the evaluation experiments; enforces the
// train/eval separation invariant.
inline EvalReport evaluate_models(const std::vector<const TLearnerModel*>& models,
                                  const std::vector<Experiment>& eval_exps,
                                  const std::string& metric,
                                  const EvalOptions& opts = {}) {
  if (models.empty()) throw ConfigError("no models to evaluate");
  if (eval_exps.empty()) throw ConfigError("no evaluation experiments");
  for (const TLearnerModel* m : models) {
    for (const auto& e : eval_exps) {
      if (std::find(m->training_experiment_ids.begin(),
                    m->training_experiment_ids.end(),
                    e.experiment_id) != m->training_experiment_ids.end()) {
        throw DataError("experiment " + e.experiment_id +
                        " appears in both the training and evaluation sets");
      }
    }
  }
  EvalReport report;
  for (const TLearnerModel* m : models) {
    std::vector<double> auucs;
    for (const auto& e : eval_exps) {
      const auto scores =
          score_batch(*m, e.observations, e.end_date, opts.workers);
      const UpliftCurve curve = uplift_curve(scores, e, metric, opts.n_points,
                                             opts.min_total_gain_factor);
      auucs.push_back(auuc(curve));
    }
    report.models.push_back(summarize_auucs(m->content_id(), std::move(auucs)));
  }
  return report;
}

// Random-targeting baseline: mean AUUC over `reps` random score draws.
inline double random_baseline_auuc(const Experiment& eval_exp,
                                   const std::string& metric, int n_points,
                                   int reps, std::uint64_t seed) {
  double total = 0.0;
  for (int r = 0; r < reps; ++r) {
    Rng rng(derive_seed(seed, "random_baseline", static_cast<std::uint64_t>(r)));
    std::vector<ITEScore> scores;
    scores.reserve(eval_exp.observations.size());
    for (const auto& o : eval_exp.observations) {
      scores.push_back(ITEScore{o.user_id, rng.uniform(), ScopeLevel::general,
                                "", eval_exp.end_date});
    }
    total += auuc(uplift_curve(scores, eval_exp, metric, n_points));
  }
  return total / reps;
}

// ---------------------------------------------------------------------------
// Robustness: cross-algorithm agreement and in/out-of-sample gaps.
// ---------------------------------------------------------------------------

struct RobustnessReport {
  std::vector<std::tuple<std::string, std::string, double>> pairwise_rank_corr;
  struct PerModel {
    std::string model_id;
    double auuc_in = 0.0;
    double auuc_out = 0.0;
    double gap = 0.0;  // in - out, signed
  };
  std::vector<PerModel> per_model;
};

inline RobustnessReport robustness_report(
    const std::vector<const TLearnerModel*>& models,
    const std::vector<Experiment>& train_exps,
    const std::vector<Experiment>& eval_exps, const std::string& metric,
    const EvalOptions& opts = {}) {
  if (models.size() < 2) {
    throw ConfigError("robustness report needs at least two models");
  }
  if (eval_exps.empty()) throw ConfigError("no evaluation experiments");

  // scores over the pooled eval users, keyed (experiment, user)
  std::vector<std::vector<ITEScore>> all_scores(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (const auto& e : eval_exps) {
      auto s = score_batch(*models[m], e.observations, e.end_date, opts.workers);
      for (auto& sc : s) sc.user_id = e.experiment_id + "/" + sc.user_id;
      all_scores[m].insert(all_scores[m].end(), s.begin(), s.end());
    }
  }

  RobustnessReport report;
  for (std::size_t a = 0; a < models.size(); ++a) {
    for (std::size_t b = a + 1; b < models.size(); ++b) {
      report.pairwise_rank_corr.emplace_back(
          models[a]->content_id(), models[b]->content_id(),
          pairwise_rank_correlation(all_scores[a], all_scores[b]));
    }
  }

  auto mean_auuc_over = [&](const TLearnerModel& m,
                            const std::vector<Experiment>& exps) {
    std::vector<double> auucs;
    for (const auto& e : exps) {
      const auto scores = score_batch(m, e.observations, e.end_date, opts.workers);
      try {
        auucs.push_back(auuc(
            uplift_curve(scores, e, metric, opts.n_points, opts.min_total_gain_factor)));
      } catch (const DataError&) {
        // degenerate experiment: skip rather than poison the mean
      }
    }
    return auucs.empty() ? std::numeric_limits<double>::quiet_NaN()
                         : mean_of(auucs);
  };

  for (const TLearnerModel* m : models) {
    RobustnessReport::PerModel pm;
    pm.model_id = m->content_id();
    pm.auuc_in = mean_auuc_over(*m, train_exps);
    pm.auuc_out = mean_auuc_over(*m, eval_exps);
    pm.gap = pm.auuc_in - pm.auuc_out;
    report.per_model.push_back(std::move(pm));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Stability: week-over-week score consistency over a fixed user panel.
// ---------------------------------------------------------------------------

struct StabilityReport {
  struct WeekPair {
    int week_from = 0;
    int week_to = 0;
    double rank_correlation = 0.0;
    double mean_abs_change = 0.0;
  };
  std::vector<WeekPair> week_over_week;
  // cohort -> per-week AUUC on the panel experiment (NaN where undefined)
  std::map<std::string, std::vector<double>> cohort_auuc;
  std::vector<double> cohort_spread_per_week;  // max - min across cohorts
};

inline StabilityReport stability_report(
    const std::vector<std::vector<ITEScore>>& weekly_scores,
    const Experiment* panel_exp = nullptr, const std::string& metric = "",
    const std::map<std::string, std::string>* cohort_of = nullptr,
    const EvalOptions& opts = {}) {
  if (weekly_scores.size() < 2) {
    throw ConfigError("stability report needs at least two weeks");
  }

  // panel = users present in every week
  std::map<std::string, double> first;
  for (const auto& s : weekly_scores[0]) first[s.user_id] = s.ite;
  std::set<std::string> panel;
  for (const auto& [uid, v] : first) {
    (void)v;
    panel.insert(uid);
  }
  for (std::size_t w = 1; w < weekly_scores.size(); ++w) {
    std::set<std::string> seen;
    for (const auto& s : weekly_scores[w]) seen.insert(s.user_id);
    std::set<std::string> kept;
    std::set_intersection(panel.begin(), panel.end(), seen.begin(), seen.end(),
                          std::inserter(kept, kept.begin()));
    panel = std::move(kept);
  }
  if (panel.empty()) throw DataError("weekly score sets share no users");

  StabilityReport report;
  for (std::size_t w = 1; w < weekly_scores.size(); ++w) {
    std::map<std::string_view, double> prev, cur;
    for (const auto& s : weekly_scores[w - 1]) prev[s.user_id] = s.ite;
    for (const auto& s : weekly_scores[w]) cur[s.user_id] = s.ite;
    std::vector<double> a, b;
    double abs_change = 0.0;
    for (const auto& uid : panel) {
      a.push_back(prev.at(uid));
      b.push_back(cur.at(uid));
      abs_change += std::abs(b.back() - a.back());
    }
    StabilityReport::WeekPair wp;
    wp.week_from = static_cast<int>(w);
    wp.week_to = static_cast<int>(w + 1);
    wp.rank_correlation = spearman_correlation(a, b);
    wp.mean_abs_change = abs_change / static_cast<double>(panel.size());
    report.week_over_week.push_back(wp);
  }

  if (panel_exp && cohort_of) {
    std::map<std::string, Experiment> cohort_exps;
    for (const auto& o : panel_exp->observations) {
      const auto it = cohort_of->find(o.user_id);
      if (it == cohort_of->end() || panel.count(o.user_id) == 0) continue;
      Experiment& ce = cohort_exps[it->second];
      if (ce.experiment_id.empty()) {
        ce = Experiment{panel_exp->experiment_id + "/" + it->second,
                        panel_exp->end_date,
                        panel_exp->vertical,
                        panel_exp->advertiser_id,
                        panel_exp->ad_product,
                        panel_exp->primary_outcome,
                        panel_exp->schema,
                        {}};
      }
      ce.observations.push_back(o);
    }
    report.cohort_spread_per_week.assign(weekly_scores.size(), 0.0);
    for (auto& [cohort, ce] : cohort_exps) {
      auto& row = report.cohort_auuc[cohort];
      for (const auto& weekly : weekly_scores) {
        try {
          row.push_back(auuc(uplift_curve(weekly, ce, metric, opts.n_points,
                                          opts.min_total_gain_factor)));
        } catch (const DataError&) {
          row.push_back(std::numeric_limits<double>::quiet_NaN());
        }
      }
    }
    for (std::size_t w = 0; w < weekly_scores.size(); ++w) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      for (const auto& [cohort, row] : report.cohort_auuc) {
        (void)cohort;
        if (!std::isnan(row[w])) {
          lo = std::min(lo, row[w]);
          hi = std::max(hi, row[w]);
        }
      }
      report.cohort_spread_per_week[w] = hi >= lo ? hi - lo : 0.0;
    }
  }
  return report;
}

}  // namespace uplift
