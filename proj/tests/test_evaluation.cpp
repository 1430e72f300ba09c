#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "uplift/evaluation.hpp"
#include "uplift/simgen.hpp"

using namespace uplift;

namespace {

// Minimal experiment from parallel vectors.
Experiment exp_from(const std::vector<std::string>& uids,
                    const std::vector<bool>& treated,
                    const std::vector<double>& y) {
  Experiment e;
  e.experiment_id = "eval";
  e.end_date = Date{2025, 6, 1};
  e.primary_outcome = "m";
  e.schema.features = {{"x", FeatureKind::numeric}};
  for (std::size_t i = 0; i < uids.size(); ++i) {
    UserObservation o;
    o.user_id = uids[i];
    o.arm = treated[i] ? Arm::treatment : Arm::control;
    o.features = {0.0};
    o.outcomes = {{"m", y[i]}};
    e.observations.push_back(std::move(o));
  }
  return e;
}

std::vector<ITEScore> scores_of(const std::vector<std::string>& uids,
                                const std::vector<double>& s) {
  std::vector<ITEScore> out;
  for (std::size_t i = 0; i < uids.size(); ++i) {
    out.push_back(ITEScore{uids[i], s[i], ScopeLevel::general, "", Date{2025, 6, 1}});
  }
  return out;
}

// Independent brute-force AUUC: re-sorts, recounts every prefix from scratch
// (O(n^2)), applies the same interpolation rule, integrates trapezoids.
// Shares no code with the module path.
double brute_force_auuc(const std::vector<std::string>& uids,
                        const std::vector<bool>& treated,
                        const std::vector<double>& y,
                        const std::vector<double>& s) {
  const std::size_t n = uids.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return uids[a] < uids[b];
  });
  std::vector<double> gain(n + 1, 0.0);
  std::vector<bool> defined(n + 1, false);
  defined[0] = true;
  for (std::size_t m = 1; m <= n; ++m) {
    double st = 0, sc = 0;
    std::size_t ct = 0, cc = 0;
    for (std::size_t k = 0; k < m; ++k) {  // recount from scratch
      const std::size_t i = order[k];
      if (treated[i]) {
        st += y[i];
        ++ct;
      } else {
        sc += y[i];
        ++cc;
      }
    }
    if (ct > 0 && cc > 0) {
      gain[m] = (st / ct - sc / cc) * static_cast<double>(m);
      defined[m] = true;
    }
  }
  for (std::size_t m = 1; m <= n; ++m) {
    if (defined[m]) continue;
    std::size_t lo = m;
    while (!defined[lo]) --lo;
    std::size_t hi = m;
    while (hi <= n && !defined[hi]) ++hi;
    const double w = static_cast<double>(m - lo) / static_cast<double>(hi - lo);
    gain[m] = gain[lo] + w * (gain[hi] - gain[lo]);
  }
  double area = 0.0;
  for (std::size_t m = 1; m <= n; ++m) {
    area += (gain[m - 1] + gain[m]) / 2.0 / static_cast<double>(n);
  }
  return area / gain[n];
}

struct MicroInstance {
  std::vector<std::string> uids;
  std::vector<bool> treated;
  std::vector<double> y;
  std::vector<double> s;
};

MicroInstance random_micro(std::uint64_t seed) {
  Rng rng(seed);
  MicroInstance mi;
  const std::size_t n = 10 + rng.uniform_index(91);  // 10..100
  // guarantee both arms and a non-degenerate total
  for (std::size_t i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "u%03zu", i);
    mi.uids.push_back(buf);
    mi.treated.push_back(i < 2 ? i == 0 : rng.uniform() < 0.5);
    mi.y.push_back(rng.uniform() < 0.4 ? 1.0 : 0.0);
    // coarse scores force ties through the tie-break path
    mi.s.push_back(std::floor(rng.uniform() * 20.0) / 20.0);
  }
  return mi;
}

}  // namespace

TEST_CASE("six-user hand example matches hand arithmetic") {
  const std::vector<std::string> uids{"u1", "u2", "u3", "u4", "u5", "u6"};
  const std::vector<bool> treated{true, false, true, false, true, false};
  const std::vector<double> y{1, 0, 1, 1, 0, 0};
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
  const Experiment e = exp_from(uids, treated, y);
  const UpliftCurve curve = uplift_curve(scores_of(uids, s), e, "m", 6);

  // prefixes: m=1 undefined (no control) -> interpolated to 1.0;
  // m=2..6 gains 2, 3, 2, 5/6, 2; total gain 2.
  REQUIRE(curve.samples.size() == 7);
  CHECK(curve.samples[0].gain == 0.0);
  CHECK(curve.samples[1].interpolated);
  CHECK(curve.samples[1].gain == doctest::Approx(1.0));
  CHECK(curve.samples[2].gain == doctest::Approx(2.0));
  CHECK(curve.samples[3].gain == doctest::Approx(3.0));
  CHECK(curve.samples[4].gain == doctest::Approx(2.0));
  CHECK(curve.samples[5].gain == doctest::Approx(5.0 / 6.0));
  CHECK(curve.samples[6].gain == doctest::Approx(2.0));
  CHECK(curve.total_gain == doctest::Approx(2.0));
  CHECK(auuc(curve) == doctest::Approx(0.8194444444).epsilon(1e-9));
}

TEST_CASE("module AUUC equals independent brute force on micro instances") {
  double max_diff = 0.0;
  int evaluated = 0;
  for (std::uint64_t seed = 1; seed <= 300; ++seed) {
    const MicroInstance mi = random_micro(seed);
    const Experiment e = exp_from(mi.uids, mi.treated, mi.y);
    const UpliftCurve curve = uplift_curve(
        scores_of(mi.uids, mi.s), e, "m", static_cast<int>(mi.uids.size()));
    if (std::abs(curve.total_gain) < curve.degenerate_floor) continue;
    const double a = auuc(curve);
    const double b = brute_force_auuc(mi.uids, mi.treated, mi.y, mi.s);
    max_diff = std::max(max_diff, std::abs(a - b));
    ++evaluated;
  }
  CHECK(evaluated > 250);
  CHECK(max_diff < 1e-9);
}

TEST_CASE("exactly linear gain curve scores 0.5") {
  UpliftCurve curve;
  for (int k = 0; k <= 10; ++k) {
    curve.samples.push_back(CurvePoint{k / 10.0, k / 10.0 * 42.0, false});
  }
  curve.total_gain = 42.0;
  curve.degenerate_floor = 1e-9;
  CHECK(auuc(curve) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("constant scores give a deterministic near-linear curve") {
  Rng rng(77);
  std::vector<std::string> uids;
  std::vector<bool> treated;
  std::vector<double> y;
  std::vector<double> s;
  for (int i = 0; i < 2000; ++i) {
    uids.push_back("u" + std::to_string(i));
    treated.push_back(rng.uniform() < 0.5);
    y.push_back(rng.uniform() < (treated.back() ? 0.3 : 0.2) ? 1.0 : 0.0);
    s.push_back(0.125);  // all tied
  }
  const Experiment e = exp_from(uids, treated, y);
  const UpliftCurve a = uplift_curve(scores_of(uids, s), e, "m", 50);
  const UpliftCurve b = uplift_curve(scores_of(uids, s), e, "m", 50);
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    CHECK(a.samples[k].gain == b.samples[k].gain);  // deterministic tie break
  }
  CHECK(auuc(a) > 0.40);
  CHECK(auuc(a) < 0.60);
}

TEST_CASE("monotone transforms of scores leave curve and AUUC unchanged") {
  const MicroInstance mi = random_micro(424242);
  const Experiment e = exp_from(mi.uids, mi.treated, mi.y);
  const int np = static_cast<int>(mi.uids.size());
  const UpliftCurve base = uplift_curve(scores_of(mi.uids, mi.s), e, "m", np);
  std::vector<double> warped;
  for (double v : mi.s) warped.push_back(std::exp(3.0 * v) + 1.0);
  const UpliftCurve after = uplift_curve(scores_of(mi.uids, warped), e, "m", np);
  REQUIRE(base.samples.size() == after.samples.size());
  for (std::size_t k = 0; k < base.samples.size(); ++k) {
    CHECK(base.samples[k].gain == after.samples[k].gain);
  }
  CHECK(auuc(base) == auuc(after));
}

TEST_CASE("score negation reflects the curve on balanced prefixes") {
  // alternating arms in score order keep every even prefix arm-balanced,
  // where the reflection identity is exact
  Rng rng(99);
  std::vector<std::string> uids;
  std::vector<bool> treated;
  std::vector<double> y;
  std::vector<double> s;
  const int n = 40;
  for (int i = 0; i < n; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "u%02d", i);
    uids.push_back(buf);
    treated.push_back(i % 2 == 0);
    y.push_back(rng.uniform() < 0.5 ? 1.0 : 0.0);
    s.push_back(static_cast<double>(n - i));  // distinct, descending
  }
  const Experiment e = exp_from(uids, treated, y);
  const UpliftCurve fwd = uplift_curve(scores_of(uids, s), e, "m", n / 2);
  std::vector<double> neg;
  for (double v : s) neg.push_back(-v);
  const UpliftCurve rev = uplift_curve(scores_of(uids, neg), e, "m", n / 2);
  if (std::abs(fwd.total_gain) >= fwd.degenerate_floor) {
    CHECK(auuc(rev) == doctest::Approx(1.0 - auuc(fwd)).epsilon(1e-9));
  }
}

TEST_CASE("true-ITE scores dominate the random baseline") {
  GeneratorConfig cfg;
  cfg.experiment_id = "dom";
  cfg.n_users = 20000;
  cfg.base_rate = 0.2;
  cfg.target_relative_lift = 0.3;
  cfg.effect_form = EffectForm::linear;
  cfg.effect_heterogeneity = 1.0;
  cfg.seed = 31;
  auto [e, gt] = generate_experiment(cfg);
  std::vector<ITEScore> oracle;
  for (std::size_t i = 0; i < e.observations.size(); ++i) {
    oracle.push_back(ITEScore{e.observations[i].user_id, gt.ite[i],
                              ScopeLevel::general, "", e.end_date});
  }
  const double a = auuc(uplift_curve(oracle, e, "conversion", 100));
  const double baseline = random_baseline_auuc(e, "conversion", 100, 20, 5);
  CHECK(a > baseline + 0.05);
  CHECK(a > 0.55);
  CHECK(baseline == doctest::Approx(0.5).epsilon(0.06));
}

TEST_CASE("degenerate total gain refuses an AUUC") {
  // identical arms: total gain ~ 0
  std::vector<std::string> uids;
  std::vector<bool> treated;
  std::vector<double> y;
  std::vector<double> s;
  for (int i = 0; i < 100; ++i) {
    uids.push_back("u" + std::to_string(i));
    treated.push_back(i % 2 == 0);
    y.push_back(1.0);  // constant outcome, zero lift everywhere
    s.push_back(i * 0.01);
  }
  const Experiment e = exp_from(uids, treated, y);
  const UpliftCurve curve = uplift_curve(scores_of(uids, s), e, "m", 10);
  CHECK(std::isnan(curve.auuc_normalized));
  CHECK_THROWS_WITH_AS(auuc(curve), doctest::Contains("degenerate"), DataError);
}

TEST_CASE("missing scored user is an error") {
  const std::vector<std::string> uids{"a", "b", "c", "d"};
  const Experiment e =
      exp_from(uids, {true, false, true, false}, {1, 0, 0, 1});
  const auto scores = scores_of({"a", "b", "c"}, {0.3, 0.2, 0.1});
  CHECK_THROWS_WITH_AS(uplift_curve(scores, e, "m", 4),
                       doctest::Contains("has no score"), DataError);
}

TEST_CASE("spearman handles ties by average rank") {
  CHECK(spearman_correlation({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman_correlation({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
  const double r = spearman_correlation({1, 1, 2, 3}, {5, 6, 7, 8});
  CHECK(r > 0.9);
  CHECK(r < 1.0);
}

TEST_CASE("pairwise rank correlation: identity is 1, disjoint users error") {
  auto s1 = scores_of({"a", "b", "c"}, {0.1, 0.5, 0.3});
  CHECK(pairwise_rank_correlation(s1, s1) == doctest::Approx(1.0));
  auto s2 = scores_of({"x", "y"}, {0.1, 0.2});
  CHECK_THROWS_WITH_AS(pairwise_rank_correlation(s1, s2),
                       doctest::Contains("share no users"), DataError);
}

TEST_CASE("robustness report: two learners agree on strong signal") {
  GeneratorConfig cfg;
  cfg.experiment_id = "train";
  cfg.n_users = 30000;
  cfg.outcome = OutcomeFamily::engagement;
  cfg.metric = "sessions";
  cfg.base_rate = 2.0;
  cfg.target_relative_lift = 0.4;
  cfg.effect_form = EffectForm::linear;
  cfg.effect_heterogeneity = 1.0;
  cfg.noise_scale = 0.5;
  cfg.seed = 41;
  cfg.effect_seed = 4141;
  auto [train_exp, gt_train] = generate_experiment(cfg);
  GeneratorConfig eval_cfg = cfg;
  eval_cfg.experiment_id = "holdout";
  eval_cfg.n_users = 8000;
  eval_cfg.seed = 42;
  eval_cfg.user_prefix = "h";
  auto [eval_exp, gt_eval] = generate_experiment(eval_cfg);

  LearnerConfig lin;
  lin.kind = LearnerKind::linear;
  lin.loss = Loss::squared_error;
  lin.epochs = 6;
  lin.learning_rate = 0.05;
  lin.seed = 1;
  LearnerConfig deep = lin;
  deep.kind = LearnerKind::deep;
  deep.hidden_layers = {8};
  deep.epochs = 8;

  const TLearnerModel m1 =
      fit_tlearner({train_exp}, Scope{}, "sessions", lin, SplitParams{0.8, 2});
  const TLearnerModel m2 =
      fit_tlearner({train_exp}, Scope{}, "sessions", deep, SplitParams{0.8, 2});

  const RobustnessReport r = robustness_report({&m1, &m2}, {train_exp},
                                               {eval_exp}, "sessions");
  REQUIRE(r.pairwise_rank_corr.size() == 1);
  CHECK(std::get<2>(r.pairwise_rank_corr[0]) > 0.0);
  REQUIRE(r.per_model.size() == 2);
  for (const auto& pm : r.per_model) {
    CHECK(pm.gap == doctest::Approx(pm.auuc_in - pm.auuc_out));
  }
}

TEST_CASE("robustness needs two models") {
  GeneratorConfig cfg;
  cfg.experiment_id = "x";
  cfg.n_users = 1000;
  cfg.target_relative_lift = 0.2;
  cfg.seed = 51;
  auto [e, gt] = generate_experiment(cfg);
  LearnerConfig lc;
  lc.epochs = 1;
  const TLearnerModel m =
      fit_tlearner({e}, Scope{}, "conversion", lc, SplitParams{0.8, 1});
  CHECK_THROWS_AS(robustness_report({&m}, {e}, {e}, "conversion"), ConfigError);
}

TEST_CASE("stability: identical weeks give correlation 1 and zero change") {
  auto week = scores_of({"a", "b", "c", "d"}, {0.4, 0.1, 0.3, 0.2});
  const StabilityReport r = stability_report({week, week});
  REQUIRE(r.week_over_week.size() == 1);
  CHECK(r.week_over_week[0].rank_correlation == doctest::Approx(1.0));
  CHECK(r.week_over_week[0].mean_abs_change == 0.0);
}

TEST_CASE("stability: retraining on a driftless stream stays consistent") {
  GeneratorConfig cfg;
  cfg.experiment_id = "stable";
  cfg.n_users = 20000;
  cfg.outcome = OutcomeFamily::engagement;
  cfg.metric = "sessions";
  cfg.base_rate = 2.0;
  cfg.target_relative_lift = 0.4;
  cfg.effect_form = EffectForm::linear;
  cfg.effect_heterogeneity = 1.0;
  cfg.noise_scale = 0.6;
  cfg.drift_rate = 0.0;
  cfg.seed = 61;
  const auto weeks = generate_stream(cfg, 2);

  LearnerConfig lc;
  lc.kind = LearnerKind::linear;
  lc.loss = Loss::squared_error;
  lc.epochs = 6;
  lc.learning_rate = 0.05;
  lc.seed = 3;

  std::vector<std::vector<ITEScore>> weekly;
  for (const auto& wb : weeks) {
    const TLearnerModel m = fit_tlearner({wb.experiment}, Scope{}, "sessions", lc,
                                         SplitParams{0.8, 4});
    weekly.push_back(score_batch(m, weeks[0].experiment.observations,
                                 wb.experiment.end_date));
  }
  const StabilityReport r = stability_report(weekly);
  CHECK(r.week_over_week[0].rank_correlation >= 0.95);
}

TEST_CASE("stability: cohort split reports one AUUC per cohort") {
  GeneratorConfig cfg;
  cfg.experiment_id = "cohorts";
  cfg.n_users = 8000;
  cfg.base_rate = 0.2;
  cfg.target_relative_lift = 0.3;
  cfg.effect_form = EffectForm::linear;
  cfg.seed = 71;
  auto [e, gt] = generate_experiment(cfg);
  std::vector<ITEScore> oracle;
  for (std::size_t i = 0; i < e.observations.size(); ++i) {
    oracle.push_back(ITEScore{e.observations[i].user_id, gt.ite[i],
                              ScopeLevel::general, "", e.end_date});
  }
  // cohorts by sign of the first numeric feature
  std::map<std::string, std::string> cohort_of;
  for (const auto& o : e.observations) {
    cohort_of[o.user_id] =
        std::get<double>(o.features[0]) >= 0 ? "hi" : "lo";
  }
  const StabilityReport r =
      stability_report({oracle, oracle}, &e, "conversion", &cohort_of);
  CHECK(r.cohort_auuc.size() == 2);
  for (const auto& [cohort, row] : r.cohort_auuc) {
    CHECK(row.size() == 2);
  }
  CHECK(r.cohort_spread_per_week.size() == 2);
}

TEST_CASE("stability: empty panel intersection errors") {
  auto w1 = scores_of({"a", "b"}, {0.1, 0.2});
  auto w2 = scores_of({"x", "y"}, {0.1, 0.2});
  CHECK_THROWS_WITH_AS(stability_report({w1, w2}),
                       doctest::Contains("share no users"), DataError);
}

TEST_CASE("evaluate_models enforces train/eval separation") {
  GeneratorConfig cfg;
  cfg.experiment_id = "overlap";
  cfg.n_users = 2000;
  cfg.target_relative_lift = 0.2;
  cfg.seed = 81;
  auto [e, gt] = generate_experiment(cfg);
  LearnerConfig lc;
  lc.epochs = 1;
  const TLearnerModel m =
      fit_tlearner({e}, Scope{}, "conversion", lc, SplitParams{0.8, 1});
  CHECK_THROWS_WITH_AS(evaluate_models({&m}, {e}, "conversion"),
                       doctest::Contains("training and evaluation"), DataError);
}

TEST_CASE("report CI uses the t interval") {
  const ModelEval ev = summarize_auucs("m", {0.5, 0.6, 0.55, 0.45, 0.5});
  CHECK(ev.mean_auuc == doctest::Approx(0.52));
  const double sd = std::sqrt(sample_variance({0.5, 0.6, 0.55, 0.45, 0.5}));
  CHECK(ev.ci_half_width == doctest::Approx(2.776 * sd / std::sqrt(5.0)));
}

TEST_CASE("curve CSV export shape") {
  const MicroInstance mi = random_micro(1234);
  const Experiment e = exp_from(mi.uids, mi.treated, mi.y);
  const UpliftCurve curve = uplift_curve(scores_of(mi.uids, mi.s), e, "m", 10);
  const auto p = std::filesystem::temp_directory_path() / "uplift_curve.csv";
  write_curve_csv(p, curve);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,gain,gain_normalized");
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) lines += !line.empty();
  CHECK(lines == curve.samples.size());
}
