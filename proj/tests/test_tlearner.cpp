#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "uplift/simgen.hpp"
#include "uplift/tlearner.hpp"

using namespace uplift;

namespace {

std::vector<Experiment> scoped_pool() {
  std::vector<Experiment> pool;
  for (int i = 0; i < 5; ++i) {
    GeneratorConfig cfg;
    cfg.experiment_id = "exp_" + std::to_string(i);
    cfg.n_users = 800;
    cfg.base_rate = 0.2;
    cfg.target_relative_lift = 0.2;
    cfg.effect_form = EffectForm::linear;
    cfg.seed = 100 + i;
    cfg.effect_seed = 777;
    cfg.vertical = (i < 2) ? "gaming" : "retail";
    pool.push_back(generate_experiment(cfg).first);
  }
  return pool;
}

LearnerConfig quick_linear() {
  LearnerConfig cfg;
  cfg.kind = LearnerKind::linear;
  cfg.loss = Loss::log_loss;
  cfg.epochs = 2;
  cfg.learning_rate = 0.2;
  cfg.seed = 9;
  return cfg;
}

// Hand-built linear T-learner over a 3-feature numeric schema.
TLearnerModel hand_model(const std::vector<double>& wt, double bt,
                         const std::vector<double>& wc, double bc) {
  FeatureSchema schema;
  schema.version = 1;
  schema.features = {{"f0", FeatureKind::numeric},
                     {"f1", FeatureKind::numeric},
                     {"f2", FeatureKind::numeric}};
  TransformSpec spec;
  spec.schema_version = 1;
  spec.schema = schema;
  // identity standardization: mean 0, stddev 1
  for (const auto& f : schema.features) {
    spec.numeric.push_back({f.name, 0.0, 1.0, false});
  }
  spec.fitted_rows = 1;
  spec.content_hash = spec.compute_hash();

  LearnerConfig cfg;
  cfg.kind = LearnerKind::linear;
  cfg.loss = Loss::squared_error;

  TLearnerModel m;
  m.transform = spec;
  m.scope = Scope{};
  m.metric = "m";
  m.treatment_model.config = cfg;
  m.treatment_model.input_dim = 3;
  m.treatment_model.params.head_w = wt;
  m.treatment_model.params.head_b = bt;
  m.treatment_model.transform_hash = spec.content_hash;
  m.treatment_model.finalize_id();
  m.control_model.config = cfg;
  m.control_model.input_dim = 3;
  m.control_model.params.head_w = wc;
  m.control_model.params.head_b = bc;
  m.control_model.transform_hash = spec.content_hash;
  m.control_model.finalize_id();
  return m;
}

UserObservation numeric_obs(const std::string& uid, double a, double b, double c) {
  UserObservation o;
  o.user_id = uid;
  o.arm = Arm::control;
  o.features = {a, b, c};
  o.outcomes = {{"m", 0.0}};
  return o;
}

}  // namespace

TEST_CASE("general scope pools every experiment, vertical scope filters") {
  const auto pool = scoped_pool();
  const SplitParams split{0.8, 3};

  const TLearnerModel general =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), split);
  CHECK(general.training_experiment_ids.size() == 5);

  const TLearnerModel gaming = fit_tlearner(
      pool, Scope{ScopeLevel::vertical, "gaming"}, "conversion", quick_linear(), split);
  CHECK(gaming.training_experiment_ids ==
        std::vector<std::string>{"exp_0", "exp_1"});
}

TEST_CASE("scope that matches nothing errors") {
  const auto pool = scoped_pool();
  CHECK_THROWS_WITH_AS(
      fit_tlearner(pool, Scope{ScopeLevel::vertical, "aviation"}, "conversion",
                   quick_linear(), SplitParams{0.8, 3}),
      doctest::Contains("matches no selected experiment"), DataError);
}

TEST_CASE("scope key validation") {
  CHECK_THROWS_AS((Scope{ScopeLevel::vertical, ""}).validate(), ConfigError);
  CHECK_THROWS_AS((Scope{ScopeLevel::general, "oops"}).validate(), ConfigError);
  (Scope{ScopeLevel::advertiser, "adv_1"}).validate();
}

TEST_CASE("scope nesting: advertiser set within vertical set within general") {
  auto pool = scoped_pool();
  pool[0].advertiser_id = "adv_1";  // gaming vertical
  pool[1].advertiser_id = "adv_2";
  const SplitParams split{0.8, 3};
  const auto cfg = quick_linear();

  const auto general = fit_tlearner(pool, Scope{}, "conversion", cfg, split);
  const auto vertical = fit_tlearner(pool, Scope{ScopeLevel::vertical, "gaming"},
                                     "conversion", cfg, split);
  const auto advertiser = fit_tlearner(
      pool, Scope{ScopeLevel::advertiser, "adv_1"}, "conversion", cfg, split);

  auto subset = [](const std::vector<std::string>& a,
                   const std::vector<std::string>& b) {
    for (const auto& x : a) {
      if (std::find(b.begin(), b.end(), x) == b.end()) return false;
    }
    return true;
  };
  CHECK(subset(advertiser.training_experiment_ids, vertical.training_experiment_ids));
  CHECK(subset(vertical.training_experiment_ids, general.training_experiment_ids));
}

TEST_CASE("constant treatment effect is recovered within 3 SE") {
  GeneratorConfig cfg;
  cfg.experiment_id = "const_fx";
  cfg.n_users = 60000;
  cfg.base_rate = 0.2;
  cfg.target_relative_lift = 0.15;
  cfg.effect_form = EffectForm::constant;
  cfg.seed = 123;
  auto [exp, gt] = generate_experiment(cfg);

  LearnerConfig lc = quick_linear();
  lc.epochs = 40;
  lc.learning_rate = 0.3;
  const TLearnerModel m =
      fit_tlearner({exp}, Scope{}, "conversion", lc, SplitParams{0.8, 5});

  double mean_pred = 0.0;
  for (const auto& o : exp.observations) mean_pred += predict_ite(m, o);
  mean_pred /= static_cast<double>(exp.observations.size());

  // two-proportion SE on the experiment scale
  std::vector<double> yt, yc;
  for (const auto& o : exp.observations) {
    (o.arm == Arm::treatment ? yt : yc).push_back(o.outcome("conversion"));
  }
  const double pbar = (mean_of(yt) * yt.size() + mean_of(yc) * yc.size()) /
                      static_cast<double>(yt.size() + yc.size());
  const double se =
      std::sqrt(pbar * (1 - pbar) * (1.0 / yt.size() + 1.0 / yc.size()));
  const double true_effect = gt.mean_ite();
  CHECK(std::abs(mean_pred - true_effect) < 3.0 * se);
}

TEST_CASE("identical arm checkpoints give zero ITE for every user") {
  const TLearnerModel m = hand_model({0.5, -0.2, 1.0}, 0.3, {0.5, -0.2, 1.0}, 0.3);
  for (int i = 0; i < 10; ++i) {
    const auto o = numeric_obs("u" + std::to_string(i), i * 0.1, -i * 0.2, i);
    CHECK(predict_ite(m, o) == 0.0);
  }
}

TEST_CASE("hand-built linear arms match hand arithmetic") {
  const TLearnerModel m = hand_model({0.5, -1.0, 2.0}, 0.25, {0.1, 0.1, 0.1}, 0.0);
  const auto o = numeric_obs("u0", 1.0, 2.0, -0.5);
  // treatment: 0.5 - 2.0 - 1.0 + 0.25 = -2.25 ; control: 0.1 + 0.2 - 0.05 = 0.25
  CHECK(predict_ite(m, o) == doctest::Approx(-2.5).epsilon(1e-15));
}

TEST_CASE("arm symmetry: swapping checkpoints negates every ITE") {
  const auto pool = scoped_pool();
  TLearnerModel m =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), SplitParams{0.8, 3});
  TLearnerModel swapped = m;
  std::swap(swapped.treatment_model, swapped.control_model);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& o = pool[0].observations[i];
    CHECK(predict_ite(swapped, o) == doctest::Approx(-predict_ite(m, o)).epsilon(1e-12));
  }
}

TEST_CASE("both arms consume bit-identical feature vectors") {
  const auto pool = scoped_pool();
  const TLearnerModel m =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), SplitParams{0.8, 3});
  CHECK(m.treatment_model.transform_hash == m.control_model.transform_hash);
  CHECK(m.treatment_model.transform_hash == m.transform.content_hash);
  CHECK(m.treatment_model.input_dim == m.control_model.input_dim);
}

TEST_CASE("batch scoring preserves order and is worker-invariant") {
  const auto pool = scoped_pool();
  const TLearnerModel m =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), SplitParams{0.8, 3});
  const auto& obs = pool[2].observations;
  const auto one = score_batch(m, obs, Date{2025, 7, 1}, 1);
  const auto four = score_batch(m, obs, Date{2025, 7, 1}, 4);
  REQUIRE(one.size() == obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    CHECK(one[i].user_id == obs[i].user_id);
    CHECK(one[i].ite == four[i].ite);
    CHECK(one[i].scope_level == ScopeLevel::general);
  }
}

TEST_CASE("log_loss arms bound ITE inside (-1, 1)") {
  const auto pool = scoped_pool();
  const TLearnerModel m =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), SplitParams{0.8, 3});
  for (const auto& o : pool[0].observations) {
    const double ite = predict_ite(m, o);
    CHECK(ite > -1.0);
    CHECK(ite < 1.0);
  }
}

TEST_CASE("sensitivity is the negated ITE") {
  const TLearnerModel m = hand_model({0.0, 0.0, 0.0}, -0.3, {0.0, 0.0, 0.0}, 0.0);
  const auto o = numeric_obs("u0", 1, 1, 1);
  CHECK(predict_ite(m, o) == doctest::Approx(-0.3));
  CHECK(score_sensitivity(m, o) == doctest::Approx(0.3));
  const TLearnerModel zero = hand_model({0, 0, 0}, 0, {0, 0, 0}, 0);
  CHECK(score_sensitivity(zero, o) == 0.0);
}

TEST_CASE("sensitivity recovers a harmed subgroup from ads-holdout data") {
  GeneratorConfig cfg;
  cfg.experiment_id = "holdout";
  cfg.n_users = 40000;
  cfg.outcome = OutcomeFamily::engagement;
  cfg.metric = "sessions";
  cfg.base_rate = 3.0;
  cfg.target_relative_lift = -0.15;  // exposure reduces engagement on average
  cfg.effect_form = EffectForm::linear;
  cfg.effect_heterogeneity = 1.0;
  cfg.noise_scale = 0.8;
  cfg.seed = 321;
  auto [exp, gt] = generate_experiment(cfg);

  LearnerConfig lc;
  lc.kind = LearnerKind::linear;
  lc.loss = Loss::squared_error;
  lc.epochs = 6;
  lc.learning_rate = 0.1;
  lc.seed = 4;
  const TLearnerModel m =
      fit_tlearner({exp}, Scope{}, "sessions", lc, SplitParams{0.8, 5});

  // subgroup = users in the most-harmed true-ITE quartile
  std::vector<double> sorted_ite = gt.ite;
  std::sort(sorted_ite.begin(), sorted_ite.end());
  const double q25 = sorted_ite[sorted_ite.size() / 4];
  double mean_sens = 0.0, mean_true = 0.0;
  std::size_t n = 0;
  std::vector<double> ys;
  for (std::size_t i = 0; i < exp.observations.size(); ++i) {
    if (gt.ite[i] <= q25) {
      mean_sens += score_sensitivity(m, exp.observations[i]);
      mean_true += gt.ite[i];
      ys.push_back(exp.observations[i].outcome("sessions"));
      ++n;
    }
  }
  mean_sens /= n;
  mean_true /= n;
  const double se = std::sqrt(sample_variance(ys) / ys.size()) * 2.0;
  CHECK(mean_sens > 0.0);  // harmed group reads as positive sensitivity
  CHECK(std::abs(mean_sens - (-mean_true)) < 3.0 * se);
}

TEST_CASE("warm-started fit reuses the frozen transform spec") {
  const auto pool = scoped_pool();
  const SplitParams split{0.8, 3};
  const TLearnerModel parent =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), split);
  const TLearnerModel child = fit_tlearner(pool, Scope{}, "conversion",
                                           quick_linear(), split, &parent);
  CHECK(child.transform.content_hash == parent.transform.content_hash);
  CHECK(child.treatment_model.lineage == parent.treatment_model.checkpoint_id);
  CHECK(child.control_model.lineage == parent.control_model.checkpoint_id);
}

TEST_CASE("missing metric errors") {
  const auto pool = scoped_pool();
  CHECK_THROWS_WITH_AS(fit_tlearner(pool, Scope{}, "revenue", quick_linear(),
                                    SplitParams{0.8, 3}),
                       doctest::Contains("revenue"), DataError);
}

TEST_CASE("content id changes when inputs change") {
  const auto pool = scoped_pool();
  const SplitParams split{0.8, 3};
  const TLearnerModel a =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), split);
  const TLearnerModel b =
      fit_tlearner(pool, Scope{}, "conversion", quick_linear(), split);
  CHECK(a.content_id() == b.content_id());
  LearnerConfig other = quick_linear();
  other.seed = 10;
  const TLearnerModel c = fit_tlearner(pool, Scope{}, "conversion", other, split);
  CHECK(c.content_id() != a.content_id());
}
