#pragma once

// Two-model (T-learner) HTE estimator. Pools observations across the selected
// experiments for a scope, fits one shared transform on the pooled training
// partition, trains one outcome model per arm, and scores users with the
// arm-model difference:
//     ite(x) = predict(treatment_model, t(x)) - predict(control_model, t(x)).
//
// Warm-started fits reuse the parent's transform spec unchanged: a lineage
// freezes its input space so arm checkpoints stay shape-compatible week over
// week.
//
// User sensitivity (ads-holdout experiments, engagement metrics) is the
// negated ITE: positive sensitivity means the ad product reduces engagement.

#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "uplift/common.hpp"
#include "uplift/data.hpp"
#include "uplift/learners.hpp"
#include "uplift/transform.hpp"

namespace uplift {

enum class ScopeLevel { general, vertical, advertiser, ad_product };

inline std::string_view to_string(ScopeLevel l) {
  switch (l) {
    case ScopeLevel::general: return "general";
    case ScopeLevel::vertical: return "vertical";
    case ScopeLevel::advertiser: return "advertiser";
    default: return "ad_product";
  }
}

inline ScopeLevel scope_level_from(std::string_view s) {
  if (s == "general") return ScopeLevel::general;
  if (s == "vertical") return ScopeLevel::vertical;
  if (s == "advertiser") return ScopeLevel::advertiser;
  if (s == "ad_product") return ScopeLevel::ad_product;
  throw ConfigError("unknown scope level '" + std::string(s) + "'");
}

struct Scope {
  ScopeLevel level = ScopeLevel::general;
  std::string key;  // vertical name / advertiser id / ad product

  void validate() const {
    if (level == ScopeLevel::general && !key.empty()) {
      throw ConfigError("general scope takes no key");
    }
    if (level != ScopeLevel::general && key.empty()) {
      throw ConfigError(std::string(to_string(level)) + " scope requires a key");
    }
  }

  bool matches(const Experiment& exp) const {
    switch (level) {
      case ScopeLevel::general: return true;
      case ScopeLevel::vertical: return exp.vertical == key;
      case ScopeLevel::advertiser: return exp.advertiser_id == key;
      default: return exp.ad_product == key;
    }
  }

  std::string to_string_full() const {
    return std::string(to_string(level)) + (key.empty() ? "" : ":" + key);
  }
};

struct SplitParams {
  double fraction = 0.8;
  std::uint64_t seed = 0;
};

struct TLearnerModel {
  ModelCheckpoint treatment_model;
  ModelCheckpoint control_model;
  TransformSpec transform;
  Scope scope;
  std::string metric;
  std::vector<std::string> training_experiment_ids;

  void validate() const {
    if (treatment_model.transform_hash != control_model.transform_hash ||
        treatment_model.transform_hash != transform.content_hash) {
      throw DataError("arm checkpoints reference different transform specs");
    }
    if (treatment_model.input_dim != control_model.input_dim) {
      throw DataError("arm checkpoints disagree on input dimension");
    }
    if (treatment_model.config.loss != control_model.config.loss) {
      throw DataError("arm checkpoints disagree on loss family");
    }
  }

  // Content-addressed id over everything that defines the model's behavior
  // and provenance (checkpoints embed their lineage).
  std::string content_id() const {
    std::string s = scope.to_string_full();
    s += "|" + metric;
    s += "|" + transform.content_hash;
    s += "|" + treatment_model.checkpoint_id;
    s += "|" + control_model.checkpoint_id;
    for (const auto& id : training_experiment_ids) s += "|" + id;
    return hex64(fnv1a64(s));
  }
};

struct ITEScore {
  std::string user_id;
  double ite = 0.0;
  ScopeLevel scope_level = ScopeLevel::general;
  std::string scope_key;
  Date score_date;
};

// Pooled observation row: pointer into the owning experiment plus its id.
struct PooledRow {
  const UserObservation* obs = nullptr;
  const std::string* experiment_id = nullptr;
};

// Core fit over already-pooled rows; fit_tlearner and the incremental
// controller both funnel through here.
inline TLearnerModel fit_tlearner_rows(const std::vector<PooledRow>& rows,
                                       const FeatureSchema& schema,
                                       const Scope& scope,
                                       const std::string& metric,
                                       const LearnerConfig& cfg,
                                       const SplitParams& split,
                                       const TLearnerModel* warm = nullptr,
                                       std::size_t max_vocab = 64) {
  if (rows.empty()) throw DataError("no training rows after pooling");

  std::vector<const UserObservation*> train_rows, val_rows;
  for (const auto& r : rows) {
    (split_is_train(r.obs->user_id, split.fraction, split.seed) ? train_rows
                                                                : val_rows)
        .push_back(r.obs);
  }
  if (train_rows.empty()) throw DataError("training partition is empty");

  std::vector<std::string> exp_ids;
  for (const auto& r : rows) {
    if (exp_ids.empty() || exp_ids.back() != *r.experiment_id) {
      if (std::find(exp_ids.begin(), exp_ids.end(), *r.experiment_id) ==
          exp_ids.end()) {
        exp_ids.push_back(*r.experiment_id);
      }
    }
  }
  std::sort(exp_ids.begin(), exp_ids.end());

  // Shared transform: frozen parent spec on the warm path, fresh fit otherwise.
  TransformSpec spec;
  if (warm) {
    require_schema_match(warm->transform, schema);
    spec = warm->transform;
  } else {
    spec = fit_transform_spec(ObsPtrRange{&train_rows}, schema, max_vocab, exp_ids);
  }

  auto arm_data = [&](const std::vector<const UserObservation*>& part, Arm arm) {
    std::vector<const UserObservation*> sel;
    for (const auto* o : part) {
      if (o->arm == arm) sel.push_back(o);
    }
    FeatureMatrix x;
    x.cols = spec.dimension();
    x.rows = sel.size();
    x.data.resize(x.rows * x.cols);
    std::vector<double> y(sel.size());
    for (std::size_t i = 0; i < sel.size(); ++i) {
      apply_transform_into(spec, *sel[i], x.row(i));
      y[i] = sel[i]->outcome(metric);
    }
    return std::pair{std::move(x), std::move(y)};
  };

  auto [xt, yt] = arm_data(train_rows, Arm::treatment);
  auto [xc, yc] = arm_data(train_rows, Arm::control);
  if (xt.rows == 0 || xc.rows == 0) {
    throw DataError("an arm is empty after pooling for scope " +
                    scope.to_string_full());
  }
  auto [xt_val, yt_val] = arm_data(val_rows, Arm::treatment);
  auto [xc_val, yc_val] = arm_data(val_rows, Arm::control);

  // The two arm trainings are independent; run them on separate threads.
  LearnerConfig cfg_t = cfg;
  cfg_t.seed = derive_seed(cfg.seed, "treatment_arm");
  LearnerConfig cfg_c = cfg;
  cfg_c.seed = derive_seed(cfg.seed, "control_arm");

  TrainOptions opt_t, opt_c;
  opt_t.transform_hash = spec.content_hash;
  opt_c.transform_hash = spec.content_hash;
  if (warm) {
    opt_t.init = &warm->treatment_model;
    opt_c.init = &warm->control_model;
    // warm start keeps the parent's optimizer seed derivation; nothing else
  }
  opt_t.x_val = &xt_val;
  opt_t.y_val = &yt_val;
  opt_c.x_val = &xc_val;
  opt_c.y_val = &yc_val;

  TLearnerModel model;
  std::exception_ptr err_t, err_c;
  std::thread worker([&] {
    try {
      model.treatment_model = train(cfg_t, xt, yt, opt_t);
    } catch (...) {
      err_t = std::current_exception();
    }
  });
  try {
    model.control_model = train(cfg_c, xc, yc, opt_c);
  } catch (...) {
    err_c = std::current_exception();
  }
  worker.join();
  if (err_t) std::rethrow_exception(err_t);
  if (err_c) std::rethrow_exception(err_c);

  model.transform = std::move(spec);
  model.scope = scope;
  model.metric = metric;
  model.training_experiment_ids = std::move(exp_ids);
  model.validate();
  return model;
}

inline TLearnerModel fit_tlearner(const std::vector<Experiment>& selected,
                                  const Scope& scope, const std::string& metric,
                                  const LearnerConfig& cfg, const SplitParams& split,
                                  const TLearnerModel* warm = nullptr,
                                  std::size_t max_vocab = 64) {
  scope.validate();
  std::vector<const Experiment*> in_scope;
  for (const auto& e : selected) {
    if (scope.matches(e)) in_scope.push_back(&e);
  }
  if (in_scope.empty()) {
    throw DataError("scope " + scope.to_string_full() +
                    " matches no selected experiment");
  }
  for (const Experiment* e : in_scope) {
    for (const auto& o : e->observations) {
      if (!o.has_outcome(metric)) {
        throw DataError("experiment " + e->experiment_id + " observation " +
                        o.user_id + " lacks metric '" + metric + "'");
      }
    }
  }
  const FeatureSchema& schema = in_scope.front()->schema;
  std::vector<PooledRow> rows;
  for (const Experiment* e : in_scope) {
    for (const auto& o : e->observations) {
      rows.push_back(PooledRow{&o, &e->experiment_id});
    }
  }
  return fit_tlearner_rows(rows, schema, scope, metric, cfg, split, warm, max_vocab);
}

// Reusable two-arm scorer for batch work.
class TLearnerScorer {
 public:
  explicit TLearnerScorer(const TLearnerModel& m)
      : model_(&m), t_(m.treatment_model), c_(m.control_model) {}

  double ite(const UserObservation& obs) const {
    buf_.resize(model_->transform.dimension());
    apply_transform_into(model_->transform, obs, buf_);
    return t_(buf_) - c_(buf_);
  }

 private:
  const TLearnerModel* model_;
  Scorer t_, c_;
  mutable std::vector<double> buf_;
};

inline double predict_ite(const TLearnerModel& m, const UserObservation& obs) {
  return TLearnerScorer(m).ite(obs);
}

// Order-preserving batch scoring; deterministic for any worker count.
inline std::vector<ITEScore> score_batch(const TLearnerModel& m,
                                         const std::vector<UserObservation>& obs,
                                         Date score_date, int workers = 1) {
  std::vector<ITEScore> out(obs.size());
  parallel_for(obs.size(), workers, [&](std::size_t lo, std::size_t hi) {
    TLearnerScorer scorer(m);
    for (std::size_t i = lo; i < hi; ++i) {
      out[i] = ITEScore{obs[i].user_id, scorer.ite(obs[i]), m.scope.level,
                        m.scope.key, score_date};
    }
  });
  return out;
}

// Sensitivity convention: positive = harmful (the ad product reduces the
// engagement metric).
inline double score_sensitivity(const TLearnerModel& m, const UserObservation& obs) {
  return -predict_ite(m, obs);
}

}  // namespace uplift
