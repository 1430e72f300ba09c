#pragma once

// Weekly training cadence: warm-start the prior week's arm checkpoints on the
// newly completed experiments blended with replayed history, or retrain from
// scratch on the recency window. The transform spec freezes at week 1 for a
// lineage (warm starts need stable shapes); OOV buckets absorb novel
// categorical values in later weeks.
//
// History replay is a week-tagged observation store trimmed to the retention
// window; each incremental batch draws a seeded sample sized so retained
// history makes up replay_fraction of the training rows.

#include <deque>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/data.hpp"
#include "uplift/evaluation.hpp"
#include "uplift/selection.hpp"
#include "uplift/tlearner.hpp"
#include "uplift/transform.hpp"

namespace uplift {

enum class CadenceMode { incremental, from_scratch_weekly };

inline std::string_view to_string(CadenceMode m) {
  return m == CadenceMode::incremental ? "incremental" : "from_scratch_weekly";
}

inline CadenceMode cadence_mode_from(std::string_view s) {
  if (s == "incremental") return CadenceMode::incremental;
  if (s == "from_scratch_weekly") return CadenceMode::from_scratch_weekly;
  throw ConfigError("unknown cadence mode '" + std::string(s) + "'");
}

struct TrainingCadenceConfig {
  CadenceMode mode = CadenceMode::incremental;
  int history_retention_weeks = 8;
  double replay_fraction = 0.25;  // share of each incremental batch from history
  SelectionCriteria selection;    // as_of_date overridden per week
  LearnerConfig learner;
  SplitParams split;
  Scope scope;
  std::string metric = "conversion";
  int eval_n_points = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (history_retention_weeks < 0) {
      throw ConfigError("history_retention_weeks must be >= 0");
    }
    if (!(replay_fraction >= 0.0 && replay_fraction <= 1.0)) {
      throw ConfigError("replay_fraction must lie in [0,1]");
    }
    learner.validate();
    scope.validate();
  }
};

// Retained observations, tagged by week. Single writer per lineage; readers
// may share the store concurrently between writes.
class HistoryStore {
 public:
  void add_week(int week, std::vector<UserObservation> rows) {
    weeks_.push_back({week, std::move(rows)});
  }

  void trim(int current_week, int retention_weeks) {
    while (!weeks_.empty() && weeks_.front().week <= current_week - retention_weeks) {
      weeks_.pop_front();
    }
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& w : weeks_) n += w.rows.size();
    return n;
  }

  // Seeded uniform sample without replacement across all retained rows.
  std::vector<const UserObservation*> sample(std::size_t k, std::uint64_t seed) const {
    std::vector<const UserObservation*> all;
    all.reserve(size());
    for (const auto& w : weeks_) {
      for (const auto& o : w.rows) all.push_back(&o);
    }
    if (k >= all.size()) return all;
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.uniform_index(all.size() - i);
      std::swap(all[i], all[j]);
    }
    all.resize(k);
    return all;
  }

 private:
  struct WeekRows {
    int week = 0;
    std::vector<UserObservation> rows;
  };
  std::deque<WeekRows> weeks_;
};

// ---------------------------------------------------------------------------
// Drift monitoring
// ---------------------------------------------------------------------------

struct DriftStats {
  struct FeatureDrift {
    std::string name;
    double smd = 0.0;       // standardized mean difference vs fitted stats
    double oov_rate = 0.0;  // categorical only; nulls count as OOV
    bool flagged = false;
  };
  std::vector<FeatureDrift> features;
  std::vector<std::pair<std::string, double>> outcome_means;

  json to_json() const {
    json fs = json::array();
    for (const auto& f : features) {
      fs.push_back({{"name", f.name},
                    {"smd", f.smd},
                    {"oov_rate", f.oov_rate},
                    {"flagged", f.flagged}});
    }
    json om = json::object();
    for (const auto& [k, v] : outcome_means) om[k] = v;
    return json{{"features", fs}, {"outcome_means", om}};
  }
};

template <typename ObsRange>
DriftStats drift_monitor(const TransformSpec& spec, const ObsRange& week_data,
                         double smd_threshold = 0.25) {
  std::size_t n = 0;
  for (const auto& o : week_data) {
    (void)o;
    ++n;
  }
  if (n == 0) throw DataError("drift monitor needs a non-empty week");

  DriftStats stats;
  std::size_t num_i = 0, cat_i = 0;
  for (std::size_t f = 0; f < spec.schema.features.size(); ++f) {
    const auto& field = spec.schema.features[f];
    DriftStats::FeatureDrift d;
    d.name = field.name;
    if (field.kind == FeatureKind::numeric) {
      const auto& st = spec.numeric[num_i++];
      double sum = 0.0;
      std::size_t cnt = 0;
      for (const auto& o : week_data) {
        const FeatureValue& v = o.features[f];
        if (!is_null(v)) {
          sum += std::get<double>(v);
          ++cnt;
        }
      }
      if (cnt == 0) {
        d.smd = std::numeric_limits<double>::infinity();  // fully drifted
        d.flagged = true;
      } else {
        const double week_mean = sum / static_cast<double>(cnt);
        if (st.stddev > 0.0) {
          d.smd = (week_mean - st.mean) / st.stddev;
        } else {
          d.smd = week_mean == st.mean ? 0.0
                                       : std::numeric_limits<double>::infinity();
        }
        d.flagged = std::abs(d.smd) > smd_threshold;
      }
    } else {
      const auto& vocab = spec.categorical[cat_i++];
      std::size_t oov = 0;
      for (const auto& o : week_data) {
        const FeatureValue& v = o.features[f];
        bool in_vocab = false;
        if (!is_null(v)) {
          const std::string& s = std::get<std::string>(v);
          in_vocab = std::find(vocab.values.begin(), vocab.values.end(), s) !=
                     vocab.values.end();
        }
        oov += in_vocab ? 0 : 1;
      }
      d.oov_rate = static_cast<double>(oov) / static_cast<double>(n);
      d.flagged = d.oov_rate > smd_threshold;
    }
    stats.features.push_back(std::move(d));
  }

  // outcome means for label monitoring; metric set from the first observation
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& o : week_data) {
    for (const auto& [metric, value] : o.outcomes) {
      auto& [sum, cnt] = acc[metric];
      sum += value;
      cnt += 1;
    }
  }
  for (const auto& [metric, sc] : acc) {
    stats.outcome_means.emplace_back(metric, sc.first / static_cast<double>(sc.second));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Weekly run
// ---------------------------------------------------------------------------

struct WeeklyRunRecord {
  int week = 0;
  std::string model_id;
  std::string parent_model_id;
  std::vector<std::string> selected_experiment_ids;
  double eval_auuc = std::numeric_limits<double>::quiet_NaN();
  DriftStats drift;
  bool skipped = false;  // no qualifying experiments; model carried forward

  json to_json() const {
    return json{{"week", week},
                {"model_id", model_id},
                {"parent_model_id", parent_model_id},
                {"selected_experiment_ids", selected_experiment_ids},
                {"eval_auuc", eval_auuc},
                {"drift", drift.to_json()},
                {"skipped", skipped}};
  }

  static WeeklyRunRecord from_json(const json& j) {
    WeeklyRunRecord r;
    r.week = j.at("week").get<int>();
    r.model_id = j.at("model_id").get<std::string>();
    r.parent_model_id = j.at("parent_model_id").get<std::string>();
    r.selected_experiment_ids =
        j.at("selected_experiment_ids").get<std::vector<std::string>>();
    r.eval_auuc = j.at("eval_auuc").is_null()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : j.at("eval_auuc").get<double>();
    r.skipped = j.at("skipped").get<bool>();
    return r;
  }
};

struct WeekInputs {
  int week = 1;
  Date as_of;
  // full pool of experiments completed so far (from_scratch trains on the
  // selection window over this); new_ids marks this week's arrivals
  const std::vector<Experiment>* pool = nullptr;
  std::set<std::string> new_ids;
  const Experiment* eval_exp = nullptr;  // disjoint from training
  // false when every earlier week was skipped: the lineage has not produced
  // a model yet and this week trains fresh
  bool lineage_started = true;
};

inline std::pair<std::optional<TLearnerModel>, WeeklyRunRecord> run_week(
    const TrainingCadenceConfig& cfg, const WeekInputs& in,
    const TLearnerModel* prior, HistoryStore& history) {
  cfg.validate();
  if (!in.pool) throw ConfigError("run_week needs an experiment pool");
  if (cfg.mode == CadenceMode::incremental && in.week > 1 &&
      in.lineage_started && !prior) {
    throw ConfigError("incremental week " + std::to_string(in.week) +
                      " requires the prior week's model");
  }

  SelectionCriteria criteria = cfg.selection;
  criteria.as_of_date = in.as_of;

  const bool warm = cfg.mode == CadenceMode::incremental && prior != nullptr;

  // Candidates: new arrivals only for incremental; the whole window otherwise.
  std::vector<Experiment> candidates;
  for (const auto& e : *in.pool) {
    if (!cfg.scope.matches(e)) continue;
    if (cfg.mode == CadenceMode::incremental && in.new_ids.count(e.experiment_id) == 0) {
      continue;
    }
    candidates.push_back(e);
  }
  const SelectionResult sel = select_experiments(candidates, criteria);

  WeeklyRunRecord record;
  record.week = in.week;
  record.parent_model_id = warm ? prior->content_id() : "";

  if (sel.selected.empty()) {
    record.skipped = true;
    record.model_id = prior ? prior->content_id() : "";
    if (prior) {
      const TransformSpec& spec = prior->transform;
      std::vector<const UserObservation*> week_rows;
      for (const auto& e : candidates) {
        for (const auto& o : e.observations) week_rows.push_back(&o);
      }
      if (!week_rows.empty()) {
        record.drift = drift_monitor(spec, ObsPtrRange{&week_rows});
      }
    }
    return {std::nullopt, record};
  }

  std::vector<const Experiment*> selected;
  for (std::size_t idx : sel.selected) selected.push_back(&candidates[idx]);
  for (const Experiment* e : selected) {
    record.selected_experiment_ids.push_back(e->experiment_id);
  }
  std::sort(record.selected_experiment_ids.begin(),
            record.selected_experiment_ids.end());

  std::vector<PooledRow> rows;
  for (const Experiment* e : selected) {
    for (const auto& o : e->observations) {
      rows.push_back(PooledRow{&o, &e->experiment_id});
    }
  }
  const std::size_t n_new = rows.size();

  static const std::string kHistoryTag = "history";
  std::vector<const UserObservation*> replay;
  if (warm && cfg.replay_fraction > 0.0 && history.size() > 0) {
    const std::size_t want =
        cfg.replay_fraction >= 1.0
            ? history.size()
            : static_cast<std::size_t>(
                  std::llround(cfg.replay_fraction / (1.0 - cfg.replay_fraction) *
                               static_cast<double>(n_new)));
    replay = history.sample(
        want, derive_seed(cfg.seed, "replay", static_cast<std::uint64_t>(in.week)));
    for (const auto* o : replay) rows.push_back(PooledRow{o, &kHistoryTag});
  }

  LearnerConfig learner = cfg.learner;
  learner.seed = derive_seed(cfg.seed, "week", static_cast<std::uint64_t>(in.week));

  const FeatureSchema& schema = selected.front()->schema;
  TLearnerModel model =
      fit_tlearner_rows(rows, schema, cfg.scope, cfg.metric, learner, cfg.split,
                        warm ? prior : nullptr);
  // drop the replay marker from provenance
  auto& ids = model.training_experiment_ids;
  ids.erase(std::remove(ids.begin(), ids.end(), kHistoryTag), ids.end());

  record.model_id = model.content_id();
  {
    std::vector<const UserObservation*> week_rows;
    for (const Experiment* e : selected) {
      for (const auto& o : e->observations) week_rows.push_back(&o);
    }
    record.drift = drift_monitor(model.transform, ObsPtrRange{&week_rows});
  }

  if (in.eval_exp) {
    const auto scores =
        score_batch(model, in.eval_exp->observations, in.eval_exp->end_date);
    try {
      record.eval_auuc = auuc(
          uplift_curve(scores, *in.eval_exp, cfg.metric, cfg.eval_n_points));
    } catch (const DataError&) {
      // degenerate eval week; leave NaN
    }
  }

  // History grows by this week's selected rows, then trims to retention.
  if (cfg.history_retention_weeks > 0) {
    std::vector<UserObservation> keep;
    for (const Experiment* e : selected) {
      keep.insert(keep.end(), e->observations.begin(), e->observations.end());
    }
    history.add_week(in.week, std::move(keep));
    history.trim(in.week, cfg.history_retention_weeks);
  }

  return {std::move(model), std::move(record)};
}

}  // namespace uplift
