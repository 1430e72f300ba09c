#pragma once

// End-to-end orchestration behind the CLI: declarative run configuration,
// experiment-pool layout on disk, and the simulate / select / train /
// evaluate / score / run-cadence commands over a content-addressed registry.
//
// Pool layout (written by cmd_simulate, read by everything else):
//   <pool>/schema.json            feature schema
//   <pool>/manifest.json          experiment index: id, file, truth, role, week
//   <pool>/<id>.jsonl             one experiment per file
//   <pool>/<id>.truth.csv         ground-truth sidecar (never read by training)
//   <pool>/week_NN/...            weekly batches when simulating a stream
//
// All randomness flows from the run seed through named derivations, so any
// command repeated with the same config and inputs reproduces its outputs
// byte for byte (registry created_at timestamps aside, which stay out of the
// content ids).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/data.hpp"
#include "uplift/evaluation.hpp"
#include "uplift/incremental.hpp"
#include "uplift/registry.hpp"
#include "uplift/selection.hpp"
#include "uplift/simgen.hpp"
#include "uplift/tlearner.hpp"

namespace uplift {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T config_get(const json& j, const std::string& field, const std::string& ctx) {
  if (!j.contains(field)) {
    throw ConfigError("config field '" + ctx + field + "' is missing");
  }
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + ctx + field + "' has the wrong type");
  }
}

template <typename T>
T config_get_or(const json& j, const std::string& field, const std::string& ctx,
                T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + ctx + field + "' has the wrong type");
  }
}

}  // namespace detail

struct SimulateEntry {
  std::string id_prefix;
  int count = 1;
  std::string role = "train";  // train | eval
  bool share_effect = false;
  json generator;  // generator-config fields, merged per replica
};

struct RunConfig {
  std::uint64_t seed = 1;
  fs::path out = "runs/out";
  fs::path pool;      // experiment pool directory
  fs::path registry;  // model registry directory
  std::string metric = "conversion";
  std::optional<Date> score_date;

  std::vector<SimulateEntry> simulate;
  int simulate_weeks = 0;

  SelectionCriteria selection;
  // optional named criteria grid; cmd_train fans out over these (Table-1-style
  // comparison in one run)
  std::vector<std::pair<std::string, SelectionCriteria>> selection_variants;
  LearnerConfig learner;
  std::vector<Scope> scopes{Scope{}};
  SplitParams split{0.8, 7};

  int eval_n_points = 100;
  int eval_experiment_count = 5;
  int random_baseline_reps = 50;
  std::uint64_t eval_seed = 99;

  TrainingCadenceConfig cadence;
  int cadence_weeks = 0;

  int workers = 1;

  static RunConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  static RunConfig from_json(const json& j) {
    using detail::config_get;
    using detail::config_get_or;
    RunConfig c;
    c.seed = config_get_or<std::uint64_t>(j, "seed", "", 1);
    c.out = config_get_or<std::string>(j, "out", "", "runs/out");
    c.pool = config_get_or<std::string>(j, "pool", "",
                                        (c.out / "pool").string());
    c.registry = config_get_or<std::string>(j, "registry", "",
                                            (c.out / "registry").string());
    c.metric = config_get_or<std::string>(j, "metric", "", "conversion");
    if (j.contains("score_date")) {
      c.score_date = Date::parse(config_get<std::string>(j, "score_date", ""));
    }

    if (j.contains("simulate")) {
      const json& s = j.at("simulate");
      c.simulate_weeks = config_get_or<int>(s, "weeks", "simulate.", 0);
      for (const auto& e : s.at("experiments")) {
        SimulateEntry entry;
        entry.id_prefix = config_get<std::string>(e, "id_prefix", "simulate.experiments.");
        entry.count = config_get_or<int>(e, "count", "simulate.experiments.", 1);
        entry.role = config_get_or<std::string>(e, "role", "simulate.experiments.", "train");
        entry.share_effect =
            config_get_or<bool>(e, "share_effect", "simulate.experiments.", false);
        if (entry.count < 1) {
          throw ConfigError("config field 'simulate.experiments.count' must be >= 1");
        }
        if (entry.role != "train" && entry.role != "eval") {
          throw ConfigError("config field 'simulate.experiments.role' must be train or eval");
        }
        entry.generator = e;
        c.simulate.push_back(std::move(entry));
      }
    }

    auto parse_criteria = [](const json& s, const std::string& ctx,
                             const SelectionCriteria& base) {
      SelectionCriteria out = base;
      out.max_recency_days = config_get_or<int>(s, "max_recency_days", ctx, base.max_recency_days);
      out.min_control_size = config_get_or<std::int64_t>(s, "min_control_size", ctx,
                                                         base.min_control_size);
      out.min_lift_multiples =
          config_get_or<double>(s, "min_lift_multiples", ctx, base.min_lift_multiples);
      if (s.contains("as_of_date")) {
        out.as_of_date = Date::parse(config_get<std::string>(s, "as_of_date", ctx));
      }
      return out;
    };
    if (j.contains("selection")) {
      c.selection = parse_criteria(j.at("selection"), "selection.", SelectionCriteria{});
    }
    if (j.contains("selection_variants")) {
      for (const auto& v : j.at("selection_variants")) {
        const std::string name =
            config_get<std::string>(v, "name", "selection_variants.");
        c.selection_variants.emplace_back(
            name, parse_criteria(v, "selection_variants.", c.selection));
      }
      if (c.selection_variants.empty()) {
        throw ConfigError("config field 'selection_variants' is empty");
      }
    }

    if (j.contains("learner")) {
      try {
        c.learner = LearnerConfig::from_json(j.at("learner"));
      } catch (const ConfigError&) {
        throw;
      } catch (const json::exception& e) {
        throw ConfigError(std::string("config field 'learner': ") + e.what());
      }
    }

    if (j.contains("scopes")) {
      c.scopes.clear();
      for (const auto& s : j.at("scopes")) {
        Scope scope;
        scope.level = scope_level_from(
            detail::config_get<std::string>(s, "level", "scopes."));
        scope.key = config_get_or<std::string>(s, "key", "scopes.", "");
        scope.validate();
        c.scopes.push_back(std::move(scope));
      }
      if (c.scopes.empty()) throw ConfigError("config field 'scopes' is empty");
    }

    if (j.contains("split")) {
      const json& s = j.at("split");
      c.split.fraction = config_get_or<double>(s, "fraction", "split.", 0.8);
      c.split.seed = config_get_or<std::uint64_t>(s, "seed", "split.", 7);
      if (!(c.split.fraction > 0.0 && c.split.fraction < 1.0)) {
        throw ConfigError("config field 'split.fraction' must lie in (0,1)");
      }
    }

    if (j.contains("evaluation")) {
      const json& s = j.at("evaluation");
      c.eval_n_points = config_get_or<int>(s, "n_points", "evaluation.", 100);
      c.eval_experiment_count =
          config_get_or<int>(s, "eval_experiment_count", "evaluation.", 5);
      c.random_baseline_reps =
          config_get_or<int>(s, "random_baseline_reps", "evaluation.", 50);
      c.eval_seed = config_get_or<std::uint64_t>(s, "seed", "evaluation.", 99);
      if (c.eval_n_points < 1) {
        throw ConfigError("config field 'evaluation.n_points' must be >= 1");
      }
    }

    if (j.contains("cadence")) {
      const json& s = j.at("cadence");
      c.cadence.mode = cadence_mode_from(
          config_get_or<std::string>(s, "mode", "cadence.", "incremental"));
      c.cadence.history_retention_weeks =
          config_get_or<int>(s, "history_retention_weeks", "cadence.", 8);
      c.cadence.replay_fraction =
          config_get_or<double>(s, "replay_fraction", "cadence.", 0.25);
      c.cadence_weeks = config_get_or<int>(s, "weeks", "cadence.", 0);
    }

    c.workers = config_get_or<int>(j, "workers", "", 1);
    if (c.workers < 1) throw ConfigError("config field 'workers' must be >= 1");

    // cadence shares the core knobs
    c.cadence.selection = c.selection;
    c.cadence.learner = c.learner;
    c.cadence.split = c.split;
    c.cadence.metric = c.metric;
    c.cadence.eval_n_points = c.eval_n_points;
    c.cadence.seed = c.seed;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Pool manifest
// ---------------------------------------------------------------------------

struct PoolManifest {
  struct Entry {
    std::string id;
    std::string file;
    std::string truth;
    std::string role;  // train | eval
    int week = 0;      // 0 = not part of a weekly stream
  };
  std::vector<Entry> experiments;
  int weeks = 0;

  json to_json() const {
    json exps = json::array();
    for (const auto& e : experiments) {
      exps.push_back({{"id", e.id},
                      {"file", e.file},
                      {"truth", e.truth},
                      {"role", e.role},
                      {"week", e.week}});
    }
    return json{{"schema", "schema.json"}, {"weeks", weeks}, {"experiments", exps}};
  }

  static PoolManifest from_json(const json& j) {
    PoolManifest m;
    m.weeks = j.value("weeks", 0);
    for (const auto& e : j.at("experiments")) {
      m.experiments.push_back(Entry{e.at("id").get<std::string>(),
                                    e.at("file").get<std::string>(),
                                    e.at("truth").get<std::string>(),
                                    e.at("role").get<std::string>(),
                                    e.value("week", 0)});
    }
    return m;
  }

  static PoolManifest load(const fs::path& pool_dir) {
    std::ifstream in(pool_dir / "manifest.json");
    if (!in) {
      throw DataError("pool " + pool_dir.string() + " has no manifest.json");
    }
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError("pool manifest: " + std::string(e.what()));
    }
    return from_json(j);
  }
};

struct LoadedPool {
  FeatureSchema schema;
  PoolManifest manifest;
  std::vector<Experiment> experiments;  // manifest order

  const Experiment& by_id(const std::string& id) const {
    for (const auto& e : experiments) {
      if (e.experiment_id == id) return e;
    }
    throw DataError("pool has no experiment '" + id + "'");
  }
};

inline LoadedPool load_pool(const fs::path& pool_dir) {
  LoadedPool pool;
  pool.schema = FeatureSchema::load(pool_dir / "schema.json");
  pool.manifest = PoolManifest::load(pool_dir);
  for (const auto& entry : pool.manifest.experiments) {
    auto exps = load_experiments(pool_dir / entry.file, pool.schema);
    for (auto& e : exps) pool.experiments.push_back(std::move(e));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// cmd_simulate
// ---------------------------------------------------------------------------

namespace detail {

inline GeneratorConfig generator_from_json(const json& g, const RunConfig& run,
                                           const std::string& id, bool share_effect) {
  GeneratorConfig cfg;
  cfg.experiment_id = id;
  cfg.n_users = config_get_or<int>(g, "n_users", "simulate.", 1000);
  cfg.n_numeric = config_get_or<int>(g, "n_numeric", "simulate.", 5);
  cfg.n_categorical = config_get_or<int>(g, "n_categorical", "simulate.", 2);
  cfg.cat_vocab = config_get_or<int>(g, "cat_vocab", "simulate.", 8);
  cfg.treatment_share = config_get_or<double>(g, "treatment_share", "simulate.", 0.5);
  cfg.base_rate = config_get_or<double>(g, "base_rate", "simulate.", 0.05);
  cfg.target_relative_lift =
      config_get_or<double>(g, "target_relative_lift", "simulate.", 0.0);
  cfg.effect_form = effect_form_from(
      config_get_or<std::string>(g, "effect_form", "simulate.", "constant"));
  cfg.effect_heterogeneity =
      config_get_or<double>(g, "effect_heterogeneity", "simulate.", 1.0);
  cfg.base_heterogeneity =
      config_get_or<double>(g, "base_heterogeneity", "simulate.", 0.5);
  cfg.noise_scale = config_get_or<double>(g, "noise_scale", "simulate.", 0.0);
  cfg.drift_rate = config_get_or<double>(g, "drift_rate", "simulate.", 0.0);
  if (g.contains("end_date")) {
    cfg.end_date = Date::parse(config_get<std::string>(g, "end_date", "simulate."));
  }
  cfg.outcome = outcome_family_from(
      config_get_or<std::string>(g, "outcome", "simulate.", "conversion"));
  cfg.metric = config_get_or<std::string>(g, "metric", "simulate.", run.metric);
  cfg.vertical = config_get_or<std::string>(g, "vertical", "simulate.", "");
  cfg.advertiser_id = config_get_or<std::string>(g, "advertiser_id", "simulate.", "");
  cfg.ad_product = config_get_or<std::string>(g, "ad_product", "simulate.", "");
  cfg.user_prefix = config_get_or<std::string>(g, "user_prefix", "simulate.", id + "_u");
  cfg.seed = derive_seed(run.seed, "sim", fnv1a64(id));
  cfg.effect_seed = share_effect ? derive_seed(run.seed, "shared_effect") : 0;
  cfg.validate();
  return cfg;
}

}  // namespace detail

// Generates the configured pool; returns the number of experiment files.
inline int cmd_simulate(const RunConfig& run, std::ostream& log = std::cout) {
  if (run.simulate.empty()) {
    throw ConfigError("config field 'simulate.experiments' is missing");
  }
  fs::create_directories(run.pool);

  PoolManifest manifest;
  manifest.weeks = run.simulate_weeks;
  std::optional<FeatureSchema> schema;

  for (const auto& entry : run.simulate) {
    for (int r = 0; r < entry.count; ++r) {
      char idbuf[160];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%03d", entry.id_prefix.c_str(), r);
      const std::string id(idbuf);
      const GeneratorConfig cfg =
          detail::generator_from_json(entry.generator, run, id, entry.share_effect);
      if (!schema) {
        schema = cfg.schema();
        schema->save(run.pool / "schema.json");
      } else if (schema->features.size() != cfg.schema().features.size()) {
        throw ConfigError("simulate entries disagree on the feature schema");
      }

      if (run.simulate_weeks <= 0) {
        auto [exp, gt] = generate_experiment(cfg);
        save_experiments(run.pool / (id + ".jsonl"), {exp});
        save_ground_truth(run.pool / (id + ".truth.csv"), gt);
        manifest.experiments.push_back(
            PoolManifest::Entry{exp.experiment_id, id + ".jsonl",
                                id + ".truth.csv", entry.role, 0});
      } else {
        for (const auto& wb : generate_stream(cfg, run.simulate_weeks)) {
          char wdir[16];
          std::snprintf(wdir, sizeof(wdir), "week_%02d", wb.week);
          fs::create_directories(run.pool / wdir);
          const std::string base =
              std::string(wdir) + "/" + wb.experiment.experiment_id;
          save_experiments(run.pool / (base + ".jsonl"), {wb.experiment});
          save_ground_truth(run.pool / (base + ".truth.csv"), wb.ground_truth);
          manifest.experiments.push_back(
              PoolManifest::Entry{wb.experiment.experiment_id, base + ".jsonl",
                                  base + ".truth.csv", entry.role, wb.week});
        }
      }
    }
  }

  std::ofstream out(run.pool / "manifest.json");
  if (!out) throw DataError("cannot write pool manifest");
  out << manifest.to_json().dump(2) << "\n";
  log << "simulated " << manifest.experiments.size() << " experiment file(s) under "
      << run.pool.string() << "\n";
  return static_cast<int>(manifest.experiments.size());
}

// ---------------------------------------------------------------------------
// cmd_select
// ---------------------------------------------------------------------------

inline SelectionResult cmd_select(const RunConfig& run,
                                  std::ostream& log = std::cout) {
  const LoadedPool pool = load_pool(run.pool);
  std::vector<Experiment> candidates;
  for (std::size_t i = 0; i < pool.experiments.size(); ++i) {
    if (pool.manifest.experiments[i].role == "train") {
      candidates.push_back(pool.experiments[i]);
    }
  }
  const SelectionResult result = select_experiments(candidates, run.selection);
  fs::create_directories(run.out);
  write_audit_csv(run.out / "selection_audit.csv", result.audits);
  log << "selected " << result.selected.size() << " of " << candidates.size()
      << " experiments; audit at " << (run.out / "selection_audit.csv").string()
      << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// cmd_train
// ---------------------------------------------------------------------------

namespace detail {

// Evaluation experiments: manifest eval roles when present, otherwise a
// seeded draw from the pool.
inline std::pair<std::vector<Experiment>, std::vector<Experiment>>
split_train_eval(const LoadedPool& pool, const RunConfig& run) {
  std::vector<Experiment> train, eval;
  bool has_eval_role = false;
  for (const auto& e : pool.manifest.experiments) {
    has_eval_role = has_eval_role || e.role == "eval";
  }
  if (has_eval_role) {
    for (std::size_t i = 0; i < pool.experiments.size(); ++i) {
      (pool.manifest.experiments[i].role == "eval" ? eval : train)
          .push_back(pool.experiments[i]);
    }
  } else {
    std::vector<std::size_t> idx(pool.experiments.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(run.eval_seed, "eval_split"));
    seeded_shuffle(idx, rng);
    const std::size_t n_eval =
        std::min<std::size_t>(run.eval_experiment_count, idx.size() / 2);
    std::set<std::size_t> eval_idx(idx.begin(), idx.begin() + n_eval);
    for (std::size_t i = 0; i < pool.experiments.size(); ++i) {
      (eval_idx.count(i) ? eval : train).push_back(pool.experiments[i]);
    }
  }
  return {std::move(train), std::move(eval)};
}

inline std::string scope_file_tag(const Scope& s) {
  std::string tag(to_string(s.level));
  if (!s.key.empty()) tag += "_" + s.key;
  return tag;
}

}  // namespace detail

inline std::vector<RegistryEntry> cmd_train(const RunConfig& run,
                                            std::ostream& log = std::cout) {
  const LoadedPool pool = load_pool(run.pool);
  auto [train_candidates, eval_exps] = detail::split_train_eval(pool, run);
  if (train_candidates.empty()) throw DataError("pool has no training experiments");

  ModelRegistry registry(run.registry);
  fs::create_directories(run.out / "train");

  // single-criteria runs and criteria grids share one path
  std::vector<std::pair<std::string, SelectionCriteria>> variants =
      run.selection_variants;
  if (variants.empty()) variants.emplace_back("", run.selection);

  std::vector<RegistryEntry> entries;
  for (const auto& [variant_name, criteria] : variants) {
    const std::string variant_tag =
        variant_name.empty() ? std::string() : variant_name + "_";
    for (const Scope& scope : run.scopes) {
      std::vector<Experiment> scoped;
      for (const auto& e : train_candidates) {
        if (scope.matches(e)) scoped.push_back(e);
      }
      const SelectionResult sel = select_experiments(scoped, criteria);
      const fs::path audit_path =
          run.out / "train" /
          ("audit_" + variant_tag + detail::scope_file_tag(scope) + ".csv");
      write_audit_csv(audit_path, sel.audits);
      if (sel.selected.empty()) {
        std::ostringstream audit_text;
        for (const auto& a : sel.audits) {
          audit_text << "  " << a.experiment_id << ": " << a.reason << "\n";
        }
        log << "selection excluded every experiment for scope "
            << scope.to_string_full() << ":\n"
            << audit_text.str();
        throw DataError("selection left no experiments for scope " +
                        scope.to_string_full());
      }
      std::vector<Experiment> selected;
      for (std::size_t idx : sel.selected) selected.push_back(scoped[idx]);

      LearnerConfig learner = run.learner;
      learner.seed = derive_seed(run.seed, "train/" + scope.to_string_full());
      const TLearnerModel model =
          fit_tlearner(selected, scope, run.metric, learner, run.split);

      EvalOptions opts;
      opts.n_points = run.eval_n_points;
      opts.workers = run.workers;
      std::optional<EvalSummary> summary;
      if (!eval_exps.empty()) {
        const EvalReport report =
            evaluate_models({&model}, eval_exps, run.metric, opts);
        summary = EvalSummary{report.models[0].mean_auuc,
                              report.models[0].ci_half_width,
                              static_cast<int>(eval_exps.size())};
      }
      const RegistryEntry entry = registry.put(model, summary);
      log << "registered " << entry.model_id;
      if (!variant_name.empty()) log << " variant=" << variant_name;
      log << " scope=" << scope.to_string_full()
          << " experiments=" << model.training_experiment_ids.size();
      if (summary) {
        log << " eval_auuc=" << summary->mean_auuc << " +/- "
            << summary->ci_half_width;
      }
      log << "\n";
      entries.push_back(entry);
    }
  }
  return entries;
}

// ---------------------------------------------------------------------------
// cmd_evaluate
// ---------------------------------------------------------------------------

inline EvalReport cmd_evaluate(const RunConfig& run,
                               const std::vector<std::string>& model_ids,
                               std::ostream& log = std::cout) {
  if (model_ids.empty()) throw ConfigError("no model ids given");
  ModelRegistry registry(run.registry);
  std::vector<TLearnerModel> models;
  for (const auto& id : model_ids) models.push_back(registry.load_model(id));

  const LoadedPool pool = load_pool(run.pool);
  auto [train_exps, eval_exps] = detail::split_train_eval(pool, run);
  if (eval_exps.empty()) throw DataError("pool has no evaluation experiments");

  EvalOptions opts;
  opts.n_points = run.eval_n_points;
  opts.workers = run.workers;
  std::vector<const TLearnerModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  EvalReport report = evaluate_models(ptrs, eval_exps, run.metric, opts);

  double baseline = 0.0;
  for (const auto& e : eval_exps) {
    baseline += random_baseline_auuc(e, run.metric, run.eval_n_points,
                                     run.random_baseline_reps,
                                     derive_seed(run.eval_seed, e.experiment_id));
  }
  report.random_baseline_auuc = baseline / static_cast<double>(eval_exps.size());

  fs::create_directories(run.out / "evaluate" / "curves");
  {
    std::ofstream csv(run.out / "evaluate" / "report.csv");
    csv << "model_id,n_eval,mean_auuc,ci_95_half_width\n";
    for (const auto& m : report.models) {
      csv << m.model_id << "," << m.per_experiment_auuc.size() << ","
          << dtos(m.mean_auuc) << "," << dtos(m.ci_half_width) << "\n";
    }
    csv << "random_baseline," << eval_exps.size() << ","
        << dtos(report.random_baseline_auuc) << ",\n";
  }
  {
    std::ofstream txt(run.out / "evaluate" / "report.txt");
    txt << "Model                | # eval | AUUC\n";
    txt << "---------------------+--------+----------------\n";
    char line[160];
    for (const auto& m : report.models) {
      std::snprintf(line, sizeof(line), "%-20s | %6zu | %.2f +/- %.2f\n",
                    m.model_id.c_str(), m.per_experiment_auuc.size(),
                    m.mean_auuc, m.ci_half_width);
      txt << line;
    }
    std::snprintf(line, sizeof(line), "%-20s | %6zu | %.2f\n", "random",
                  eval_exps.size(), report.random_baseline_auuc);
    txt << line;
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (const auto& e : eval_exps) {
      const auto scores =
          score_batch(models[m], e.observations, e.end_date, run.workers);
      const UpliftCurve curve =
          uplift_curve(scores, e, run.metric, run.eval_n_points);
      write_curve_csv(run.out / "evaluate" / "curves" /
                          (model_ids[m] + "_" + e.experiment_id + ".csv"),
                      curve);
    }
  }
  log << "evaluated " << models.size() << " model(s) on " << eval_exps.size()
      << " experiment(s); reports under " << (run.out / "evaluate").string() << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// cmd_score
// ---------------------------------------------------------------------------

namespace detail {

inline UserObservation parse_scoring_line(const json& j, const FeatureSchema& schema,
                                          std::size_t line_no) {
  UserObservation obs;
  obs.features.assign(schema.features.size(), FeatureValue{});
  std::vector<bool> seen(schema.features.size(), false);
  for (const auto& [key, value] : j.items()) {
    if (key == "user_id") {
      obs.user_id = value.get<std::string>();
      continue;
    }
    if (key == "arm" || key == "experiment_id" || key == "end_date" ||
        key == "primary_outcome" || key == "vertical" || key == "advertiser_id" ||
        key == "ad_product" || key.rfind("outcome:", 0) == 0) {
      continue;  // ignored at scoring time
    }
    const int idx = schema.index_of(key);
    if (idx < 0) {
      throw DataError("line " + std::to_string(line_no) + ": unknown key '" +
                      key + "'");
    }
    seen[idx] = true;
    if (value.is_null()) {
      obs.features[idx] = FeatureValue{};
    } else if (schema.features[idx].kind == FeatureKind::numeric) {
      obs.features[idx] = value.get<double>();
    } else {
      obs.features[idx] = value.get<std::string>();
    }
  }
  if (obs.user_id.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": missing user_id");
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw DataError("line " + std::to_string(line_no) + ": feature '" +
                      schema.features[i].name + "' absent");
    }
  }
  return obs;
}

}  // namespace detail

// Streams observations through the model; order-preserving, constant memory.
inline std::size_t cmd_score(const RunConfig& run, const std::string& model_id,
                             const fs::path& input, const fs::path& output,
                             bool sensitivity = false,
                             std::ostream& log = std::cout) {
  ModelRegistry registry(run.registry);
  const TLearnerModel model = registry.load_model(model_id);

  // fail fast on schema drift before any output: a sibling schema.json
  // describes the scoring input when present
  const fs::path sibling = input.parent_path() / "schema.json";
  if (fs::exists(sibling)) {
    require_schema_match(model.transform, FeatureSchema::load(sibling));
  }

  std::ifstream in(input);
  if (!in) throw DataError("cannot read scoring input " + input.string());
  std::ofstream out(output);
  if (!out) throw DataError("cannot write score file " + output.string());

  const Date score_date =
      run.score_date ? *run.score_date : run.selection.as_of_date;
  out << "user_id,ite," << (sensitivity ? "sensitivity," : "")
      << "scope_level,scope_key,model_id,score_date\n";

  const std::size_t chunk_size = 8192;
  std::vector<std::string> lines;
  std::vector<std::string> rendered;
  std::string line;
  std::size_t line_no = 0, total = 0;

  auto flush = [&]() {
    rendered.assign(lines.size(), {});
    const std::size_t base_line = line_no - lines.size();
    parallel_for(lines.size(), run.workers, [&](std::size_t lo, std::size_t hi) {
      TLearnerScorer scorer(model);
      for (std::size_t i = lo; i < hi; ++i) {
        json j;
        try {
          j = json::parse(lines[i]);
        } catch (const json::exception& e) {
          throw DataError("line " + std::to_string(base_line + i + 1) + ": " +
                          e.what());
        }
        const UserObservation obs =
            detail::parse_scoring_line(j, model.transform.schema, base_line + i + 1);
        const double ite = scorer.ite(obs);
        std::string row = obs.user_id + "," + dtos(ite) + ",";
        if (sensitivity) row += dtos(-ite) + ",";
        row += std::string(to_string(model.scope.level)) + "," + model.scope.key +
               "," + model_id + "," + score_date.to_string() + "\n";
        rendered[i] = std::move(row);
      }
    });
    for (const auto& r : rendered) out << r;
    total += lines.size();
    lines.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    lines.push_back(line);
    if (lines.size() >= chunk_size) flush();
  }
  flush();
  log << "scored " << total << " user(s) with " << model_id << " into "
      << output.string() << "\n";
  return total;
}

// ---------------------------------------------------------------------------
// cmd_run_cadence
// ---------------------------------------------------------------------------

struct CadenceResult {
  // mode -> per-week records
  std::map<std::string, std::vector<WeeklyRunRecord>> ledgers;
};

namespace detail {

inline std::vector<WeeklyRunRecord> read_ledger(const fs::path& path) {
  std::vector<WeeklyRunRecord> records;
  std::ifstream in(path);
  if (!in) return records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(WeeklyRunRecord::from_json(json::parse(line)));
  }
  return records;
}

}  // namespace detail

// Runs both cadence modes over the pool's weekly stream and writes the
// week-over-week comparison. Resumes from existing ledgers without
// retraining completed weeks.
inline CadenceResult cmd_run_cadence(const RunConfig& run, int weeks_override = 0,
                                     std::ostream& log = std::cout) {
  const LoadedPool pool = load_pool(run.pool);
  const int weeks = weeks_override > 0
                        ? weeks_override
                        : (run.cadence_weeks > 0 ? run.cadence_weeks
                                                 : pool.manifest.weeks);
  if (weeks < 1) throw ConfigError("run-cadence needs a weekly pool (weeks >= 1)");
  if (pool.manifest.weeks < weeks) {
    throw DataError("pool holds " + std::to_string(pool.manifest.weeks) +
                    " week(s), " + std::to_string(weeks) + " requested");
  }

  ModelRegistry registry(run.registry);
  fs::create_directories(run.out / "cadence");
  CadenceResult result;

  for (const CadenceMode mode :
       {CadenceMode::incremental, CadenceMode::from_scratch_weekly}) {
    TrainingCadenceConfig cfg = run.cadence;
    cfg.mode = mode;
    cfg.validate();
    const std::string mode_name(to_string(mode));
    const fs::path ledger_path = run.out / "cadence" / (mode_name + ".ledger.jsonl");

    std::vector<WeeklyRunRecord> done = detail::read_ledger(ledger_path);
    std::optional<TLearnerModel> current;
    HistoryStore history;
    std::vector<Experiment> window;

    // Reconstruct state for completed weeks so a resumed run continues the
    // exact same trajectory.
    auto week_experiments = [&](int week) {
      std::vector<const Experiment*> out_exps;
      for (std::size_t i = 0; i < pool.experiments.size(); ++i) {
        const auto& me = pool.manifest.experiments[i];
        if (me.week == week && me.role == "train") {
          out_exps.push_back(&pool.experiments[i]);
        }
      }
      return out_exps;
    };
    auto week_eval = [&](int week) -> const Experiment* {
      for (std::size_t i = 0; i < pool.experiments.size(); ++i) {
        const auto& me = pool.manifest.experiments[i];
        if (me.week == week && me.role == "eval") return &pool.experiments[i];
      }
      return nullptr;
    };

    for (std::size_t w = 0; w < done.size() && static_cast<int>(w) < weeks; ++w) {
      const WeeklyRunRecord& rec = done[w];
      for (const Experiment* e : week_experiments(rec.week)) window.push_back(*e);
      if (!rec.skipped) {
        current = registry.load_model(rec.model_id);
        if (cfg.history_retention_weeks > 0) {
          std::vector<UserObservation> keep;
          for (const auto& id : rec.selected_experiment_ids) {
            const Experiment& e = pool.by_id(id);
            keep.insert(keep.end(), e.observations.begin(), e.observations.end());
          }
          history.add_week(rec.week, std::move(keep));
          history.trim(rec.week, cfg.history_retention_weeks);
        }
      }
    }

    std::ofstream ledger(ledger_path, std::ios::app);
    for (int week = static_cast<int>(done.size()) + 1; week <= weeks; ++week) {
      const auto exps = week_experiments(week);
      for (const Experiment* e : exps) window.push_back(*e);
      // selection is relative to the week being processed
      Date as_of{1970, 1, 1};
      for (const auto& e : window) {
        if (as_of < e.end_date) as_of = e.end_date;
      }
      if (window.empty()) as_of = run.selection.as_of_date;

      WeekInputs in;
      in.week = week;
      in.as_of = as_of;
      in.pool = &window;
      in.lineage_started = current.has_value();
      for (const Experiment* e : exps) in.new_ids.insert(e->experiment_id);
      in.eval_exp = week_eval(week);

      auto [model, record] = run_week(cfg, in, current ? &*current : nullptr, history);
      if (model) {
        registry.put(*model,
                     std::isnan(record.eval_auuc)
                         ? std::nullopt
                         : std::optional<EvalSummary>(
                               EvalSummary{record.eval_auuc, 0.0, 1}),
                     record.parent_model_id);
        current = std::move(model);
      }
      ledger << record.to_json().dump() << "\n";
      ledger.flush();
      done.push_back(std::move(record));
      log << mode_name << " week " << week << ": "
          << (done.back().skipped ? "skipped"
                                  : "auuc=" + dtos(done.back().eval_auuc))
          << "\n";
    }
    done.resize(std::min<std::size_t>(done.size(), weeks));
    result.ledgers[mode_name] = std::move(done);
  }

  // comparison table plus a readable summary
  {
    const auto& inc = result.ledgers.at("incremental");
    const auto& scr = result.ledgers.at("from_scratch_weekly");
    std::ofstream csv(run.out / "cadence" / "week_over_week.csv");
    csv << "week,auuc_incremental,auuc_from_scratch\n";
    for (int w = 0; w < weeks; ++w) {
      csv << (w + 1) << ","
          << (w < static_cast<int>(inc.size()) ? dtos(inc[w].eval_auuc) : "") << ","
          << (w < static_cast<int>(scr.size()) ? dtos(scr[w].eval_auuc) : "")
          << "\n";
    }
    std::ofstream txt(run.out / "cadence" / "summary.txt");
    txt << "Week | incremental | from-scratch\n";
    txt << "-----+-------------+-------------\n";
    char line[96];
    int inc_better = 0, compared = 0;
    for (int w = 0; w < weeks; ++w) {
      const double a = w < static_cast<int>(inc.size())
                           ? inc[w].eval_auuc
                           : std::numeric_limits<double>::quiet_NaN();
      const double b = w < static_cast<int>(scr.size())
                           ? scr[w].eval_auuc
                           : std::numeric_limits<double>::quiet_NaN();
      std::snprintf(line, sizeof(line), "%4d | %11.3f | %12.3f\n", w + 1, a, b);
      txt << line;
      if (!std::isnan(a) && !std::isnan(b)) {
        ++compared;
        inc_better += a >= b;
      }
    }
    txt << "incremental >= from-scratch in " << inc_better << " of " << compared
        << " week(s)\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// CLI dispatch (used by tools/uplift_cli.cpp and the pipeline tests)
// ---------------------------------------------------------------------------

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
};

inline RunConfig load_run_config(const std::string& config_path,
                                 const CliOverrides& ov) {
  RunConfig run = RunConfig::load(config_path);
  if (ov.seed) run.seed = *ov.seed;
  if (ov.out) {
    run.out = *ov.out;
    // pool/registry default under out unless the config pinned them
  }
  if (ov.workers) run.workers = *ov.workers;
  run.cadence.seed = run.seed;
  return run;
}

}  // namespace uplift
