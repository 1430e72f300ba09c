#pragma once

// Canonical data model for A/B experiments: feature schema, per-user
// observations, deterministic file I/O and the seeded train/validation split.
//
// On-disk format: UTF-8 line-delimited JSON, one observation per line, flat
// key/value objects. Reserved keys: experiment_id, user_id, arm,
// outcome:<metric>, plus optional per-experiment metadata (end_date,
// primary_outcome, vertical, advertiser_id, ad_product) that must agree on
// every line of the same experiment. A companion schema file lists feature
// names, kinds and the schema version.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"

namespace uplift {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

enum class FeatureKind { numeric, categorical };

inline std::string_view to_string(FeatureKind k) {
  return k == FeatureKind::numeric ? "numeric" : "categorical";
}

inline FeatureKind feature_kind_from(std::string_view s) {
  if (s == "numeric") return FeatureKind::numeric;
  if (s == "categorical") return FeatureKind::categorical;
  throw DataError("unknown feature kind '" + std::string(s) + "'");
}

struct FeatureSchema {
  struct Field {
    std::string name;
    FeatureKind kind = FeatureKind::numeric;
  };

  std::vector<Field> features;
  int version = 1;

  void validate() const {
    if (features.empty()) throw DataError("schema has no features");
    std::set<std::string_view> seen;
    for (const auto& f : features) {
      if (f.name.empty()) throw DataError("schema has an unnamed feature");
      if (!seen.insert(f.name).second) {
        throw DataError("duplicate feature name '" + f.name + "'");
      }
      if (f.name.rfind("outcome:", 0) == 0 || is_reserved_key(f.name)) {
        throw DataError("feature name '" + f.name + "' collides with a reserved key");
      }
    }
  }

  int index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  static bool is_reserved_key(std::string_view k) {
    return k == "experiment_id" || k == "user_id" || k == "arm" ||
           k == "end_date" || k == "primary_outcome" || k == "vertical" ||
           k == "advertiser_id" || k == "ad_product";
  }

  json to_json() const {
    json fs = json::array();
    for (const auto& f : features) {
      fs.push_back({{"name", f.name}, {"kind", std::string(to_string(f.kind))}});
    }
    return json{{"version", version}, {"features", fs}};
  }

  static FeatureSchema from_json(const json& j) {
    FeatureSchema s;
    s.version = j.at("version").get<int>();
    for (const auto& f : j.at("features")) {
      s.features.push_back(Field{f.at("name").get<std::string>(),
                                 feature_kind_from(f.at("kind").get<std::string>())});
    }
    s.validate();
    return s;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write schema file " + path.string());
    out << to_json().dump(2) << "\n";
  }

  static FeatureSchema load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read schema file " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError("schema file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

// ---------------------------------------------------------------------------
// Observations and experiments
// ---------------------------------------------------------------------------

enum class Arm { treatment, control };

inline std::string_view to_string(Arm a) {
  return a == Arm::treatment ? "treatment" : "control";
}

// Feature value: explicit null, numeric or categorical.
using FeatureValue = std::variant<std::monostate, double, std::string>;

inline bool is_null(const FeatureValue& v) {
  return std::holds_alternative<std::monostate>(v);
}

struct UserObservation {
  std::string user_id;
  std::vector<FeatureValue> features;  // schema order
  Arm arm = Arm::control;
  std::vector<std::pair<std::string, double>> outcomes;  // sorted by name

  double outcome(std::string_view metric) const {
    for (const auto& [name, value] : outcomes) {
      if (name == metric) return value;
    }
    throw DataError("observation " + user_id + " missing outcome '" +
                    std::string(metric) + "'");
  }

  bool has_outcome(std::string_view metric) const {
    for (const auto& [name, value] : outcomes) {
      (void)value;
      if (name == metric) return true;
    }
    return false;
  }
};

// View over a vector of observation pointers that dereferences on iteration;
// lets pooled/filtered row sets feed APIs that take observation ranges.
struct ObsPtrRange {
  const std::vector<const UserObservation*>* v;
  struct It {
    const UserObservation* const* p;
    const UserObservation& operator*() const { return **p; }
    It& operator++() {
      ++p;
      return *this;
    }
    bool operator!=(const It& o) const { return p != o.p; }
  };
  It begin() const { return {v->data()}; }
  It end() const { return {v->data() + v->size()}; }
};

struct Experiment {
  std::string experiment_id;
  Date end_date;
  std::string vertical;       // empty = unset
  std::string advertiser_id;  // empty = unset
  std::string ad_product;     // empty = unset
  std::string primary_outcome;
  FeatureSchema schema;
  std::vector<UserObservation> observations;

  std::size_t arm_count(Arm a) const {
    std::size_t n = 0;
    for (const auto& o : observations) n += (o.arm == a) ? 1 : 0;
    return n;
  }

  void validate() const {
    if (experiment_id.empty()) throw DataError("experiment without id");
    if (primary_outcome.empty()) {
      throw DataError("experiment " + experiment_id + " missing primary_outcome");
    }
    if (arm_count(Arm::treatment) == 0 || arm_count(Arm::control) == 0) {
      throw DataError("experiment " + experiment_id + " is missing an arm");
    }
    for (const auto& o : observations) {
      if (!o.has_outcome(primary_outcome)) {
        throw DataError("experiment " + experiment_id + " observation " +
                        o.user_id + " missing primary outcome '" +
                        primary_outcome + "'");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

namespace detail {

inline json observation_to_json(const Experiment& exp, const UserObservation& o) {
  json j;
  j["experiment_id"] = exp.experiment_id;
  j["user_id"] = o.user_id;
  j["arm"] = std::string(to_string(o.arm));
  j["end_date"] = exp.end_date.to_string();
  j["primary_outcome"] = exp.primary_outcome;
  if (!exp.vertical.empty()) j["vertical"] = exp.vertical;
  if (!exp.advertiser_id.empty()) j["advertiser_id"] = exp.advertiser_id;
  if (!exp.ad_product.empty()) j["ad_product"] = exp.ad_product;
  for (std::size_t i = 0; i < exp.schema.features.size(); ++i) {
    const auto& name = exp.schema.features[i].name;
    const auto& v = o.features[i];
    if (is_null(v)) {
      j[name] = nullptr;
    } else if (const double* d = std::get_if<double>(&v)) {
      j[name] = *d;
    } else {
      j[name] = std::get<std::string>(v);
    }
  }
  for (const auto& [metric, value] : o.outcomes) {
    j["outcome:" + metric] = value;
  }
  return j;
}

struct PendingExperiment {
  Experiment exp;
  bool has_end_date = false;
  std::vector<std::string> metric_names;  // declared by the first observation
};

}  // namespace detail

// Canonical writer: experiments sorted by id, observations in stored order,
// keys in lexicographic order (nlohmann object ordering). load(save(x)) and
// save(load(f)) are byte-stable.
inline void save_experiments(const std::filesystem::path& path,
                             const std::vector<Experiment>& experiments) {
  std::vector<const Experiment*> order;
  order.reserve(experiments.size());
  for (const auto& e : experiments) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const Experiment* a, const Experiment* b) {
    return a->experiment_id < b->experiment_id;
  });
  std::ofstream out(path);
  if (!out) throw DataError("cannot write experiment file " + path.string());
  for (const Experiment* e : order) {
    for (const auto& o : e->observations) {
      out << detail::observation_to_json(*e, o).dump() << "\n";
    }
  }
}

// Loads experiments grouped by experiment_id, result sorted by experiment_id.
// Errors carry 1-based line numbers.
inline std::vector<Experiment> load_experiments(const std::filesystem::path& path,
                                                const FeatureSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot read experiment file " + path.string());

  std::map<std::string, detail::PendingExperiment> groups;
  std::vector<std::string> group_order;
  std::string line;
  std::size_t line_no = 0;

  auto fail = [&](const std::string& msg) -> void {
    throw DataError(path.filename().string() + " line " + std::to_string(line_no) +
                    ": " + msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (!j.is_object()) fail("record is not an object");

    UserObservation obs;
    std::string exp_id;
    std::optional<Date> end_date;
    std::string primary, vertical, advertiser, product;
    bool have_arm = false, have_user = false;
    obs.features.assign(schema.features.size(), FeatureValue{});
    std::vector<bool> feature_seen(schema.features.size(), false);

    for (const auto& [key, value] : j.items()) {
      if (key == "experiment_id") {
        exp_id = value.get<std::string>();
      } else if (key == "user_id") {
        obs.user_id = value.get<std::string>();
        have_user = true;
      } else if (key == "arm") {
        const auto s = value.get<std::string>();
        if (s == "treatment") {
          obs.arm = Arm::treatment;
        } else if (s == "control") {
          obs.arm = Arm::control;
        } else {
          fail("arm label '" + s + "' is not one of {treatment, control}");
        }
        have_arm = true;
      } else if (key == "end_date") {
        end_date = Date::parse(value.get<std::string>());
      } else if (key == "primary_outcome") {
        primary = value.get<std::string>();
      } else if (key == "vertical") {
        vertical = value.get<std::string>();
      } else if (key == "advertiser_id") {
        advertiser = value.get<std::string>();
      } else if (key == "ad_product") {
        product = value.get<std::string>();
      } else if (key.rfind("outcome:", 0) == 0) {
        if (!value.is_number()) fail("outcome '" + key + "' is not numeric");
        obs.outcomes.emplace_back(key.substr(8), value.get<double>());
      } else {
        const int idx = schema.index_of(key);
        if (idx < 0) fail("unknown key '" + key + "'");
        feature_seen[idx] = true;
        if (value.is_null()) {
          obs.features[idx] = FeatureValue{};
        } else if (schema.features[idx].kind == FeatureKind::numeric) {
          if (!value.is_number()) fail("feature '" + key + "' must be numeric");
          obs.features[idx] = value.get<double>();
        } else {
          if (!value.is_string()) fail("feature '" + key + "' must be a string");
          obs.features[idx] = value.get<std::string>();
        }
      }
    }

    if (exp_id.empty()) fail("missing experiment_id");
    if (!have_user) fail("missing user_id");
    if (!have_arm) fail("missing arm");
    for (std::size_t i = 0; i < feature_seen.size(); ++i) {
      if (!feature_seen[i]) {
        fail("feature '" + schema.features[i].name +
             "' absent; null must be explicit");
      }
    }
    std::sort(obs.outcomes.begin(), obs.outcomes.end());

    auto it = groups.find(exp_id);
    if (it == groups.end()) {
      detail::PendingExperiment p;
      p.exp.experiment_id = exp_id;
      p.exp.schema = schema;
      for (const auto& [m, v] : obs.outcomes) {
        (void)v;
        p.metric_names.push_back(m);
      }
      it = groups.emplace(exp_id, std::move(p)).first;
      group_order.push_back(exp_id);
    }
    detail::PendingExperiment& p = it->second;

    auto merge_meta = [&](std::string& slot, const std::string& v,
                          const char* what) {
      if (v.empty()) return;
      if (!slot.empty() && slot != v) {
        fail(std::string("conflicting ") + what + " within experiment " + exp_id);
      }
      slot = v;
    };
    merge_meta(p.exp.primary_outcome, primary, "primary_outcome");
    merge_meta(p.exp.vertical, vertical, "vertical");
    merge_meta(p.exp.advertiser_id, advertiser, "advertiser_id");
    merge_meta(p.exp.ad_product, product, "ad_product");
    if (end_date) {
      if (p.has_end_date && !(p.exp.end_date == *end_date)) {
        fail("conflicting end_date within experiment " + exp_id);
      }
      p.exp.end_date = *end_date;
      p.has_end_date = true;
    }

    std::vector<std::string> metrics;
    for (const auto& [m, v] : obs.outcomes) {
      (void)v;
      metrics.push_back(m);
    }
    if (metrics != p.metric_names) {
      fail("observation outcome metrics differ from experiment " + exp_id +
           "'s declared set");
    }

    p.exp.observations.push_back(std::move(obs));
  }

  std::vector<Experiment> result;
  result.reserve(groups.size());
  for (auto& [id, p] : groups) {
    if (!p.has_end_date) {
      throw DataError(path.filename().string() + ": experiment " + id +
                      " never declares end_date");
    }
    p.exp.validate();
    result.push_back(std::move(p.exp));
  }
  return result;  // std::map iteration gives stable experiment_id order
}

// ---------------------------------------------------------------------------
// Train/validation split
// ---------------------------------------------------------------------------

// Stated split rule: FNV-1a64 over "<user_id>|<seed>" mapped to [0,1) and
// compared against the train fraction. Pure in (user_id, seed), so the same
// user lands in the same partition across experiments.
inline bool split_is_train(std::string_view user_id, double fraction,
                           std::uint64_t seed) {
  std::uint64_t h = fnv1a64(user_id);
  h = fnv1a64("|", h);
  h = fnv1a64(std::to_string(seed), h);
  return unit_from_bits(mix64(h)) < fraction;
}

struct SplitDataset {
  std::vector<UserObservation> train;
  std::vector<UserObservation> validation;
  double split_fraction = 0.0;
  std::uint64_t seed = 0;
};

inline SplitDataset split_train_validation(const Experiment& exp, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0,1), got " + dtos(fraction));
  }
  SplitDataset out;
  out.split_fraction = fraction;
  out.seed = seed;
  for (const auto& o : exp.observations) {
    (split_is_train(o.user_id, fraction, seed) ? out.train : out.validation)
        .push_back(o);
  }
  return out;
}

}  // namespace uplift
