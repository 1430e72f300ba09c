#pragma once

// Fitted feature transformations, persisted and re-applied identically at
// training and scoring time.
//
// Numerics standardize to (x - mean) / stddev with the population stddev;
// nulls fill with the fitted mean first; zero-variance features map to 0.
// Categoricals one-hot over a frequency-ranked vocabulary capped at
// max_vocab, with a dedicated out-of-vocabulary slot at the end of each
// block (nulls and unseen values land there). Output layout is
// [standardized numerics | one-hot blocks], both in schema order.
//
// Fitting is insensitive to row order: per-feature values are sorted before
// accumulation and vocabularies rank by (count desc, value asc), so refitting
// a permutation of the same rows reproduces the spec bit-for-bit, which the
// content hash certifies.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/data.hpp"

namespace uplift {

struct TransformSpec {
  struct NumericStat {
    std::string name;
    double mean = 0.0;
    double stddev = 0.0;  // population formula
    bool constant = false;
  };
  struct CategoricalVocab {
    std::string name;
    std::vector<std::string> values;  // OOV slot index == values.size()
  };

  int schema_version = 1;
  FeatureSchema schema;
  std::vector<NumericStat> numeric;          // schema order among numerics
  std::vector<CategoricalVocab> categorical;  // schema order among categoricals
  std::vector<std::string> fitted_on;        // experiment ids
  std::uint64_t fitted_rows = 0;
  std::string content_hash;

  std::size_t dimension() const {
    std::size_t d = numeric.size();
    for (const auto& v : categorical) d += v.values.size() + 1;
    return d;
  }

  json to_json(bool with_hash = true) const {
    json nums = json::array();
    for (const auto& s : numeric) {
      nums.push_back({{"name", s.name},
                      {"mean", s.mean},
                      {"stddev", s.stddev},
                      {"constant", s.constant}});
    }
    json cats = json::array();
    for (const auto& v : categorical) {
      cats.push_back({{"name", v.name}, {"values", v.values}});
    }
    json j{{"schema_version", schema_version},
           {"schema", schema.to_json()},
           {"numeric", nums},
           {"categorical", cats},
           {"fitted_on", fitted_on},
           {"fitted_rows", fitted_rows}};
    if (with_hash) j["content_hash"] = content_hash;
    return j;
  }

  static TransformSpec from_json(const json& j) {
    TransformSpec s;
    s.schema_version = j.at("schema_version").get<int>();
    s.schema = FeatureSchema::from_json(j.at("schema"));
    for (const auto& n : j.at("numeric")) {
      s.numeric.push_back(NumericStat{n.at("name").get<std::string>(),
                                      n.at("mean").get<double>(),
                                      n.at("stddev").get<double>(),
                                      n.at("constant").get<bool>()});
    }
    for (const auto& c : j.at("categorical")) {
      CategoricalVocab v;
      v.name = c.at("name").get<std::string>();
      v.values = c.at("values").get<std::vector<std::string>>();
      s.categorical.push_back(std::move(v));
    }
    s.fitted_on = j.at("fitted_on").get<std::vector<std::string>>();
    s.fitted_rows = j.at("fitted_rows").get<std::uint64_t>();
    s.content_hash = j.value("content_hash", "");
    return s;
  }

  // Hash over every statistic; any change to any field changes the hash.
  std::string compute_hash() const { return hex64(fnv1a64(to_json(false).dump())); }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write transform spec " + path.string());
    out << to_json().dump(2) << "\n";
  }

  static TransformSpec load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read transform spec " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError("transform spec " + path.string() + ": " + e.what());
    }
    TransformSpec s = from_json(j);
    const std::string expect = s.compute_hash();
    if (!s.content_hash.empty() && s.content_hash != expect) {
      throw DataError("transform spec " + path.string() +
                      " failed content-hash verification");
    }
    s.content_hash = expect;
    return s;
  }
};

template <typename ObsRange>
TransformSpec fit_transform_spec(const ObsRange& train, const FeatureSchema& schema,
                                 std::size_t max_vocab,
                                 std::vector<std::string> fitted_on = {}) {
  schema.validate();
  if (max_vocab < 1) throw ConfigError("max_vocab must be >= 1");
  std::size_t n_rows = 0;
  for (const auto& o : train) {
    (void)o;
    ++n_rows;
  }
  if (n_rows == 0) throw DataError("cannot fit a transform on empty training data");

  TransformSpec spec;
  spec.schema_version = schema.version;
  spec.schema = schema;
  spec.fitted_on = std::move(fitted_on);
  spec.fitted_rows = n_rows;

  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    const auto& field = schema.features[f];
    if (field.kind == FeatureKind::numeric) {
      std::vector<double> values;
      values.reserve(n_rows);
      for (const auto& o : train) {
        const FeatureValue& v = o.features[f];
        if (!is_null(v)) values.push_back(std::get<double>(v));
      }
      if (values.empty()) {
        throw DataError("feature '" + field.name + "' is null on every training row");
      }
      std::sort(values.begin(), values.end());  // order-insensitive accumulation
      double sum = 0.0;
      for (double v : values) sum += v;
      const double mean = sum / static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      const double stddev = std::sqrt(ss / static_cast<double>(values.size()));
      spec.numeric.push_back(
          TransformSpec::NumericStat{field.name, mean, stddev, stddev == 0.0});
    } else {
      std::map<std::string, std::uint64_t> counts;
      for (const auto& o : train) {
        const FeatureValue& v = o.features[f];
        if (!is_null(v)) ++counts[std::get<std::string>(v)];
      }
      if (counts.empty()) {
        throw DataError("feature '" + field.name + "' is null on every training row");
      }
      std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(),
                                                                counts.end());
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      TransformSpec::CategoricalVocab vocab;
      vocab.name = field.name;
      for (std::size_t k = 0; k < std::min(max_vocab, ranked.size()); ++k) {
        vocab.values.push_back(ranked[k].first);
      }
      spec.categorical.push_back(std::move(vocab));
    }
  }

  spec.content_hash = spec.compute_hash();
  return spec;
}

// Dense row-major matrix of transformed feature vectors.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data.data() + i * cols, cols);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(data.data() + i * cols, cols);
  }
};

inline void apply_transform_into(const TransformSpec& spec,
                                 const UserObservation& obs,
                                 std::span<double> out) {
  if (obs.features.size() != spec.schema.features.size()) {
    throw DataError("observation " + obs.user_id + " has " +
                    std::to_string(obs.features.size()) +
                    " features, transform spec expects " +
                    std::to_string(spec.schema.features.size()));
  }
  std::size_t num_i = 0, cat_i = 0, out_i = 0;
  const std::size_t num_total = spec.numeric.size();
  for (std::size_t f = 0; f < spec.schema.features.size(); ++f) {
    const auto& field = spec.schema.features[f];
    const FeatureValue& v = obs.features[f];
    if (field.kind == FeatureKind::numeric) {
      const auto& st = spec.numeric[num_i];
      const double raw = is_null(v) ? st.mean : std::get<double>(v);
      out[num_i] = st.constant ? 0.0 : (raw - st.mean) / st.stddev;
      ++num_i;
    } else {
      const auto& vocab = spec.categorical[cat_i];
      const std::size_t block = vocab.values.size() + 1;
      const std::size_t base = num_total + out_i;
      for (std::size_t k = 0; k < block; ++k) out[base + k] = 0.0;
      std::size_t slot = vocab.values.size();  // OOV (also nulls)
      if (!is_null(v)) {
        const std::string& s = std::get<std::string>(v);
        for (std::size_t k = 0; k < vocab.values.size(); ++k) {
          if (vocab.values[k] == s) {
            slot = k;
            break;
          }
        }
      }
      out[base + slot] = 1.0;
      out_i += block;
      ++cat_i;
    }
  }
}

inline std::vector<double> apply_transform(const TransformSpec& spec,
                                           const UserObservation& obs) {
  std::vector<double> out(spec.dimension());
  apply_transform_into(spec, obs, out);
  return out;
}

template <typename ObsRange>
FeatureMatrix transform_rows(const TransformSpec& spec, const ObsRange& rows,
                             int workers = 1) {
  FeatureMatrix m;
  m.cols = spec.dimension();
  std::vector<const UserObservation*> ptrs;
  for (const auto& o : rows) ptrs.push_back(&o);
  m.rows = ptrs.size();
  m.data.resize(m.rows * m.cols);
  parallel_for(m.rows, workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      apply_transform_into(spec, *ptrs[i], m.row(i));
    }
  });
  return m;
}

// Hard guard against serving with a mismatched schema generation.
inline void require_schema_match(const TransformSpec& spec,
                                 const FeatureSchema& schema) {
  if (spec.schema_version != schema.version) {
    throw DataError("schema version mismatch: transform spec fitted on v" +
                    std::to_string(spec.schema_version) + ", input is v" +
                    std::to_string(schema.version));
  }
  if (spec.schema.features.size() != schema.features.size()) {
    throw DataError("schema feature-count mismatch against transform spec");
  }
  for (std::size_t i = 0; i < schema.features.size(); ++i) {
    if (schema.features[i].name != spec.schema.features[i].name ||
        schema.features[i].kind != spec.schema.features[i].kind) {
      throw DataError("schema feature '" + schema.features[i].name +
                      "' does not match transform spec");
    }
  }
}

}  // namespace uplift
