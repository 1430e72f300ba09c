#pragma once

// Content-addressed, file-based model registry. Each entry owns a directory
// named by the model id holding the entry manifest, the transform spec and
// the two arm checkpoints; the manifest records a content hash per artifact
// and loads verify them.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/tlearner.hpp"

namespace uplift {

struct EvalSummary {
  double mean_auuc = 0.0;
  double ci_half_width = 0.0;
  int n_eval = 0;

  json to_json() const {
    return json{{"mean_auuc", mean_auuc},
                {"ci_half_width", ci_half_width},
                {"n_eval", n_eval}};
  }
  static EvalSummary from_json(const json& j) {
    return EvalSummary{j.at("mean_auuc").get<double>(),
                       j.at("ci_half_width").get<double>(),
                       j.at("n_eval").get<int>()};
  }
};

struct RegistryEntry {
  std::string model_id;
  Scope scope;
  std::string metric;
  std::string transform_hash;
  std::map<std::string, std::string> artifacts;       // name -> relative path
  std::map<std::string, std::string> artifact_hashes;  // name -> fnv hex
  std::vector<std::string> training_experiment_ids;
  std::optional<EvalSummary> eval;
  std::string created_at;  // informational; excluded from the id
  std::string parent_id;

  json to_json() const {
    json j{{"model_id", model_id},
           {"scope_level", std::string(to_string(scope.level))},
           {"scope_key", scope.key},
           {"metric", metric},
           {"transform_hash", transform_hash},
           {"artifacts", artifacts},
           {"artifact_hashes", artifact_hashes},
           {"training_experiment_ids", training_experiment_ids},
           {"created_at", created_at},
           {"parent_id", parent_id}};
    if (eval) j["eval"] = eval->to_json();
    return j;
  }

  static RegistryEntry from_json(const json& j) {
    RegistryEntry e;
    e.model_id = j.at("model_id").get<std::string>();
    e.scope.level = scope_level_from(j.at("scope_level").get<std::string>());
    e.scope.key = j.at("scope_key").get<std::string>();
    e.metric = j.at("metric").get<std::string>();
    e.transform_hash = j.at("transform_hash").get<std::string>();
    e.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    e.artifact_hashes =
        j.at("artifact_hashes").get<std::map<std::string, std::string>>();
    e.training_experiment_ids =
        j.at("training_experiment_ids").get<std::vector<std::string>>();
    if (j.contains("eval")) e.eval = EvalSummary::from_json(j.at("eval"));
    e.created_at = j.value("created_at", "");
    e.parent_id = j.value("parent_id", "");
    return e;
  }
};

class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  const std::filesystem::path& root() const { return root_; }

  // Stores the model under its content id. Re-registering the same content is
  // a no-op that returns the existing entry.
  RegistryEntry put(const TLearnerModel& model,
                    std::optional<EvalSummary> eval = std::nullopt,
                    std::string parent_id = "") {
    model.validate();
    const std::string id = model.content_id();
    const auto dir = root_ / id;
    if (std::filesystem::exists(dir / "entry.json")) {
      return read_entry(id);
    }
    std::filesystem::create_directories(dir);
    model.transform.save(dir / "transform.json");
    model.treatment_model.save(dir / "treatment.json");
    model.control_model.save(dir / "control.json");

    RegistryEntry entry;
    entry.model_id = id;
    entry.scope = model.scope;
    entry.metric = model.metric;
    entry.transform_hash = model.transform.content_hash;
    entry.artifacts = {{"transform", "transform.json"},
                       {"treatment", "treatment.json"},
                       {"control", "control.json"}};
    for (const auto& [name, rel] : entry.artifacts) {
      entry.artifact_hashes[name] = file_hash(dir / rel);
    }
    entry.training_experiment_ids = model.training_experiment_ids;
    entry.eval = std::move(eval);
    entry.created_at = now_utc();
    entry.parent_id = std::move(parent_id);

    std::ofstream out(dir / "entry.json");
    if (!out) throw DataError("cannot write registry entry " + id);
    out << entry.to_json().dump(2) << "\n";
    return entry;
  }

  RegistryEntry read_entry(const std::string& id) const {
    const auto path = root_ / id / "entry.json";
    std::ifstream in(path);
    if (!in) throw DataError("unknown model id '" + id + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError("registry entry " + id + ": " + e.what());
    }
    return RegistryEntry::from_json(j);
  }

  // Loads and hash-verifies every referenced artifact.
  TLearnerModel load_model(const std::string& id) const {
    const RegistryEntry entry = read_entry(id);
    const auto dir = root_ / id;
    for (const auto& [name, rel] : entry.artifacts) {
      const auto path = dir / rel;
      if (!std::filesystem::exists(path)) {
        throw DataError("registry entry " + id + " references missing artifact " +
                        rel);
      }
      if (file_hash(path) != entry.artifact_hashes.at(name)) {
        throw DataError("registry artifact " + rel + " of " + id +
                        " failed hash verification");
      }
    }
    TLearnerModel model;
    model.transform = TransformSpec::load(dir / entry.artifacts.at("transform"));
    model.treatment_model =
        ModelCheckpoint::load(dir / entry.artifacts.at("treatment"));
    model.control_model = ModelCheckpoint::load(dir / entry.artifacts.at("control"));
    model.scope = entry.scope;
    model.metric = entry.metric;
    model.training_experiment_ids = entry.training_experiment_ids;
    model.validate();
    if (model.content_id() != id) {
      throw DataError("registry entry " + id + " content does not match its id");
    }
    return model;
  }

  std::vector<std::string> list() const {
    std::vector<std::string> ids;
    if (!std::filesystem::exists(root_)) return ids;
    for (const auto& e : std::filesystem::directory_iterator(root_)) {
      if (e.is_directory() && std::filesystem::exists(e.path() / "entry.json")) {
        ids.push_back(e.path().filename().string());
      }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

 private:
  static std::string file_hash(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    return hex64(fnv1a64(bytes));
  }

  static std::string now_utc() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return std::string(buf);
  }

  std::filesystem::path root_;
};

}  // namespace uplift
