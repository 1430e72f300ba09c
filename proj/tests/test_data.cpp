#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "uplift/data.hpp"

using namespace uplift;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("uplift_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FeatureSchema test_schema() {
  FeatureSchema s;
  s.version = 1;
  s.features = {{"age", FeatureKind::numeric},
                {"sessions", FeatureKind::numeric},
                {"country", FeatureKind::categorical}};
  return s;
}

UserObservation obs(const std::string& uid, Arm arm, double age, double sessions,
                    const std::string& country, double conversion) {
  UserObservation o;
  o.user_id = uid;
  o.arm = arm;
  o.features = {age, sessions, country};
  o.outcomes = {{"conversion", conversion}};
  return o;
}

Experiment small_experiment(const std::string& id, int n_per_arm,
                            std::uint64_t seed) {
  Experiment e;
  e.experiment_id = id;
  e.end_date = Date{2025, 6, 30};
  e.primary_outcome = "conversion";
  e.schema = test_schema();
  Rng rng(seed);
  for (int i = 0; i < 2 * n_per_arm; ++i) {
    char uid[32];
    std::snprintf(uid, sizeof(uid), "%s_u%05d", id.c_str(), i);
    const Arm arm = (i % 2 == 0) ? Arm::treatment : Arm::control;
    UserObservation o = obs(uid, arm, 20 + 40 * rng.uniform(),
                            rng.uniform() * 10, rng.uniform() < 0.5 ? "US" : "FR",
                            rng.uniform() < 0.1 ? 1.0 : 0.0);
    if (rng.uniform() < 0.05) o.features[1] = FeatureValue{};  // explicit null
    e.observations.push_back(std::move(o));
  }
  return e;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("load groups experiments and counts rows") {
  const auto dir = temp_dir("load");
  std::vector<Experiment> exps{small_experiment("exp_b", 3, 1),
                               small_experiment("exp_a", 2, 2)};
  save_experiments(dir / "pool.jsonl", exps);
  const auto loaded = load_experiments(dir / "pool.jsonl", test_schema());
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].experiment_id == "exp_a");  // stable id ordering
  CHECK(loaded[1].experiment_id == "exp_b");
  CHECK(loaded[0].observations.size() == 4);
  CHECK(loaded[1].observations.size() == 6);
}

TEST_CASE("single-arm experiment rejected") {
  const auto dir = temp_dir("one_arm");
  Experiment e = small_experiment("exp_x", 2, 3);
  for (auto& o : e.observations) o.arm = Arm::treatment;
  std::ofstream out(dir / "pool.jsonl");
  for (const auto& o : e.observations) {
    out << detail::observation_to_json(e, o).dump() << "\n";
  }
  out.close();
  CHECK_THROWS_WITH_AS(load_experiments(dir / "pool.jsonl", test_schema()),
                       doctest::Contains("missing an arm"), DataError);
}

TEST_CASE("malformed line error names the line number") {
  const auto dir = temp_dir("malformed");
  Experiment e = small_experiment("exp_x", 2, 4);
  std::ofstream out(dir / "pool.jsonl");
  out << detail::observation_to_json(e, e.observations[0]).dump() << "\n";
  out << "{not json\n";
  out.close();
  CHECK_THROWS_WITH_AS(load_experiments(dir / "pool.jsonl", test_schema()),
                       doctest::Contains("line 2"), DataError);
}

TEST_CASE("bad arm label and missing outcome are schema errors") {
  const auto dir = temp_dir("badarm");
  Experiment e = small_experiment("exp_x", 2, 5);
  json j = detail::observation_to_json(e, e.observations[0]);
  {
    json bad = j;
    bad["arm"] = "exposed";
    std::ofstream out(dir / "pool.jsonl");
    out << bad.dump() << "\n";
  }
  CHECK_THROWS_WITH_AS(load_experiments(dir / "pool.jsonl", test_schema()),
                       doctest::Contains("arm label"), DataError);
  {
    json bad = detail::observation_to_json(e, e.observations[1]);
    bad.erase("outcome:conversion");
    std::ofstream out(dir / "pool.jsonl");
    out << j.dump() << "\n" << bad.dump() << "\n";
  }
  CHECK_THROWS_WITH_AS(load_experiments(dir / "pool.jsonl", test_schema()),
                       doctest::Contains("outcome metrics differ"), DataError);
}

TEST_CASE("unknown key rejected") {
  const auto dir = temp_dir("unknown");
  Experiment e = small_experiment("exp_x", 2, 6);
  json j = detail::observation_to_json(e, e.observations[0]);
  j["mystery"] = 1.0;
  std::ofstream out(dir / "pool.jsonl");
  out << j.dump() << "\n";
  out.close();
  CHECK_THROWS_WITH_AS(load_experiments(dir / "pool.jsonl", test_schema()),
                       doctest::Contains("unknown key"), DataError);
}

TEST_CASE("save/load round trip is byte identical") {
  const auto dir = temp_dir("roundtrip");
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    std::vector<Experiment> exps;
    Rng rng(seed);
    const int n_exps = 1 + static_cast<int>(rng.uniform_index(4));
    for (int i = 0; i < n_exps; ++i) {
      exps.push_back(small_experiment("exp_" + std::to_string(i),
                                      2 + static_cast<int>(rng.uniform_index(20)),
                                      seed * 100 + i));
      exps.back().vertical = (i % 2 == 0) ? "gaming" : "";
      exps.back().advertiser_id = (i % 3 == 0) ? "adv_9" : "";
    }
    save_experiments(dir / "a.jsonl", exps);
    const auto loaded = load_experiments(dir / "a.jsonl", test_schema());
    save_experiments(dir / "b.jsonl", loaded);
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  }
}

TEST_CASE("schema save/load round trip") {
  const auto dir = temp_dir("schema");
  const FeatureSchema s = test_schema();
  s.save(dir / "schema.json");
  const FeatureSchema t = FeatureSchema::load(dir / "schema.json");
  CHECK(t.version == s.version);
  REQUIRE(t.features.size() == s.features.size());
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    CHECK(t.features[i].name == s.features[i].name);
    CHECK(t.features[i].kind == s.features[i].kind);
  }
}

TEST_CASE("split sizes follow the fraction") {
  Experiment e;
  e.experiment_id = "big";
  e.end_date = Date{2025, 1, 1};
  e.primary_outcome = "conversion";
  e.schema = test_schema();
  for (int i = 0; i < 100000; ++i) {
    e.observations.push_back(obs("user_" + std::to_string(i),
                                 i % 2 ? Arm::treatment : Arm::control, 30, 1,
                                 "US", 0));
  }
  const SplitDataset s = split_train_validation(e, 0.8, 7);
  CHECK(s.train.size() + s.validation.size() == 100000);
  CHECK(s.train.size() > 80000 - 500);
  CHECK(s.train.size() < 80000 + 500);
  // both arms present in both partitions at this scale
  auto arms = [](const std::vector<UserObservation>& v, Arm a) {
    std::size_t n = 0;
    for (const auto& o : v) n += o.arm == a;
    return n;
  };
  CHECK(arms(s.train, Arm::treatment) > 0);
  CHECK(arms(s.train, Arm::control) > 0);
  CHECK(arms(s.validation, Arm::treatment) > 0);
  CHECK(arms(s.validation, Arm::control) > 0);
}

TEST_CASE("split determinism and seed sensitivity") {
  Experiment e = small_experiment("exp_s", 500, 21);
  const SplitDataset a = split_train_validation(e, 0.7, 9);
  const SplitDataset b = split_train_validation(e, 0.7, 9);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].user_id == b.train[i].user_id);
  }
  const SplitDataset c = split_train_validation(e, 0.7, 10);
  bool differs = a.train.size() != c.train.size();
  if (!differs) {
    for (std::size_t i = 0; i < a.train.size() && !differs; ++i) {
      differs = a.train[i].user_id != c.train[i].user_id;
    }
  }
  CHECK(differs);
}

TEST_CASE("no user appears in both partitions") {
  Experiment e = small_experiment("exp_leak", 400, 31);
  const SplitDataset s = split_train_validation(e, 0.5, 3);
  std::set<std::string> train_ids;
  for (const auto& o : s.train) train_ids.insert(o.user_id);
  for (const auto& o : s.validation) CHECK(train_ids.count(o.user_id) == 0);
}

TEST_CASE("degenerate fraction rejected") {
  Experiment e = small_experiment("exp_f", 2, 41);
  CHECK_THROWS_AS(split_train_validation(e, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_train_validation(e, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(split_train_validation(e, -0.2, 1), ConfigError);
}

TEST_CASE("same user same partition across experiments") {
  Experiment e1 = small_experiment("exp_1", 50, 51);
  Experiment e2 = e1;
  e2.experiment_id = "exp_2";
  for (const auto& o : e1.observations) {
    CHECK(split_is_train(o.user_id, 0.6, 4) == split_is_train(o.user_id, 0.6, 4));
  }
  const SplitDataset s1 = split_train_validation(e1, 0.6, 4);
  const SplitDataset s2 = split_train_validation(e2, 0.6, 4);
  std::set<std::string> t1;
  for (const auto& o : s1.train) t1.insert(o.user_id);
  for (const auto& o : s2.train) CHECK(t1.count(o.user_id) == 1);
}
