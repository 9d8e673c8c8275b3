#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "feddag/config.hpp"
#include "feddag/io.hpp"

using namespace feddag;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("feddag_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(const nlohmann::json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("resolved config round-trips") {
  const auto j = nlohmann::json::parse(R"({"seed": 3, "train": {"rounds": 7, "lambda_div": 0.2},
    "clustering": {"linkage": "complete"}, "similarity": {"mode": "gradient"}})");
  const auto c = parse_run_config(j);
  CHECK(c.feddag.seed == 3);
  CHECK(c.feddag.train.rounds == 7);
  REQUIRE(c.feddag.train.lambda_div.has_value());
  const auto full = to_json(c);
  CHECK(to_json(parse_run_config(full)) == full);
}

TEST_CASE("config errors name the field") {
  CHECK(error_of({{"train", {{"rounds", "ten"}}}}).find("train.rounds") != std::string::npos);
  CHECK(error_of({{"train", {{"roundz", 3}}}}).find("train.roundz") != std::string::npos);
  CHECK(error_of({{"clustering", {{"linkage", "ward"}}}}).find("clustering.linkage") != std::string::npos);
  CHECK_FALSE(error_of({{"train", {{"sample_rate", 0.0}}}}).empty());
  CHECK_FALSE(error_of({{"arch", {{"input_dim", 5}}}}).empty());
  CHECK_THROWS_AS(load_run_config("/nonexistent/feddag.json"), ConfigError);
}

TEST_CASE("matrix csv round trip and malformed input") {
  const auto dir = scratch("csv");
  Matrix m(2, 3);
  m(0, 0) = 1.5;
  m(1, 2) = -0.25;
  write_matrix_csv(dir / "m.csv", m);
  const auto back = read_matrix_csv(dir / "m.csv");
  CHECK(back.rows() == 2);
  CHECK(back.cols() == 3);
  CHECK(back(0, 0) == 1.5);
  CHECK(back(1, 2) == -0.25);

  std::ofstream(dir / "empty.csv").close();
  CHECK_THROWS(read_matrix_csv(dir / "empty.csv"));
  std::ofstream(dir / "ragged.csv") << "1,2\n3\n";
  CHECK_THROWS(read_matrix_csv(dir / "ragged.csv"));
  std::ofstream(dir / "text.csv") << "1,x\n";
  CHECK_THROWS(read_matrix_csv(dir / "text.csv"));
  CHECK_THROWS(read_matrix_csv(dir / "missing.csv"));
}

TEST_CASE("synthetic federation built from config matches the arch") {
  const auto c = parse_run_config(nlohmann::json::parse(
      R"({"federation": {"kind": "synthetic", "num_clusters": 2, "clients_per_cluster": 3}})"));
  const auto fed = build_federation(c.federation, c.feddag.seed);
  CHECK(fed.size() == 6);
  CHECK(fed.clients[0].feature_dim() == c.feddag.arch.input_dim);
  CHECK(fed.num_classes == static_cast<int>(c.feddag.arch.num_classes));
}

TEST_CASE("pooled partitions build from config") {
  for (const char* kind : {"label_skew", "lda", "concept"}) {
    nlohmann::json j;
    j["federation"] = {{"kind", kind}, {"num_clients", 8}, {"pool_samples", 400}};
    const auto c = parse_run_config(j);
    const auto fed = build_federation(c.federation, 4);
    CHECK(fed.size() == 8);
    CHECK(fed.has_tests());
    std::size_t total = 0;
    for (std::size_t i = 0; i < fed.size(); ++i) total += fed.clients[i].size() + fed.tests[i].size();
    CHECK(total == 400);
  }
}
