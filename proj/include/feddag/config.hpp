#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "feddag/fedtrain.hpp"
#include "feddag/partitioner.hpp"

namespace feddag {

/// Invalid or unreadable configuration; the message names the field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FederationKind { kSynthetic, kLabelSkew, kLda, kConcept, kDirectory };

/// How to obtain the federation for a run.
struct FederationSpec {
  FederationKind kind = FederationKind::kSynthetic;
  SyntheticSpec synthetic;
  // Source pool for label_skew / lda / concept: a CSV file, or Gaussian class
  // blobs when no path is given.
  std::string source_csv;
  int num_classes = 10;
  int pool_samples = 2000;
  int pool_feature_dim = 32;
  double pool_separation = 4.0;
  std::size_t num_clients = 20;
  double rho = 0.2;
  double alpha_q = 0.5;
  std::vector<Concept> concept_pool{Concept::kIdentity, Concept::kFlip};
  double test_fraction = 0.2;
  std::string directory;
};

struct RunConfig {
  FedDagConfig feddag;
  FederationSpec federation;
  std::string output_dir = "run";
};

RunConfig parse_run_config(const nlohmann::json& j);
/// Throws ConfigError naming the path when the file is missing or malformed.
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved config including defaults; parse_run_config(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& c);

Federation build_federation(const FederationSpec& spec, std::uint64_t seed);

}  // namespace feddag
