#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "feddag/datamodel.hpp"

namespace feddag {

enum class Concept { kIdentity, kFlip, kRotate };

Concept concept_from_string(const std::string& s);
std::string to_string(Concept c);

/// Label remapping for a concept: rotate is (y+1) mod C, flip is (C-y) mod C.
int remap_label(int y, int num_classes, Concept shift_kind);

struct Federation {
  std::vector<ClientDataset> clients;  // training splits
  std::vector<ClientDataset> tests;    // empty, or one per client
  std::vector<int> ground_truth;       // empty, or one cluster id per client
  std::vector<Concept> concepts;       // empty, or one per client
  int num_classes = 0;

  std::size_t size() const { return clients.size(); }
  bool has_tests() const { return !tests.empty(); }
  void validate() const;
};

/// Label skew via fixed-size label sets plus Dirichlet quantity skew.
Federation partition_label_skew_quantity(const ClientDataset& src, std::size_t num_clients,
                                         double rho, double alpha_q, std::uint64_t seed);

/// Per-class Dirichlet(alpha_q) allocation over clients.
Federation partition_lda(const ClientDataset& src, std::size_t num_clients, double alpha_q,
                         std::uint64_t seed);

/// Concept shift: relabels a dataset; features untouched.
ClientDataset apply_concept_shift(const ClientDataset& d, Concept shift_kind);

/// Draws a concept per client uniformly from `pool`, applies it to the train
/// and test splits and records it as that client's ground truth.
void assign_concepts(Federation& fed, const std::vector<Concept>& pool, std::uint64_t seed);

/// Splits every client's samples into train/test by a seeded per-client draw.
Federation split_train_test(const Federation& fed, double test_fraction, std::uint64_t seed);

/// Parameters of the ground-truth clustered generator.
struct SyntheticSpec {
  int num_clusters = 4;
  int clients_per_cluster = 10;
  int num_classes = 10;
  int feature_dim = 32;
  int samples_per_client = 100;
  int test_samples_per_client = 100;
  /// Scale of the class-mean simplex; 0 collapses every class onto the origin.
  double separation = 4.0;
  double noise = 1.0;
  /// Distinct classes per cluster when `class_subsets` is empty; 0 means all.
  int classes_per_cluster = 2;
  std::vector<std::vector<int>> class_subsets;
  /// Per cluster; empty means identity everywhere.
  std::vector<Concept> concepts;
  /// Per cluster relative class frequencies over all C classes; empty means
  /// uniform over the cluster's class subset.
  std::vector<std::vector<double>> class_weights;
  /// Gaussian blobs per class; with more than one, blob centres are random
  /// directions on the sphere of radius `separation`.
  int modes_per_class = 1;
  /// Dirichlet concentration for per-client class proportions around the
  /// cluster profile; 0 keeps every client on the profile exactly.
  double within_alpha = 0.0;
  std::uint64_t seed = 0;
};

/// Class subsets used by the generator when none are given explicitly.
std::vector<std::vector<int>> default_class_subsets(int num_clusters, int num_classes,
                                                    int classes_per_cluster, std::uint64_t seed);

Federation gen_synthetic_clusters(const SyntheticSpec& spec);

/// Draws fresh samples for one client from cluster `cluster` of `spec`;
/// `stream` separates independent draws for the same client slot.
ClientDataset synthetic_client_sample(const SyntheticSpec& spec, int cluster, ClientId client_id,
                                      int num_samples, std::uint64_t stream);

/// Directory of per-client CSV files plus manifest.json. `params_json` is an
/// arbitrary JSON document recorded verbatim under "params".
void dump_federation(const Federation& fed, const std::filesystem::path& dir,
                     std::uint64_t seed, const std::string& params_json);
Federation load_federation(const std::filesystem::path& dir);

/// Largest-remainder apportionment of `total` items by `weights`.
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total);

}  // namespace feddag
