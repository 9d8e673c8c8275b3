#pragma once

#include <string>
#include <vector>

#include "feddag/linalg.hpp"

namespace feddag {

enum class Linkage { kSingle, kAverage, kComplete };

Linkage linkage_from_string(const std::string& s);
std::string to_string(Linkage l);

/// Partition of clients 0..N-1. Cluster ids are contiguous and ordered by
/// each cluster's lowest member.
struct Clustering {
  std::vector<int> assignment;
  int num_clusters = 0;
  double alpha = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double loss = 0.0;

  std::vector<std::vector<std::size_t>> members() const;
  std::vector<std::size_t> sizes() const;
  bool has_singleton() const;
};

/// Relabels an arbitrary labelling into the canonical id order.
std::vector<int> canonical_labels(const std::vector<int>& labels);

/// Agglomerative merging while the closest pair of clusters is nearer than
/// `alpha`; ties go to the pair with the lowest member ids.
Clustering hierarchical_cluster(const Matrix& a, double alpha, Linkage linkage);

struct LossParts {
  double l1 = 0.0;
  double l2 = 0.0;
  double loss = 0.0;
};

LossParts clustering_loss(const Matrix& a, const std::vector<int>& assignment, double gamma,
                          double tau, double lambda);

/// 1.0, 0.95, ..., 0.05
std::vector<double> default_alpha_grid();

struct ClusteringConfig {
  std::vector<double> alpha_grid = default_alpha_grid();
  double gamma = 0.5;
  double tau = 0.1;
  double lambda = 0.5;
  Linkage linkage = Linkage::kAverage;
  double rel_tol = 0.02;
  /// Drop candidates containing a one-client cluster when any candidate
  /// without one exists.
  bool exclude_singletons = true;
};

struct SweepResult {
  std::vector<Clustering> candidates;  // one per grid entry, losses populated
  std::size_t selected = 0;

  const Clustering& best() const { return candidates.at(selected); }
  double alpha_star() const { return best().alpha; }
};

SweepResult optimal_clustering(const Matrix& a, const ClusteringConfig& cfg);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace feddag
