#pragma once

#include <vector>

#include "feddag/clustering.hpp"
#include "feddag/datamodel.hpp"
#include "feddag/linalg.hpp"
#include "feddag/similarity.hpp"

namespace feddag {

/// rank[c] is -1 for absent classes, 0 for the rarest present class.
struct RarityRanks {
  std::vector<int> rank;
  int present = 0;
};

RarityRanks rarity_ranks(const LabelHistogram& h);

struct DemandSupply {
  Matrix demand;  // Z × C
  Matrix supply;  // Z × C
};

DemandSupply demand_supply(const Clustering& clustering, const std::vector<LabelHistogram>& histograms);

/// Z×Z×C mean class alignment between clusters. A client pair contributes 0
/// for a class unless both clients hold it.
AngleTensor alignment_scores(const AngleTensor& vprime, const Clustering& clustering,
                             const std::vector<LabelHistogram>& histograms);

/// Directed cluster graph. edges[p] lists the clusters whose data trains
/// cluster p's secondary encoder, best first.
struct CCGraph {
  int num_clusters = 0;
  Matrix scores;  // diagonal holds -inf
  std::vector<std::vector<int>> edges;

  /// Clusters p with `source` in edges[p], ascending.
  std::vector<int> learners_of(int source) const;
};

CCGraph build_cc_graph(const DemandSupply& ds, const AngleTensor& alignment, int k);

}  // namespace feddag
