#include "feddag/ccgraph.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace feddag {

RarityRanks rarity_ranks(const LabelHistogram& h) {
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < h.counts.size(); ++c)
    if (h.counts[c] > 0) present.push_back(c);
  if (present.empty()) throw std::invalid_argument("histogram has no present class");
  std::stable_sort(present.begin(), present.end(),
                   [&](std::size_t a, std::size_t b) { return h.counts[a] < h.counts[b]; });
  RarityRanks r;
  r.rank.assign(h.counts.size(), -1);
  r.present = static_cast<int>(present.size());
  for (std::size_t k = 0; k < present.size(); ++k) r.rank[present[k]] = static_cast<int>(k);
  return r;
}

DemandSupply demand_supply(const Clustering& clustering, const std::vector<LabelHistogram>& histograms) {
  if (histograms.size() != clustering.assignment.size())
    throw std::invalid_argument("one histogram per client is required");
  if (histograms.empty()) throw std::invalid_argument("no clients");
  const std::size_t Z = static_cast<std::size_t>(clustering.num_clusters);
  const std::size_t C = histograms.front().counts.size();
  DemandSupply ds{Matrix(Z, C), Matrix(Z, C)};
  const auto sizes = clustering.sizes();
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    const auto z = static_cast<std::size_t>(clustering.assignment[i]);
    const auto r = rarity_ranks(histograms[i]);
    for (std::size_t c = 0; c < C; ++c) {
      if (r.rank[c] < 0) continue;
      ds.demand(z, c) += r.present - r.rank[c];
      ds.supply(z, c) += (r.rank[c] + 1.0) / static_cast<double>(sizes[z]);
    }
  }
  return ds;
}

AngleTensor alignment_scores(const AngleTensor& vprime, const Clustering& clustering,
                             const std::vector<LabelHistogram>& histograms) {
  const std::size_t n = clustering.assignment.size();
  if (vprime.n != n || histograms.size() != n) throw std::invalid_argument("alignment inputs disagree in size");
  const std::size_t Z = static_cast<std::size_t>(clustering.num_clusters);
  const std::size_t C = vprime.classes;
  AngleTensor out(Z, C);
  const auto sizes = clustering.sizes();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto p = static_cast<std::size_t>(clustering.assignment[i]);
      const auto q = static_cast<std::size_t>(clustering.assignment[j]);
      for (std::size_t c = 0; c < C; ++c) {
        if (histograms[i].counts[c] == 0 || histograms[j].counts[c] == 0) continue;
        const double angle = std::clamp(vprime.at(i, j, c), 0.0, 90.0);
        out.at(p, q, c) += 1.0 - angle / 90.0;
      }
    }
  for (std::size_t p = 0; p < Z; ++p)
    for (std::size_t q = 0; q < Z; ++q)
      for (std::size_t c = 0; c < C; ++c) out.at(p, q, c) /= static_cast<double>(sizes[p] * sizes[q]);
  return out;
}

std::vector<int> CCGraph::learners_of(int source) const {
  std::vector<int> out;
  for (int p = 0; p < num_clusters; ++p) {
    const auto& e = edges[static_cast<std::size_t>(p)];
    if (std::find(e.begin(), e.end(), source) != e.end()) out.push_back(p);
  }
  return out;
}

CCGraph build_cc_graph(const DemandSupply& ds, const AngleTensor& alignment, int k) {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  const std::size_t Z = ds.demand.rows();
  const std::size_t C = ds.demand.cols();
  if (alignment.n != Z || alignment.classes != C) throw std::invalid_argument("alignment tensor shape mismatch");
  CCGraph g;
  g.num_clusters = static_cast<int>(Z);
  g.scores = Matrix(Z, Z);
  g.edges.assign(Z, {});
  for (std::size_t p = 0; p < Z; ++p)
    for (std::size_t q = 0; q < Z; ++q) {
      if (p == q) {
        g.scores(p, q) = -std::numeric_limits<double>::infinity();
        continue;
      }
      double h = 0.0;
      for (std::size_t c = 0; c < C; ++c) h += ds.demand(p, c) * ds.supply(q, c) * alignment.at(p, q, c);
      g.scores(p, q) = h;
    }
  if (Z < 2) {
    spdlog::warn("fewer than two clusters; complementarity graph is empty");
    return g;
  }
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), Z - 1);
  for (std::size_t p = 0; p < Z; ++p) {
    std::vector<std::size_t> cand;
    for (std::size_t q = 0; q < Z; ++q)
      if (q != p) cand.push_back(q);
    std::stable_sort(cand.begin(), cand.end(),
                     [&](std::size_t a, std::size_t b) { return g.scores(p, a) > g.scores(p, b); });
    for (std::size_t t = 0; t < keep; ++t) g.edges[p].push_back(static_cast<int>(cand[t]));
  }
  return g;
}

}  // namespace feddag
