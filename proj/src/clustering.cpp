#include "feddag/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace feddag {

Linkage linkage_from_string(const std::string& s) {
  if (s == "single") return Linkage::kSingle;
  if (s == "average") return Linkage::kAverage;
  if (s == "complete") return Linkage::kComplete;
  throw std::invalid_argument("unknown linkage '" + s + "'");
}

std::string to_string(Linkage l) {
  switch (l) {
    case Linkage::kSingle: return "single";
    case Linkage::kAverage: return "average";
    case Linkage::kComplete: return "complete";
  }
  return "average";
}

std::vector<std::vector<std::size_t>> Clustering::members() const {
  std::vector<std::vector<std::size_t>> m(static_cast<std::size_t>(num_clusters));
  for (std::size_t i = 0; i < assignment.size(); ++i) m[static_cast<std::size_t>(assignment[i])].push_back(i);
  return m;
}

std::vector<std::size_t> Clustering::sizes() const {
  std::vector<std::size_t> s(static_cast<std::size_t>(num_clusters), 0);
  for (int z : assignment) ++s[static_cast<std::size_t>(z)];
  return s;
}

bool Clustering::has_singleton() const {
  const auto s = sizes();
  return std::find(s.begin(), s.end(), std::size_t{1}) != s.end();
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto it = remap.find(l);
    if (it == remap.end()) it = remap.emplace(l, static_cast<int>(remap.size())).first;
    out.push_back(it->second);
  }
  return out;
}

Clustering hierarchical_cluster(const Matrix& a, double alpha, Linkage linkage) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("proximity matrix must be square");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  // Active clusters are keyed by their lowest member, which never changes
  // for the surviving side of a merge.
  std::vector<bool> active(n, true);
  std::vector<std::size_t> size(n, 1);
  std::vector<int> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
  Matrix d = a;
  for (;;) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bp = n, bq = n;
    for (std::size_t p = 0; p < n; ++p) {
      if (!active[p]) continue;
      for (std::size_t q = p + 1; q < n; ++q) {
        if (!active[q]) continue;
        if (d(p, q) < best) {
          best = d(p, q);
          bp = p;
          bq = q;
        }
      }
    }
    if (bp == n || !(best < alpha)) break;
    for (std::size_t r = 0; r < n; ++r) {
      if (!active[r] || r == bp || r == bq) continue;
      double v = 0.0;
      switch (linkage) {
        case Linkage::kSingle: v = std::min(d(bp, r), d(bq, r)); break;
        case Linkage::kComplete: v = std::max(d(bp, r), d(bq, r)); break;
        case Linkage::kAverage:
          v = (static_cast<double>(size[bp]) * d(bp, r) + static_cast<double>(size[bq]) * d(bq, r)) /
              static_cast<double>(size[bp] + size[bq]);
          break;
      }
      d(bp, r) = d(r, bp) = v;
    }
    active[bq] = false;
    size[bp] += size[bq];
    for (auto& pr : parent)
      if (pr == static_cast<int>(bq)) pr = static_cast<int>(bp);
  }
  Clustering c;
  c.alpha = alpha;
  c.assignment = canonical_labels(parent);
  c.num_clusters = c.assignment.empty() ? 0 : *std::max_element(c.assignment.begin(), c.assignment.end()) + 1;
  return c;
}

LossParts clustering_loss(const Matrix& a, const std::vector<int>& assignment, double gamma,
                          double tau, double lambda) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  const std::size_t n = assignment.size();
  if (a.rows() != n || a.cols() != n) throw std::invalid_argument("assignment length differs from matrix size");
  int z_count = 0;
  for (int z : assignment) {
    if (z < 0) throw std::invalid_argument("negative cluster id");
    z_count = std::max(z_count, z + 1);
  }
  std::vector<double> within(static_cast<std::size_t>(z_count), 0.0);
  std::vector<double> size(static_cast<std::size_t>(z_count), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto zi = static_cast<std::size_t>(assignment[i]);
    size[zi] += 1.0;
    for (std::size_t j = 0; j < n; ++j)
      if (assignment[j] == assignment[i]) within[zi] += a(i, j);
  }
  LossParts out;
  const double Z = static_cast<double>(z_count);
  double mean = 0.0;
  for (std::size_t z = 0; z < size.size(); ++z) {
    if (size[z] == 0.0) throw std::invalid_argument("cluster ids must be contiguous");
    out.l1 += within[z] / (size[z] * size[z]);
    mean += size[z];
  }
  mean /= Z;
  double var = 0.0;
  for (double s : size) var += (s - mean) * (s - mean);
  const double sigma = z_count > 1 ? std::sqrt(var / Z) : 0.0;
  const double target = static_cast<double>(n) / Z - gamma * sigma;
  for (double s : size) out.l2 += std::exp(std::max(0.0, target - s) / tau);
  out.l2 /= Z;
  out.loss = out.l1 + lambda * out.l2;
  return out;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int k = 20; k >= 1; --k) g.push_back(k * 0.05);
  return g;
}

SweepResult optimal_clustering(const Matrix& a, const ClusteringConfig& cfg) {
  if (cfg.alpha_grid.empty()) throw std::invalid_argument("alpha grid is empty");
  SweepResult out;
  for (double alpha : cfg.alpha_grid) {
    Clustering c = hierarchical_cluster(a, alpha, cfg.linkage);
    const auto parts = clustering_loss(a, c.assignment, cfg.gamma, cfg.tau, cfg.lambda);
    c.l1 = parts.l1;
    c.l2 = parts.l2;
    c.loss = parts.loss;
    out.candidates.push_back(std::move(c));
  }
  std::vector<std::size_t> pool;
  for (std::size_t k = 0; k < out.candidates.size(); ++k)
    if (!cfg.exclude_singletons || !out.candidates[k].has_singleton()) pool.push_back(k);
  if (pool.empty())
    for (std::size_t k = 0; k < out.candidates.size(); ++k) pool.push_back(k);

  double lmin = std::numeric_limits<double>::infinity();
  for (auto k : pool) lmin = std::min(lmin, out.candidates[k].loss);
  const double cutoff = lmin + cfg.rel_tol * std::abs(lmin);
  bool found = false;
  for (auto k : pool) {
    const auto& c = out.candidates[k];
    if (c.loss > cutoff) continue;
    const auto& b = out.candidates[out.selected];
    if (!found || c.num_clusters < b.num_clusters || (c.num_clusters == b.num_clusters && c.alpha > b.alpha)) {
      out.selected = k;
      found = true;
    }
  }
  return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("partitions differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    cells[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double idx = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, v] : cells) idx += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(n));
  const double max_idx = 0.5 * (sa + sb);
  if (max_idx == expected) return canonical_labels(a) == canonical_labels(b) ? 1.0 : 0.0;
  return (idx - expected) / (max_idx - expected);
}

}  // namespace feddag
