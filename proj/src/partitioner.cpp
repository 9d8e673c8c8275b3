#include "feddag/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "feddag/random.hpp"
#include <nlohmann/json.hpp>

namespace feddag {

using json = nlohmann::json;

Concept concept_from_string(const std::string& s) {
  if (s == "identity") return Concept::kIdentity;
  if (s == "flip") return Concept::kFlip;
  if (s == "rotate") return Concept::kRotate;
  throw std::invalid_argument("unknown concept '" + s + "'");
}

std::string to_string(Concept c) {
  switch (c) {
    case Concept::kIdentity: return "identity";
    case Concept::kFlip: return "flip";
    case Concept::kRotate: return "rotate";
  }
  return "identity";
}

int remap_label(int y, int num_classes, Concept shift_kind) {
  switch (shift_kind) {
    case Concept::kIdentity: return y;
    case Concept::kRotate: return (y + 1) % num_classes;
    case Concept::kFlip: return (num_classes - y) % num_classes;
  }
  return y;
}

void Federation::validate() const {
  if (clients.empty()) throw std::invalid_argument("federation has no clients");
  for (const auto& c : clients) {
    c.validate();
    if (c.num_classes != num_classes) throw std::invalid_argument("client class count mismatch");
  }
  if (!tests.empty() && tests.size() != clients.size())
    throw std::invalid_argument("test split count differs from client count");
  if (!ground_truth.empty() && ground_truth.size() != clients.size())
    throw std::invalid_argument("ground truth length differs from client count");
}

std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size(), 0);
  if (weights.empty() || sum <= 0.0) return out;
  std::vector<double> frac(weights.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] / sum * static_cast<double>(total);
    out[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - std::floor(exact);
    assigned += out[k];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[order[r % order.size()]];
  return out;
}

namespace {

constexpr int kMaxRedraws = 50;

Federation gather(const ClientDataset& src, const std::vector<std::vector<std::size_t>>& rows) {
  Federation fed;
  fed.num_classes = src.num_classes;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto sorted = rows[i];
    std::sort(sorted.begin(), sorted.end());
    ClientDataset d = src.subset(sorted);
    d.client_id = static_cast<ClientId>(i);
    fed.clients.push_back(std::move(d));
  }
  return fed;
}

}  // namespace

Federation partition_label_skew_quantity(const ClientDataset& src, std::size_t num_clients,
                                         double rho, double alpha_q, std::uint64_t seed) {
  const int C = src.num_classes;
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in (0, 1]");
  if (rho * C < 1.0) throw std::invalid_argument("rho * C must be at least 1");
  if (num_clients < 1) throw std::invalid_argument("need at least one client");
  src.validate();

  const auto set_size = static_cast<std::size_t>(std::ceil(rho * C - 1e-12));
  const std::size_t num_blocks = (static_cast<std::size_t>(C) + set_size - 1) / set_size;
  if (num_clients < num_blocks)
    throw std::invalid_argument("too few clients to cover every label group");

  Rng rng(seed);
  std::vector<int> perm(static_cast<std::size_t>(C));
  std::iota(perm.begin(), perm.end(), 0);
  stable_shuffle(perm, rng);

  // Consecutive blocks of the shuffled labels; the last block wraps around.
  std::vector<std::vector<int>> blocks(num_blocks);
  for (std::size_t b = 0; b < num_blocks; ++b)
    for (std::size_t k = 0; k < set_size; ++k) blocks[b].push_back(perm[(b * set_size + k) % perm.size()]);

  // Clients are dealt round-robin into equal-size groups, one block per group.
  std::vector<std::vector<std::size_t>> holders(static_cast<std::size_t>(C));
  for (std::size_t i = 0; i < num_clients; ++i)
    for (int label : blocks[i % num_blocks]) holders[static_cast<std::size_t>(label)].push_back(i);

  std::vector<std::vector<std::size_t>> rows(num_clients);
  for (int label = 0; label < C; ++label) {
    auto idx = src.class_indices(label);
    const auto& h = holders[static_cast<std::size_t>(label)];
    if (idx.empty()) continue;
    if (idx.size() < h.size())
      throw std::runtime_error("label " + std::to_string(label) + " has fewer samples than holders");
    stable_shuffle(idx, rng);
    std::vector<std::size_t> counts;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxRedraws && !ok; ++attempt) {
      counts = apportion(sample_dirichlet(rng, alpha_q, h.size()), idx.size());
      ok = std::all_of(counts.begin(), counts.end(), [](std::size_t n) { return n > 0; });
    }
    if (!ok)
      throw std::runtime_error("could not give every holder of label " + std::to_string(label) +
                               " a sample after re-draws");
    std::size_t pos = 0;
    for (std::size_t k = 0; k < h.size(); ++k)
      for (std::size_t n = 0; n < counts[k]; ++n) rows[h[k]].push_back(idx[pos++]);
  }
  for (const auto& r : rows)
    if (r.empty()) throw std::runtime_error("a client received no samples");
  return gather(src, rows);
}

Federation partition_lda(const ClientDataset& src, std::size_t num_clients, double alpha_q,
                         std::uint64_t seed) {
  if (num_clients < 1) throw std::invalid_argument("need at least one client");
  src.validate();
  Rng rng(seed);
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::vector<std::vector<std::size_t>> rows(num_clients);
    for (int label = 0; label < src.num_classes; ++label) {
      auto idx = src.class_indices(label);
      if (idx.empty()) continue;
      stable_shuffle(idx, rng);
      const auto counts = apportion(sample_dirichlet(rng, alpha_q, num_clients), idx.size());
      std::size_t pos = 0;
      for (std::size_t k = 0; k < num_clients; ++k)
        for (std::size_t n = 0; n < counts[k]; ++n) rows[k].push_back(idx[pos++]);
    }
    if (std::all_of(rows.begin(), rows.end(), [](const auto& r) { return !r.empty(); }))
      return gather(src, rows);
  }
  throw std::runtime_error("LDA partition left a client empty after re-draws");
}

ClientDataset apply_concept_shift(const ClientDataset& d, Concept shift_kind) {
  ClientDataset out = d;
  for (auto& y : out.labels) y = remap_label(y, d.num_classes, shift_kind);
  return out;
}

void assign_concepts(Federation& fed, const std::vector<Concept>& pool, std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("concept pool is empty");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  fed.concepts.clear();
  fed.ground_truth.clear();
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    const std::size_t k = pick(rng);
    fed.concepts.push_back(pool[k]);
    fed.ground_truth.push_back(static_cast<int>(k));
    fed.clients[i] = apply_concept_shift(fed.clients[i], pool[k]);
    if (fed.has_tests()) fed.tests[i] = apply_concept_shift(fed.tests[i], pool[k]);
  }
}

Federation split_train_test(const Federation& fed, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("test fraction must lie in (0, 1)");
  Federation out = fed;
  out.tests.clear();
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    const auto& d = fed.clients[i];
    Rng rng(derive_seed(seed, "split", i));
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    stable_shuffle(idx, rng);
    auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(d.size())));
    n_test = std::min(n_test, d.size() - 1);
    std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    out.clients[i] = d.subset(train);
    out.tests.push_back(d.subset(test));
  }
  return out;
}

std::vector<std::vector<int>> default_class_subsets(int num_clusters, int num_classes,
                                                    int classes_per_cluster, std::uint64_t seed) {
  std::vector<std::vector<int>> subsets;
  if (classes_per_cluster <= 0 || classes_per_cluster >= num_classes) {
    std::vector<int> all(static_cast<std::size_t>(num_classes));
    std::iota(all.begin(), all.end(), 0);
    subsets.assign(static_cast<std::size_t>(num_clusters), all);
    return subsets;
  }
  Rng rng(derive_seed(seed, "class-subsets"));
  std::set<std::vector<int>> seen;
  const int per_perm = num_classes / classes_per_cluster;
  for (int round = 0; static_cast<int>(subsets.size()) < num_clusters; ++round) {
    if (round > 1000) throw std::runtime_error("cannot find enough distinct class subsets");
    std::vector<int> perm(static_cast<std::size_t>(num_classes));
    std::iota(perm.begin(), perm.end(), 0);
    stable_shuffle(perm, rng);
    for (int b = 0; b < per_perm && static_cast<int>(subsets.size()) < num_clusters; ++b) {
      std::vector<int> s(perm.begin() + b * classes_per_cluster,
                         perm.begin() + (b + 1) * classes_per_cluster);
      std::sort(s.begin(), s.end());
      if (seen.insert(s).second) subsets.push_back(std::move(s));
    }
  }
  return subsets;
}

namespace {

struct ClassGeometry {
  // means[c][m] is the centre of blob m of class c.
  std::vector<std::vector<std::vector<double>>> means;
};

ClassGeometry class_geometry(const SyntheticSpec& spec) {
  const auto C = static_cast<std::size_t>(spec.num_classes);
  const auto F = static_cast<std::size_t>(spec.feature_dim);
  const auto M = static_cast<std::size_t>(std::max(1, spec.modes_per_class));
  ClassGeometry g;
  g.means.assign(C, std::vector<std::vector<double>>(M, std::vector<double>(F, 0.0)));
  Rng rng(derive_seed(spec.seed, "class-means"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t m = 0; m < M; ++m) {
      auto& mu = g.means[c][m];
      if (M == 1 && F >= C) {
        mu[c] = spec.separation;  // simplex vertex
      } else {
        double n2 = 0.0;
        for (auto& x : mu) {
          x = normal(rng);
          n2 += x * x;
        }
        const double scale = spec.separation / std::sqrt(n2);
        for (auto& x : mu) x *= scale;
      }
    }
  }
  return g;
}

std::vector<double> cluster_profile(const SyntheticSpec& spec, int cluster,
                                    const std::vector<std::vector<int>>& subsets) {
  const auto C = static_cast<std::size_t>(spec.num_classes);
  if (!spec.class_weights.empty()) {
    const auto& w = spec.class_weights.at(static_cast<std::size_t>(cluster));
    if (w.size() != C) throw std::invalid_argument("class weight vector must have C entries");
    return w;
  }
  std::vector<double> w(C, 0.0);
  for (int c : subsets.at(static_cast<std::size_t>(cluster))) w[static_cast<std::size_t>(c)] = 1.0;
  return w;
}

std::vector<std::vector<int>> resolve_subsets(const SyntheticSpec& spec) {
  if (!spec.class_subsets.empty()) return spec.class_subsets;
  return default_class_subsets(spec.num_clusters, spec.num_classes, spec.classes_per_cluster, spec.seed);
}

}  // namespace

ClientDataset synthetic_client_sample(const SyntheticSpec& spec, int cluster, ClientId client_id,
                                      int num_samples, std::uint64_t stream) {
  const auto C = static_cast<std::size_t>(spec.num_classes);
  const auto F = static_cast<std::size_t>(spec.feature_dim);
  const auto subsets = resolve_subsets(spec);
  const auto geometry = class_geometry(spec);
  auto profile = cluster_profile(spec, cluster, subsets);

  if (spec.within_alpha > 0.0) {
    Rng prng(derive_seed(spec.seed, "client-profile", client_id));
    std::gamma_distribution<double> gamma(spec.within_alpha, 1.0);
    for (auto& w : profile)
      if (w > 0.0) w *= std::max(gamma(prng), 1e-3);
  }
  auto counts = apportion(profile, static_cast<std::size_t>(num_samples));
  // Every class in the profile keeps at least one sample.
  for (std::size_t c = 0; c < C; ++c) {
    if (profile[c] > 0.0 && counts[c] == 0) {
      auto big = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      if (counts[big] > 1) {
        --counts[big];
        ++counts[c];
      }
    }
  }

  const Concept shift_kind = spec.concepts.empty() ? Concept::kIdentity
                                                : spec.concepts.at(static_cast<std::size_t>(cluster));
  Rng rng(derive_seed(spec.seed, "client-samples", client_id, stream));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto modes = geometry.means.front().size();
  std::uniform_int_distribution<std::size_t> pick_mode(0, modes - 1);

  std::vector<int> classes;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < counts[c]; ++n) classes.push_back(static_cast<int>(c));
  stable_shuffle(classes, rng);

  ClientDataset d;
  d.client_id = client_id;
  d.num_classes = spec.num_classes;
  d.features = Matrix(classes.size(), F);
  for (std::size_t r = 0; r < classes.size(); ++r) {
    const auto c = static_cast<std::size_t>(classes[r]);
    const auto& mu = geometry.means[c][modes > 1 ? pick_mode(rng) : 0];
    auto row = d.features.row(r);
    for (std::size_t f = 0; f < F; ++f) row[f] = mu[f] + spec.noise * normal(rng);
    d.labels.push_back(remap_label(classes[r], spec.num_classes, shift_kind));
  }
  return d;
}

Federation gen_synthetic_clusters(const SyntheticSpec& spec) {
  if (spec.num_clusters < 1 || spec.clients_per_cluster < 1)
    throw std::invalid_argument("need at least one cluster and one client per cluster");
  if (spec.num_classes < 1 || spec.feature_dim < 1 || spec.samples_per_client < 1)
    throw std::invalid_argument("invalid synthetic dimensions");
  Federation fed;
  fed.num_classes = spec.num_classes;
  for (int k = 0; k < spec.num_clusters; ++k) {
    for (int j = 0; j < spec.clients_per_cluster; ++j) {
      const auto id = static_cast<ClientId>(k * spec.clients_per_cluster + j);
      fed.clients.push_back(synthetic_client_sample(spec, k, id, spec.samples_per_client, 0));
      if (spec.test_samples_per_client > 0)
        fed.tests.push_back(synthetic_client_sample(spec, k, id, spec.test_samples_per_client, 1));
      fed.ground_truth.push_back(k);
      fed.concepts.push_back(spec.concepts.empty() ? Concept::kIdentity
                                                   : spec.concepts.at(static_cast<std::size_t>(k)));
    }
  }
  return fed;
}

void dump_federation(const Federation& fed, const std::filesystem::path& dir, std::uint64_t seed,
                     const std::string& params_json) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["num_classes"] = fed.num_classes;
  manifest["seed"] = seed;
  manifest["params"] = params_json.empty() ? json::object() : json::parse(params_json);
  manifest["clients"] = json::array();
  char name[64];
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    json entry;
    entry["id"] = fed.clients[i].client_id;
    std::snprintf(name, sizeof(name), "client_%04zu_train.csv", i);
    save_dataset_csv(dir / name, fed.clients[i]);
    entry["train"] = name;
    if (fed.has_tests()) {
      std::snprintf(name, sizeof(name), "client_%04zu_test.csv", i);
      save_dataset_csv(dir / name, fed.tests[i]);
      entry["test"] = name;
    }
    if (!fed.ground_truth.empty()) entry["ground_truth"] = fed.ground_truth[i];
    if (!fed.concepts.empty()) entry["shift_kind"] = to_string(fed.concepts[i]);
    manifest["clients"].push_back(entry);
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

Federation load_federation(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest.json in " + dir.string());
  const json manifest = json::parse(in);
  Federation fed;
  fed.num_classes = manifest.at("num_classes").get<int>();
  for (const auto& entry : manifest.at("clients")) {
    const auto id = entry.at("id").get<ClientId>();
    fed.clients.push_back(load_dataset_csv(dir / entry.at("train").get<std::string>(), fed.num_classes, id));
    if (entry.contains("test"))
      fed.tests.push_back(load_dataset_csv(dir / entry.at("test").get<std::string>(), fed.num_classes, id));
    if (entry.contains("ground_truth")) fed.ground_truth.push_back(entry["ground_truth"].get<int>());
    if (entry.contains("shift_kind")) fed.concepts.push_back(concept_from_string(entry["shift_kind"].get<std::string>()));
  }
  fed.validate();
  return fed;
}

}  // namespace feddag
