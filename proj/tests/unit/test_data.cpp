#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "feddag/datamodel.hpp"
#include "feddag/partitioner.hpp"
#include "feddag/random.hpp"
#include "oracles.hpp"

using namespace feddag;
namespace fs = std::filesystem;

namespace {

ClientDataset blob_pool(int per_class, int num_classes, std::uint64_t seed) {
  SyntheticSpec s;
  s.num_clusters = 1;
  s.clients_per_cluster = 1;
  s.classes_per_cluster = 0;
  s.num_classes = num_classes;
  s.samples_per_client = per_class * num_classes;
  s.test_samples_per_client = 0;
  s.seed = seed;
  return gen_synthetic_clusters(s).clients.front();
}

std::multiset<std::pair<std::vector<double>, int>> rows_of(const std::vector<ClientDataset>& parts) {
  std::multiset<std::pair<std::vector<double>, int>> out;
  for (const auto& d : parts)
    for (std::size_t i = 0; i < d.size(); ++i)
      out.emplace(std::vector<double>(d.features.row(i).begin(), d.features.row(i).end()), d.labels[i]);
  return out;
}

std::set<int> label_set(const ClientDataset& d) { return {d.labels.begin(), d.labels.end()}; }

}  // namespace

TEST_CASE("derive_seed separates streams and is stable") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 1) != derive_seed(1, "a", 2));
  CHECK(derive_seed(1, "a", 1, 2) != derive_seed(1, "a", 2, 1));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("dirichlet draws lie on the simplex") {
  Rng rng(3);
  for (double alpha : {1e-3, 0.1, 1.0, 100.0}) {
    const auto p = sample_dirichlet(rng, alpha, 7);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::all_of(p.begin(), p.end(), [](double v) { return v >= 0.0; }));
  }
  CHECK_THROWS_AS(sample_dirichlet(rng, 0.0, 3), std::invalid_argument);
}

TEST_CASE("sampling without replacement") {
  Rng rng(4);
  const auto s = sample_without_replacement(rng, 20, 7);
  CHECK(s.size() == 7);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 7);
  CHECK(sample_without_replacement(rng, 5, 5) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK_THROWS(sample_without_replacement(rng, 3, 4));
}

TEST_CASE("class histogram") {
  ClientDataset d{0, Matrix(3, 1), {0, 0, 1}, 3};
  CHECK(class_histogram(d).counts == std::vector<std::int64_t>{2, 1, 0});
  Rng rng(5);
  std::uniform_int_distribution<int> lab(0, 9);
  ClientDataset e{0, Matrix(100, 1), std::vector<int>(100), 10};
  std::vector<std::int64_t> want(10, 0);
  for (auto& y : e.labels) ++want[static_cast<std::size_t>(y = lab(rng))];
  CHECK(class_histogram(e).counts == want);
}

TEST_CASE("dataset validation") {
  ClientDataset bad{0, Matrix(2, 1), {0, 3}, 3};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ClientDataset ragged{0, Matrix(3, 1), {0, 1}, 3};
  CHECK_THROWS_AS(ragged.validate(), std::invalid_argument);
}

TEST_CASE("wasserstein distance") {
  CHECK(wasserstein_1d({{3, 1, 4}}, {{3, 1, 4}}) == 0.0);
  CHECK(wasserstein_1d({{1, 0, 0}}, {{0, 0, 1}}) == 2.0);
  CHECK(wasserstein_1d({{2, 0}}, {{0, 2}}) == 2.0);
  CHECK(oracle::transport_cost({1, 0, 0}, {0, 0, 1}) == 2);
  Rng rng(6);
  std::uniform_int_distribution<int> cnt(0, 9);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + static_cast<std::size_t>(t % 5);
    LabelHistogram a{std::vector<std::int64_t>(c)}, b{std::vector<std::int64_t>(c, 0)};
    for (auto& v : a.counts) v = cnt(rng);
    std::uniform_int_distribution<std::size_t> slot(0, c - 1);
    for (std::int64_t k = 0; k < a.total(); ++k) ++b.counts[slot(rng)];
    CHECK(wasserstein_1d(a, b) == static_cast<double>(oracle::transport_cost(a.counts, b.counts)));
    CHECK(wasserstein_1d(a, b) == wasserstein_1d(b, a));
  }
  CHECK_THROWS(wasserstein_1d({{1, 2}}, {{1, 2, 3}}));
}

TEST_CASE("sparse gradient algebra and wire format") {
  SparseGradient a{10, {1, 4, 7}, {1.0, -2.0, 0.5}};
  SparseGradient b{10, {4, 7, 9}, {3.0, 2.0, 1.0}};
  CHECK(sparse_dot(a, b) == doctest::Approx(-6.0 + 1.0));
  CHECK(a.norm() == doctest::Approx(std::sqrt(5.25)));
  CHECK(wire_bytes(a) == 3 * 12);
  std::stringstream ss;
  write_sparse_gradient(ss, a);
  CHECK(read_sparse_gradient(ss) == a);
  SparseGradient unsorted{10, {4, 1}, {1.0, 1.0}};
  CHECK_THROWS_AS(unsorted.validate(), std::invalid_argument);
  SparseGradient out_of_range{3, {5}, {1.0}};
  CHECK_THROWS_AS(out_of_range.validate(), std::invalid_argument);
}

TEST_CASE("dataset csv round trip") {
  const auto d = blob_pool(3, 4, 7);
  const auto path = fs::temp_directory_path() / "feddag_unit_ds.csv";
  save_dataset_csv(path, d);
  const auto back = load_dataset_csv(path, 4);
  CHECK(back.labels == d.labels);
  CHECK(back.features == d.features);
  fs::remove(path);
  CHECK_THROWS(load_dataset_csv(path, 4));
}

TEST_CASE("apportion sums exactly and follows largest remainders") {
  CHECK(apportion({1, 1, 1}, 10) == std::vector<std::size_t>{4, 3, 3});
  CHECK(apportion({0.5, 0.25, 0.25}, 4) == std::vector<std::size_t>{2, 1, 1});
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const auto w = sample_dirichlet(rng, 0.5, 6);
    const auto c = apportion(w, 97);
    CHECK(std::accumulate(c.begin(), c.end(), std::size_t{0}) == 97);
  }
}

TEST_CASE("label skew: label sets and conservation") {
  const auto pool = blob_pool(40, 10, 9);
  const auto fed = partition_label_skew_quantity(pool, 10, 0.2, 0.5, 10);
  CHECK(fed.size() == 10);
  for (const auto& c : fed.clients) CHECK(label_set(c).size() == 2);
  CHECK(rows_of(fed.clients) == rows_of({pool}));
}

TEST_CASE("label skew IID limit") {
  const auto pool = blob_pool(100, 10, 11);
  const auto fed = partition_label_skew_quantity(pool, 4, 1.0, 1e6, 12);
  for (const auto& c : fed.clients) {
    const auto h = class_histogram(c);
    CHECK(label_set(c).size() == 10);
    const auto [lo, hi] = std::minmax_element(h.counts.begin(), h.counts.end());
    CHECK(static_cast<double>(*hi) / static_cast<double>(*lo) < 1.1);
  }
  CHECK_THROWS_AS(partition_label_skew_quantity(pool, 2, 0.2, 0.5, 1), std::invalid_argument);
}

TEST_CASE("lda histograms match a seeded re-draw") {
  const auto pool = blob_pool(30, 10, 13);
  const std::size_t n = 10;
  const double alpha = 0.25;
  const std::uint64_t seed = 14;
  const auto fed = partition_lda(pool, n, alpha, seed);
  CHECK(rows_of(fed.clients) == rows_of({pool}));

  // Independent re-draw: same engine, same consumption order.
  Rng rng(seed);
  std::vector<std::vector<std::int64_t>> want(n, std::vector<std::int64_t>(10, 0));
  for (int label = 0; label < 10; ++label) {
    const std::size_t m = pool.class_indices(label).size();
    for (std::size_t i = m; i > 1; --i) std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> p(n);
    double tot = 0.0;
    for (auto& v : p) tot += (v = gamma(rng));
    std::vector<double> exact(n);
    std::size_t given = 0;
    for (std::size_t k = 0; k < n; ++k) {
      exact[k] = p[k] / tot * static_cast<double>(m);
      want[k][static_cast<std::size_t>(label)] = static_cast<std::int64_t>(std::floor(exact[k]));
      given += static_cast<std::size_t>(std::floor(exact[k]));
    }
    std::vector<bool> used(n, false);
    while (given < m) {
      std::size_t best = n;
      for (std::size_t k = 0; k < n; ++k)
        if (!used[k] && (best == n || exact[k] - std::floor(exact[k]) > exact[best] - std::floor(exact[best])))
          best = k;
      used[best] = true;
      ++want[best][static_cast<std::size_t>(label)];
      ++given;
    }
  }
  bool all_nonempty = true;
  for (const auto& h : want) all_nonempty = all_nonempty && std::accumulate(h.begin(), h.end(), 0LL) > 0;
  REQUIRE(all_nonempty);  // otherwise the partitioner would have re-drawn
  for (std::size_t k = 0; k < n; ++k) CHECK(class_histogram(fed.clients[k]).counts == want[k]);
}

TEST_CASE("lda IID limit") {
  const auto pool = blob_pool(100, 5, 15);
  const auto fed = partition_lda(pool, 4, 1e6, 16);
  for (const auto& c : fed.clients)
    for (auto v : class_histogram(c).counts) CHECK(std::abs(v - 25) <= 1);
}

TEST_CASE("concept remapping") {
  for (int y = 0; y < 10; ++y) CHECK(remap_label(y, 10, Concept::kIdentity) == y);
  CHECK(remap_label(9, 10, Concept::kRotate) == 0);
  CHECK(remap_label(3, 10, Concept::kFlip) == 7);
  CHECK(remap_label(0, 10, Concept::kFlip) == 0);
  for (int y = 0; y < 10; ++y) CHECK(remap_label(remap_label(y, 10, Concept::kFlip), 10, Concept::kFlip) == y);
  CHECK(concept_from_string("flip") == Concept::kFlip);
  CHECK_THROWS(concept_from_string("mirror"));
}

TEST_CASE("assign_concepts relabels train and test consistently") {
  auto fed = split_train_test(partition_lda(blob_pool(20, 10, 17), 6, 1.0, 18), 0.3, 19);
  const auto before = fed;
  assign_concepts(fed, {Concept::kIdentity, Concept::kRotate}, 20);
  for (std::size_t i = 0; i < fed.size(); ++i) {
    const auto k = fed.concepts[i];
    CHECK(fed.ground_truth[i] == (k == Concept::kIdentity ? 0 : 1));
    for (std::size_t r = 0; r < fed.clients[i].size(); ++r)
      CHECK(fed.clients[i].labels[r] == remap_label(before.clients[i].labels[r], 10, k));
    for (std::size_t r = 0; r < fed.tests[i].size(); ++r)
      CHECK(fed.tests[i].labels[r] == remap_label(before.tests[i].labels[r], 10, k));
  }
}

TEST_CASE("train/test split conserves samples") {
  const auto fed = partition_lda(blob_pool(20, 10, 21), 5, 1.0, 22);
  const auto split = split_train_test(fed, 0.2, 23);
  for (std::size_t i = 0; i < fed.size(); ++i) {
    CHECK(split.clients[i].size() + split.tests[i].size() == fed.clients[i].size());
    CHECK(split.clients[i].size() >= 1);
    CHECK(rows_of({split.clients[i], split.tests[i]}) == rows_of({fed.clients[i]}));
  }
}

TEST_CASE("synthetic generator shapes") {
  SyntheticSpec s;
  s.num_clusters = 3;
  s.clients_per_cluster = 4;
  s.seed = 24;
  const auto fed = gen_synthetic_clusters(s);
  CHECK(fed.size() == 12);
  CHECK(fed.ground_truth.size() == 12);
  CHECK(fed.tests.size() == 12);
  for (std::size_t i = 0; i < fed.size(); ++i) {
    CHECK(fed.ground_truth[i] == static_cast<int>(i) / 4);
    CHECK(fed.clients[i].size() == 100);
    CHECK(label_set(fed.clients[i]).size() == 2);
  }
  // Same cluster, same label subset.
  CHECK(label_set(fed.clients[0]) == label_set(fed.clients[3]));
  const auto subsets = default_class_subsets(4, 10, 2, 1);
  for (std::size_t a = 0; a < subsets.size(); ++a)
    for (std::size_t b = a + 1; b < subsets.size(); ++b) CHECK(subsets[a] != subsets[b]);
}

TEST_CASE("federation dump and load round trip") {
  SyntheticSpec s;
  s.num_clusters = 2;
  s.clients_per_cluster = 2;
  s.samples_per_client = 10;
  s.test_samples_per_client = 5;
  s.concepts = {Concept::kIdentity, Concept::kFlip};
  const auto fed = gen_synthetic_clusters(s);
  const auto dir = fs::temp_directory_path() / "feddag_unit_fed";
  fs::remove_all(dir);
  dump_federation(fed, dir, 5, "{\"note\":1}");
  const auto back = load_federation(dir);
  REQUIRE(back.size() == fed.size());
  CHECK(back.ground_truth == fed.ground_truth);
  CHECK(back.concepts == fed.concepts);
  for (std::size_t i = 0; i < fed.size(); ++i) {
    CHECK(back.clients[i].labels == fed.clients[i].labels);
    CHECK(back.tests[i].labels == fed.tests[i].labels);
    for (std::size_t k = 0; k < fed.clients[i].features.data().size(); ++k)
      CHECK(back.clients[i].features.data()[k] == fed.clients[i].features.data()[k]);
  }
  fs::remove_all(dir);
}
