// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "feddag/config.hpp"
#include "feddag/io.hpp"
#include "feddag/lifecycle.hpp"
#include "feddag/random.hpp"
#include "oracles.hpp"

using namespace feddag;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "FAILED " + what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string f3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string g3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

SyntheticSpec clustered_spec(int clusters, int per_cluster, int classes_per_cluster, std::uint64_t seed) {
  SyntheticSpec s;
  s.num_clusters = clusters;
  s.clients_per_cluster = per_cluster;
  s.classes_per_cluster = classes_per_cluster;
  s.seed = seed;
  return s;
}

struct Recovery {
  int clusters = 0;
  double ari = 0.0;
};

Recovery recover(const Federation& fed, const FedDagConfig& cfg) {
  const auto warm = run_warmup_phase(fed, cfg);
  const auto prox = build_proximity(warm.signatures, fed.num_classes, cfg.similarity);
  const auto sweep = optimal_clustering(prox.a, cfg.clustering);
  return {sweep.best().num_clusters, adjusted_rand_index(sweep.best().assignment, fed.ground_truth)};
}

// Cluster id holding most clients of ground-truth group `g`.
int majority_cluster(const RunState& st, int g) {
  std::map<int, int> votes;
  for (std::size_t i = 0; i < st.fed.ground_truth.size(); ++i)
    if (st.fed.ground_truth[i] == g) ++votes[st.clustering.assignment[i]];
  return std::max_element(votes.begin(), votes.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
}

// ---------------------------------------------------------------------------

Outcome kernel_oracles() {
  Outcome out;
  Rng rng(11);
  std::normal_distribution<double> normal;

  double worst_proj = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = 3 + trial % 7, cols = 2 + (trial * 5) % 11;
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = normal(rng);
    const std::size_t rank = std::min(rows, cols);
    for (std::size_t p = 1; p < rank; ++p) {
      const auto basis = truncated_svd(m, p);
      const Eigen::MatrixXd diff = oracle::to_eigen(basis.projector()) - oracle::top_projector(m, p);
      worst_proj = std::max(worst_proj, diff.norm());
    }
  }
  // Randomized range finder on exactly low-rank inputs.
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t rows = 20, cols = 30, rank = 3;
    Matrix l(rows, rank), r(rank, cols);
    for (auto& v : l.data()) v = normal(rng);
    for (auto& v : r.data()) v = normal(rng);
    const Matrix m = matmul(l, r);
    SvdOptions opts;
    opts.method = SvdMethod::kRandomized;
    opts.seed = static_cast<std::uint64_t>(trial);
    for (std::size_t p = 1; p <= rank; ++p) {
      const Eigen::MatrixXd diff =
          oracle::to_eigen(truncated_svd(m, p, opts).projector()) - oracle::top_projector(m, p);
      worst_proj = std::max(worst_proj, diff.norm());
    }
  }
  out.require(worst_proj <= 1e-6, "projector error " + g3(worst_proj));
  out.note("projector err " + g3(worst_proj));

  double worst_angle = 0.0;
  for (double deg : {1e-6, 1e-3, 0.5, 1.0, 7.5, 30.0, 45.0, 60.0, 89.0, 89.999, 90.0}) {
    const double th = deg * std::numbers::pi / 180.0;
    OrthonormalBasis x{Matrix(4, 1)}, y{Matrix(4, 1)};
    x.vectors(0, 0) = 1.0;
    y.vectors(0, 0) = std::cos(th);
    y.vectors(2, 0) = std::sin(th);
    worst_angle = std::max(worst_angle, std::abs(principal_angle_min(x, y) - deg));
    // Plane through e1, e2 against the plane through e2 rotated away: they share e2.
    OrthonormalBasis p1{Matrix(4, 2)}, p2{Matrix(4, 2)};
    p1.vectors(0, 0) = 1.0;
    p1.vectors(1, 1) = 1.0;
    p2.vectors(0, 0) = std::cos(th);
    p2.vectors(3, 0) = std::sin(th);
    p2.vectors(1, 1) = 1.0;
    worst_angle = std::max(worst_angle, std::abs(principal_angle_min(p1, p2) - 0.0));
    // Plane spanned by e1, e2 against a line tilted by th out of it.
    OrthonormalBasis line{Matrix(4, 1)};
    line.vectors(1, 0) = std::cos(th);
    line.vectors(3, 0) = std::sin(th);
    worst_angle = std::max(worst_angle, std::abs(principal_angle_min(p1, line) - deg));
  }
  out.require(worst_angle <= 1e-9, "angle error " + g3(worst_angle) + " deg");
  out.note("angle err " + g3(worst_angle));

  double worst_loss = 0.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 12);
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = unit(rng);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
    std::vector<int> labels(n);
    for (auto& l : labels) l = pick(rng);
    const auto assign = canonical_labels(labels);
    const double gamma = unit(rng), tau = 0.05 + unit(rng), lambda = unit(rng);
    const auto got = clustering_loss(a, assign, gamma, tau, lambda);
    const auto want = oracle::brute_force_loss(a, assign, gamma, tau, lambda);
    for (auto [g, w] : {std::pair{got.l1, want.l1}, {got.l2, want.l2}, {got.loss, want.loss}})
      worst_loss = std::max(worst_loss, std::abs(g - w) / std::max(1.0, std::abs(w)));
  }
  out.require(worst_loss <= 1e-12, "loss error " + g3(worst_loss));
  out.note("loss err " + g3(worst_loss));

  int w1_mismatch = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t c = 1 + static_cast<std::size_t>(trial % 6);
    std::uniform_int_distribution<int> count(0, 12);
    LabelHistogram h1{std::vector<std::int64_t>(c)}, h2{std::vector<std::int64_t>(c)};
    for (auto& v : h1.counts) v = count(rng);
    // Second histogram: same total mass, redistributed at random.
    std::uniform_int_distribution<std::size_t> slot(0, c - 1);
    for (std::int64_t k = 0; k < h1.total(); ++k) ++h2.counts[slot(rng)];
    const auto exact = oracle::transport_cost(h1.counts, h2.counts);
    if (wasserstein_1d(h1, h2) != static_cast<double>(exact)) ++w1_mismatch;
  }
  out.require(w1_mismatch == 0, std::to_string(w1_mismatch) + " transport mismatches");
  return out;
}

// Relative error between analytic and central-difference gradients over the
// selected blocks.
double gradient_error(const ArchSpec& arch, const ModelParams& params, const Matrix& x, const std::vector<int>& y,
                      TrainBlocks blocks, std::optional<double> lambda) {
  const auto an = loss_and_grads(arch, params, x, y, blocks, lambda);
  const double h = 1e-6;
  double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
  auto probe = [&](std::vector<double> ModelParams::*block, const std::vector<double>& grad) {
    for (std::size_t k = 0; k < (params.*block).size(); ++k) {
      ModelParams plus = params, minus = params;
      (plus.*block)[k] += h;
      (minus.*block)[k] -= h;
      const double fd =
          (loss_value(arch, plus, x, y, blocks, lambda) - loss_value(arch, minus, x, y, blocks, lambda)) / (2 * h);
      diff2 += (fd - grad[k]) * (fd - grad[k]);
      fd2 += fd * fd;
      an2 += grad[k] * grad[k];
    }
  };
  if (blocks.enc1) probe(&ModelParams::enc1, an.grads.enc1);
  if (blocks.enc2) probe(&ModelParams::enc2, an.grads.enc2);
  if (blocks.head) probe(&ModelParams::head, an.grads.head);
  return std::sqrt(diff2) / std::max({std::sqrt(fd2), std::sqrt(an2), 1e-12});
}

Outcome gradient_correctness() {
  Outcome out;
  double worst = 0.0;
  int checks = 0;
  for (int inst = 0; inst < 60; ++inst) {
    Rng rng(derive_seed(5, "fd", static_cast<std::uint64_t>(inst)));
    std::normal_distribution<double> normal;
    ArchSpec arch;
    arch.input_dim = 3 + inst % 4;
    arch.hidden = inst % 3 == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{static_cast<std::size_t>(4 + inst % 3)};
    if (inst % 5 == 0) arch.hidden = {5, 4};
    arch.feature_dim = 2 + inst % 3;
    arch.num_classes = 2 + inst % 4;
    arch.activation = inst % 2 ? Activation::kTanh : Activation::kRelu;
    arch.dual = true;
    const auto params = init_params(arch, derive_seed(5, "fd-params", static_cast<std::uint64_t>(inst)));
    const std::size_t n = 6;
    Matrix x(n, arch.input_dim);
    for (auto& v : x.data()) v = normal(rng);
    std::vector<int> y(n);
    std::uniform_int_distribution<int> cls(0, static_cast<int>(arch.num_classes) - 1);
    for (auto& l : y) l = cls(rng);
    for (int mask = 1; mask < 8; ++mask) {
      const TrainBlocks blocks{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
      worst = std::max(worst, gradient_error(arch, params, x, y, blocks, std::nullopt));
      ++checks;
      if (blocks.enc1) {
        worst = std::max(worst, gradient_error(arch, params, x, y, blocks, 0.7));
        ++checks;
      }
    }
    ArchSpec single = arch;
    single.dual = false;
    const auto sp = init_params(single, derive_seed(5, "fd-single", static_cast<std::uint64_t>(inst)));
    worst = std::max(worst, gradient_error(single, sp, x, y, TrainBlocks::primary(), std::nullopt));
    ++checks;
  }
  out.require(worst < 1e-4, "max relative error " + g3(worst));
  out.note(std::to_string(checks) + " checks, max rel err " + g3(worst));
  return out;
}

Outcome cluster_recovery() {
  Outcome out;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto fed = gen_synthetic_clusters(clustered_spec(4, 10, 2, seed));
    FedDagConfig cfg;
    cfg.seed = seed;
    std::map<ProximityMode, Recovery> got;
    for (auto mode : {ProximityMode::kData, ProximityMode::kGradient, ProximityMode::kFused}) {
      cfg.similarity.mode = mode;
      got[mode] = recover(fed, cfg);
      out.require(got[mode].clusters == 4 && got[mode].ari == 1.0,
                  "seed " + std::to_string(seed) + " " + to_string(mode) + ": Z=" +
                      std::to_string(got[mode].clusters) + " ARI=" + f3(got[mode].ari));
    }
    const double fused = got[ProximityMode::kFused].ari;
    out.require(fused >= got[ProximityMode::kData].ari && fused >= got[ProximityMode::kGradient].ari,
                "seed " + std::to_string(seed) + ": fused worse than a single view");
  }
  if (out.pass) out.note("Z=4, ARI=1 for data/gradient/fused on 3 seeds");
  return out;
}

Outcome high_cluster_sweep() {
  Outcome out;
  for (std::uint64_t seed : {1, 2}) {
    const auto fed = gen_synthetic_clusters(clustered_spec(6, 10, 2, seed));
    FedDagConfig cfg;
    cfg.seed = seed;
    const auto warm = run_warmup_phase(fed, cfg);
    const auto prox = build_proximity(warm.signatures, fed.num_classes, cfg.similarity);
    const auto sweep = optimal_clustering(prox.a, cfg.clustering);
    const auto& cands = sweep.candidates;  // descending alpha
    const std::string tag = "seed " + std::to_string(seed) + ": ";
    std::vector<std::size_t> plateau;
    for (std::size_t i = 0; i < cands.size(); ++i)
      if (cands[i].num_clusters == 6) plateau.push_back(i);
    out.require(!plateau.empty(), tag + "no candidate with Z=6");
    if (plateau.empty()) continue;
    out.require(plateau.back() - plateau.front() + 1 == plateau.size(), tag + "Z=6 candidates not contiguous");
    double plateau_max = -1.0, under_min = std::numeric_limits<double>::infinity();
    for (auto i : plateau) plateau_max = std::max(plateau_max, cands[i].loss);
    for (const auto& c : cands)
      if (c.num_clusters < 6) under_min = std::min(under_min, c.loss);
    out.require(plateau_max < under_min, tag + "plateau loss " + g3(plateau_max) + " not below " + g3(under_min));
    for (std::size_t i = 1; i < cands.size(); ++i)
      out.require(cands[i].alpha < cands[i - 1].alpha && cands[i].num_clusters >= cands[i - 1].num_clusters,
                  tag + "cluster count not monotone in alpha");
    out.require(sweep.best().num_clusters == 6, tag + "selected Z=" + std::to_string(sweep.best().num_clusters));
    out.note(tag + "plateau alpha " + g3(cands[plateau.back()].alpha) + ".." + g3(cands[plateau.front()].alpha) +
             " (" + std::to_string(plateau.size()) + " points), ARI " +
             f3(adjusted_rand_index(sweep.best().assignment, fed.ground_truth)));
  }
  return out;
}

Outcome fusion_weights() {
  Outcome out;
  const std::size_t n = 10;
  Matrix blocks(n, n), flat(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        blocks(i, j) = (i < n / 2) == (j < n / 2) ? 0.0 : 1.0;
        flat(i, j) = 0.5;
      }
  const FusionConfig cfg;
  auto mean = [](const std::vector<double>& w) { return std::accumulate(w.begin(), w.end(), 0.0) / w.size(); };
  const auto g_informative = learn_fusion_weights(flat, blocks, cfg);
  const auto v_informative = learn_fusion_weights(blocks, flat, cfg);
  const auto same = learn_fusion_weights(blocks, blocks, cfg);
  const double mg = mean(g_informative.w), mv = mean(v_informative.w);
  out.require(mg >= 0.9, "gradient-informative mean(w)=" + f3(mg));
  out.require(mv <= 0.1, "data-informative mean(w)=" + f3(mv));
  out.require(std::all_of(same.w.begin(), same.w.end(), [&](double w) { return w == cfg.init_w; }),
              "identical views moved w");
  out.note("mean(w) " + f3(mg) + " / " + f3(mv) + ", symmetric case unchanged");
  return out;
}

SyntheticSpec concept_spec(std::uint64_t seed) {
  SyntheticSpec s = clustered_spec(2, 10, 0, seed);
  // Both groups see the same classes; the flip's fixed points 0 and 5 are
  // left out so every label is actually remapped.
  s.class_subsets = {{1, 2, 3, 4, 6, 7, 8, 9}, {1, 2, 3, 4, 6, 7, 8, 9}};
  s.concepts = {Concept::kIdentity, Concept::kFlip};
  return s;
}

Outcome concept_shift() {
  Outcome out;
  const auto fed = gen_synthetic_clusters(concept_spec(4));
  FedDagConfig cfg;
  cfg.seed = 4;
  cfg.train.rounds = 40;
  const auto st = train(fed, cfg);
  const double ours = evaluate(st).mean;
  const auto base = fedavg_reference(fed, cfg);
  out.require(st.clustering.num_clusters == 2, "Z=" + std::to_string(st.clustering.num_clusters));
  out.require(ours >= 0.90, "clustered accuracy " + f3(ours));
  out.require(base.final_mean <= 0.60, "FedAvg accuracy " + f3(base.final_mean));
  out.require(ours - base.final_mean >= 0.25, "gap " + f3(ours - base.final_mean));
  out.note("clustered " + f3(ours) + " vs FedAvg " + f3(base.final_mean) + ", Z=" +
           std::to_string(st.clustering.num_clusters));
  return out;
}

Outcome dual_encoder_contracts() {
  Outcome out;
  const auto fed = gen_synthetic_clusters(clustered_spec(3, 6, 3, 21));
  FedDagConfig cfg;
  cfg.seed = 21;
  cfg.train.schedule_k = 1;
  cfg.train.lambda_div = 0.1;
  auto st = prepare_run(fed, cfg);
  int primary_rounds = 0, secondary_rounds = 0;
  for (int r = 0; r < 8; ++r) {
    const auto before = st.clusters;
    const auto plan = phase_plan(st.round, cfg.train.schedule_k, true);
    run_rounds(st, 1);
    bool enc2_same = true, primary_same = true;
    for (std::size_t z = 0; z < before.size(); ++z) {
      enc2_same = enc2_same && before[z].model.enc2 == st.clusters[z].model.enc2;
      primary_same = primary_same && before[z].model.enc1 == st.clusters[z].model.enc1 &&
                     before[z].model.head == st.clusters[z].model.head;
    }
    if (plan.primary && !plan.secondary) {
      ++primary_rounds;
      out.require(enc2_same, "secondary block moved in primary round " + std::to_string(r));
    }
    if (plan.secondary && !plan.primary) {
      ++secondary_rounds;
      out.require(primary_same, "primary blocks moved in secondary round " + std::to_string(r));
    }
  }
  out.require(primary_rounds > 0 && secondary_rounds > 0, "schedule did not alternate");

  // Phase functions directly, both phases on the same snapshot.
  {
    auto cluster = st.clusters[0];
    const auto before = cluster.model;
    primary_phase_round(cluster, cluster.members, st.fed, st.cfg, 100);
    out.require(cluster.model.enc2 == before.enc2, "primary_phase_round touched enc2");
    out.require(cluster.model.enc1 != before.enc1, "primary_phase_round did not train");
    const int source = 1;
    auto learner_ids = st.graph.learners_of(source);
    std::vector<ClusterState> copies = st.clusters;
    std::vector<ClusterState*> learners;
    for (int p : learner_ids) learners.push_back(&copies[static_cast<std::size_t>(p)]);
    const auto src_before = copies[source].model;
    secondary_phase_round(copies[source], learners, copies[source].members, st.fed, st.cfg, 100);
    out.require(copies[source].model.enc1 == src_before.enc1 && copies[source].model.head == src_before.head,
                "secondary phase touched the source's primary blocks");
    for (int p : learner_ids)
      out.require(copies[static_cast<std::size_t>(p)].model.enc1 == st.clusters[static_cast<std::size_t>(p)].model.enc1,
                  "secondary phase touched a learner's primary encoder");
  }

  // Single cluster, single encoder, no secondary: FedAvg exactly.
  FedDagConfig ref = cfg;
  ref.arch.dual = false;
  ref.train.schedule_k = 0;
  ref.train.lambda_div.reset();
  ref.train.secondary = SecondaryMode::kOff;
  ref.train.cluster_override = ClusterOverride::kSingle;
  ref.train.random_primary_init = true;
  ref.train.rounds = 12;
  const auto ours = train(fed, ref);
  const auto base = fedavg_reference(fed, ref);
  out.require(ours.clusters.size() == 1 && ours.clusters[0].model == base.model, "final model differs from FedAvg");
  bool same_traj = ours.history.size() == base.history.size();
  for (std::size_t r = 0; same_traj && r < base.history.size(); ++r)
    same_traj = ours.history[r].cluster_loss.size() == 1 &&
                ours.history[r].cluster_loss[0] == base.history[r].cluster_loss[0] &&
                ours.history[r].sampled == base.history[r].sampled;
  out.require(same_traj, "loss trajectory differs from FedAvg");
  out.note(std::to_string(primary_rounds) + " primary / " + std::to_string(secondary_rounds) +
           " secondary rounds checked; FedAvg reproduced bit-exactly");
  return out;
}

// Two groups with mirrored class profiles: each holds half the classes in
// bulk and the other half as a thin tail of multimodal classes, so each group
// supplies exactly what the other lacks.
SyntheticSpec complementary_spec(std::uint64_t seed) {
  SyntheticSpec s = clustered_spec(2, 10, 0, seed);
  s.modes_per_class = 3;
  s.separation = 6.0;
  s.samples_per_client = 100;
  s.test_samples_per_client = 400;
  std::vector<double> a(10), b(10);
  for (int c = 0; c < 10; ++c) {
    a[static_cast<std::size_t>(c)] = c < 5 ? 1.0 : 0.02;
    b[static_cast<std::size_t>(c)] = c < 5 ? 0.02 : 1.0;
  }
  s.class_weights = {a, b};
  return s;
}

// No-sharing baseline: the same dual-encoder model whose secondary encoder
// trains on the cluster's own clients instead of a source cluster's.
Outcome grs_ablation() {
  Outcome out;
  double full = 0.0, no_share = 0.0, single = 0.0;
  const std::vector<std::uint64_t> seeds{9, 10, 11};
  for (auto seed : seeds) {
    const auto fed = gen_synthetic_clusters(complementary_spec(seed));
    FedDagConfig cfg;
    cfg.seed = seed;
    cfg.train.rounds = 100;
    cfg.train.lr = 0.05;
    cfg.train.local_steps = 20;
    cfg.train.lambda_div = 3.0;
    auto run = [&](bool dual, SecondaryMode mode) {
      FedDagConfig c = cfg;
      c.arch.dual = dual;
      c.train.secondary = dual ? mode : SecondaryMode::kOff;
      const auto st = train(fed, c);
      out.require(st.clustering.num_clusters == 2, "seed " + std::to_string(seed) + " found " +
                                                       std::to_string(st.clustering.num_clusters) + " clusters");
      return evaluate(st).mean;
    };
    full += run(true, SecondaryMode::kGraph);
    no_share += run(true, SecondaryMode::kSelf);
    single += run(false, SecondaryMode::kOff);
  }
  const double n = static_cast<double>(seeds.size());
  full /= n;
  no_share /= n;
  single /= n;
  out.require(full - no_share >= 0.03, "sharing gain " + f3(full - no_share));
  out.require(std::abs(no_share - single) <= 0.01, "no-sharing vs single gap " + f3(no_share - single));
  out.note("mean over 3 seeds: sharing " + f3(full) + ", no sharing " + f3(no_share) + ", single encoder " +
           f3(single));
  return out;
}

Outcome newcomer() {
  Outcome out;
  auto spec = clustered_spec(4, 10, 2, 31);
  const auto fed = gen_synthetic_clusters(spec);
  FedDagConfig cfg;
  cfg.seed = 31;
  cfg.train.rounds = 30;
  auto st = train(fed, cfg);
  const auto assign_before = st.clustering.assignment;
  const auto w_before = st.prox.w;
  const auto a_before = st.prox.a;
  const int group = 2;
  const int target = majority_cluster(st, group);
  const auto id = static_cast<ClientId>(fed.size());
  auto joined = integrate_newcomer(st, synthetic_client_sample(spec, group, id, spec.samples_per_client, 100),
                                   synthetic_client_sample(spec, group, id, spec.test_samples_per_client, 101));
  out.require(joined.cluster == target, "assigned to " + std::to_string(joined.cluster) + ", expected " +
                                            std::to_string(target));
  out.require(std::equal(assign_before.begin(), assign_before.end(), st.clustering.assignment.begin()),
              "existing assignments changed");
  out.require(std::equal(w_before.begin(), w_before.end(), st.prox.w.begin()), "existing fusion weights changed");
  bool a_same = true;
  for (std::size_t i = 0; i < a_before.rows(); ++i)
    for (std::size_t j = 0; j < a_before.cols(); ++j) a_same = a_same && a_before(i, j) == st.prox.a(i, j);
  out.require(a_same, "existing proximity entries changed");

  const auto tuned = personalize(st, joined.client, joined.initial);
  const double acc = client_accuracy(st.cfg.arch, tuned, st.fed.tests[joined.client]);
  const auto& model = st.clusters[static_cast<std::size_t>(joined.cluster)].model;
  double incumbents = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < fed.size(); ++i)
    if (assign_before[i] == joined.cluster) {
      incumbents += client_accuracy(st.cfg.arch, model, st.fed.tests[i]);
      ++count;
    }
  incumbents /= count;
  out.require(acc >= incumbents - 0.02, "newcomer " + f3(acc) + " vs incumbents " + f3(incumbents));
  out.note("newcomer " + f3(acc) + " vs incumbents " + f3(incumbents));
  return out;
}

Outcome shift_detection() {
  Outcome out;
  auto spec = clustered_spec(4, 10, 2, 41);
  const auto fed = gen_synthetic_clusters(spec);
  FedDagConfig cfg;
  cfg.seed = 41;
  cfg.train.rounds = 10;
  auto st = train(fed, cfg);
  const std::size_t moved = 3, churned = 25;
  const int to_group = 1;
  const int expected = majority_cluster(st, to_group);
  replace_client_data(st, moved,
                      synthetic_client_sample(spec, to_group, static_cast<ClientId>(moved),
                                              spec.samples_per_client, 200));

  // Small churn: 3% of samples replaced by fresh draws of the same classes,
  // 1% relabelled to the neighbouring class.
  auto churn = st.fed.clients[churned];
  const auto fresh = synthetic_client_sample(spec, fed.ground_truth[churned], static_cast<ClientId>(churned),
                                             spec.samples_per_client, 300);
  const std::size_t n = churn.size();
  const std::size_t replace = n * 3 / 100, relabel = std::max<std::size_t>(1, n / 100);
  for (std::size_t k = 0, done = 0; k < fresh.size() && done < replace; ++k) {
    // Overwrite a sample with a fresh one of the same label.
    auto rows = churn.class_indices(fresh.labels[k]);
    if (rows.empty()) continue;
    const auto r = rows[done % rows.size()];
    std::copy(fresh.features.row(k).begin(), fresh.features.row(k).end(), churn.features.row(r).begin());
    ++done;
  }
  for (std::size_t k = 0; k < relabel; ++k) churn.labels[n - 1 - k] = (churn.labels[n - 1 - k] + 1) % churn.num_classes;
  replace_client_data(st, churned, churn);

  const auto flagged = check_shifts(st);
  const bool moved_flagged = std::find(flagged.begin(), flagged.end(), moved) != flagged.end();
  const bool churn_flagged = std::find(flagged.begin(), flagged.end(), churned) != flagged.end();
  out.require(moved_flagged, "swapped client not flagged");
  out.require(st.clustering.assignment[moved] == expected,
              "swapped client in cluster " + std::to_string(st.clustering.assignment[moved]) + ", expected " +
                  std::to_string(expected));
  out.require(!churn_flagged, "churned client flagged");
  out.require(flagged.size() == 1, std::to_string(flagged.size()) + " clients flagged");
  out.note("swapped client flagged and moved to cluster " + std::to_string(st.clustering.assignment[moved]) +
           "; 4% churn not flagged");
  return out;
}

std::vector<std::pair<std::vector<double>, int>> sample_multiset(const std::vector<ClientDataset>& parts) {
  std::vector<std::pair<std::vector<double>, int>> rows;
  for (const auto& d : parts)
    for (std::size_t i = 0; i < d.size(); ++i)
      rows.emplace_back(std::vector<double>(d.features.row(i).begin(), d.features.row(i).end()), d.labels[i]);
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism_conservation() {
  Outcome out;
  const fs::path tmp = fs::temp_directory_path() / "feddag_acceptance";
  fs::create_directories(tmp);
  int configs = 0;
  for (const auto& entry : fs::directory_iterator(FEDDAG_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const auto rc = load_run_config(entry.path());
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      const auto fed = build_federation(rc.federation, rc.feddag.seed);
      auto st = prepare_run(fed, rc.feddag);
      run_with_lifecycle(st, rc.feddag.train.rounds);
      const auto path = tmp / ("metrics_" + std::to_string(rep) + ".csv");
      write_metrics_csv(path, st.history);
      write_matrix_csv(tmp / "prox.csv", st.prox.a);
      const auto bytes = slurp(path) + slurp(tmp / "prox.csv");
      if (rep == 0) first = bytes;
      else out.require(first == bytes, entry.path().filename().string() + " not byte-identical");
    }
    ++configs;
  }
  out.require(configs > 0, "no shipped configs found");

  // Partitioners conserve the pooled samples.
  SyntheticSpec pool_spec = clustered_spec(1, 1, 0, 51);
  pool_spec.samples_per_client = 600;
  pool_spec.test_samples_per_client = 0;
  const auto pool = gen_synthetic_clusters(pool_spec).clients.front();
  const auto want = sample_multiset({pool});
  const auto skew = partition_label_skew_quantity(pool, 12, 0.2, 0.5, 52);
  const auto lda = partition_lda(pool, 12, 0.3, 53);
  out.require(sample_multiset(skew.clients) == want, "label-skew partition lost samples");
  out.require(sample_multiset(lda.clients) == want, "LDA partition lost samples");
  const auto split = split_train_test(lda, 0.25, 54);
  std::vector<ClientDataset> both = split.clients;
  both.insert(both.end(), split.tests.begin(), split.tests.end());
  out.require(sample_multiset(both) == want, "train/test split lost samples");

  // Aggregation weights and sample counts.
  const auto fed = gen_synthetic_clusters(clustered_spec(3, 7, 3, 55));
  double worst = 0.0;
  Rng rng(56);
  for (int t = 0; t < 200; ++t) {
    std::uniform_int_distribution<std::size_t> m(1, fed.size());
    const auto pick = sample_without_replacement(rng, fed.size(), m(rng));
    const auto w = sample_weights(fed, pick);
    worst = std::max(worst, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
  }
  FedDagConfig cfg;
  cfg.seed = 55;
  for (double rate : {0.01, 0.1, 0.2, 0.33, 0.5, 1.0}) {
    cfg.train.sample_rate = rate;
    cfg.train.rounds = 3;
    const auto st = train(fed, cfg);
    for (const auto& c : st.clusters)
      worst = std::max(worst, std::abs(std::accumulate(c.data_weights.begin(), c.data_weights.end(), 0.0) - 1.0));
    const auto expect = std::max<std::size_t>(static_cast<std::size_t>(std::floor(rate * fed.size())), 1);
    for (const auto& h : st.history)
      out.require(h.sampled == expect, "rate " + g3(rate) + ": sampled " + std::to_string(h.sampled) +
                                           " != " + std::to_string(expect));
    for (int r = 0; r < 5; ++r) {
      std::size_t total = 0;
      for (const auto& s : sample_clients(st.clusters, fed.size(), cfg.train, cfg.seed, r)) total += s.size();
      out.require(total == expect, "sample_clients count at rate " + g3(rate));
    }
  }
  out.require(worst <= 1e-12, "weight sum error " + g3(worst));
  out.note(std::to_string(configs) + " configs byte-identical; multisets conserved; weight sum err " + g3(worst));
  fs::remove_all(tmp);
  return out;
}

Outcome sparsification_plateau() {
  Outcome out;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto fed = gen_synthetic_clusters(clustered_spec(4, 10, 2, seed));
    FedDagConfig cfg;
    cfg.seed = seed;
    cfg.similarity.mode = ProximityMode::kGradient;
    std::map<double, double> ari;
    for (double s : {0.001, 0.01, 0.2}) {
      cfg.similarity.sparsity = s;
      ari[s] = recover(fed, cfg).ari;
    }
    const std::string tag = "seed " + std::to_string(seed) + ": ";
    out.require(ari[0.01] == ari[0.2], tag + "ARI 1% " + f3(ari[0.01]) + " vs 20% " + f3(ari[0.2]));
    out.require(ari[0.001] <= ari[0.01], tag + "ARI 0.1% " + f3(ari[0.001]) + " above 1%");
    out.note(tag + "ARI " + f3(ari[0.001]) + "/" + f3(ari[0.01]) + "/" + f3(ari[0.2]));
  }
  return out;
}

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0 when no runtime bound applies
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<Criterion> criteria = {
      {1, "kernel oracles", 30, kernel_oracles},
      {2, "gradient correctness", 30, gradient_correctness},
      {3, "cluster recovery", 120, cluster_recovery},
      {4, "high cluster count sweep", 120, high_cluster_sweep},
      {5, "fusion weight behaviour", 10, fusion_weights},
      {6, "concept shift separation", 180, concept_shift},
      {7, "dual encoder contracts", 0, dual_encoder_contracts},
      {8, "complementary class sharing", 240, grs_ablation},
      {9, "newcomer generalization", 60, newcomer},
      {10, "shift detection", 60, shift_detection},
      {11, "determinism and conservation", 0, determinism_conservation},
      {12, "sparsification plateau", 120, sparsification_plateau},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) o.require(false, "runtime " + f3(secs) + "s over budget");
    if (!o.pass) ++failed;
    std::printf("%s criterion %d: %s (%s) [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
