#include "feddag/lifecycle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "feddag/random.hpp"

namespace feddag {

int vote_cluster(const RunState& st, std::size_t idx, bool* tie) {
  if (tie) *tie = false;
  const std::size_t n = st.prox.size();
  if (idx >= n) throw std::invalid_argument("client is not in the proximity matrix");
  const auto hc = hierarchical_cluster(st.prox.a, st.alpha_star, st.cfg.clustering.linkage);
  const auto& assign = st.clustering.assignment;
  std::map<int, int> votes;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == idx || j >= assign.size()) continue;
    if (hc.assignment[j] == hc.assignment[idx]) ++votes[assign[j]];
  }
  if (!votes.empty()) {
    int best = -1, best_votes = -1;
    for (const auto& [z, v] : votes) {
      if (v > best_votes) {
        best = z;
        best_votes = v;
      } else if (v == best_votes && tie) {
        *tie = true;
      }
    }
    return best;
  }
  // Alone at this threshold: nearest cluster by mean proximity.
  const int z_count = st.clustering.num_clusters;
  std::vector<double> sum(static_cast<std::size_t>(z_count), 0.0);
  std::vector<int> cnt(static_cast<std::size_t>(z_count), 0);
  for (std::size_t j = 0; j < assign.size() && j < n; ++j) {
    if (j == idx) continue;
    sum[static_cast<std::size_t>(assign[j])] += st.prox.a(idx, j);
    ++cnt[static_cast<std::size_t>(assign[j])];
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int z = 0; z < z_count; ++z) {
    if (!cnt[static_cast<std::size_t>(z)]) continue;
    const double d = sum[static_cast<std::size_t>(z)] / cnt[static_cast<std::size_t>(z)];
    if (d < best_d) {
      best_d = d;
      best = z;
    } else if (d == best_d && tie) {
      *tie = true;
    }
  }
  return best;
}

NewcomerResult integrate_newcomer(RunState& st, ClientDataset train, std::optional<ClientDataset> test) {
  const std::size_t idx = st.fed.size();
  train.client_id = static_cast<ClientId>(idx);
  train.validate();
  if (train.num_classes != st.fed.num_classes) throw std::invalid_argument("newcomer class count differs");
  if (st.fed.has_tests()) {
    ClientDataset t = test ? *test : ClientDataset{};
    t.client_id = static_cast<ClientId>(idx);
    t.num_classes = st.fed.num_classes;
    st.fed.tests.push_back(std::move(t));
  }
  st.fed.clients.push_back(std::move(train));
  if (!st.fed.ground_truth.empty()) st.fed.ground_truth.push_back(-1);
  if (!st.fed.concepts.empty()) st.fed.concepts.push_back(Concept::kIdentity);

  auto sig = collect_signature(st.fed.clients[idx], st.cfg.single_arch(), st.cfg.similarity, st.cfg.seed);
  st.reference_histograms.push_back(sig.signature.histogram);
  st.warm.signatures.push_back(std::move(sig.signature));
  st.warm.extractors.push_back(std::move(sig.warmup.params.enc1));
  update_proximity_row(st.prox, st.warm.signatures, idx, st.fed.num_classes, st.cfg.similarity);

  bool tie = false;
  const int z = vote_cluster(st, idx, &tie);
  if (tie) spdlog::info("newcomer {} tied between clusters; joined cluster {}", idx, z);
  st.clustering.assignment.push_back(z);
  auto& cluster = st.clusters[static_cast<std::size_t>(z)];
  cluster.members.push_back(idx);
  refresh_data_weights(cluster, st.fed);
  st.events.push_back({EventKind::kNewcomer, st.round, idx, -1, z});
  ++st.newcomers_since_recluster;

  NewcomerResult out;
  out.client = idx;
  out.cluster = z;
  out.initial = cluster.model;
  return out;
}

ModelParams personalize(const RunState& st, std::size_t client, const ModelParams& start) {
  const auto& t = st.cfg.train;
  return local_sgd(st.cfg.arch, start, st.fed.clients.at(client), TrainBlocks::primary(), t.local_steps,
                   t.batch_size, t.lr, t.lambda_div,
                   derive_seed(st.cfg.seed, "personalize", client, static_cast<std::uint64_t>(st.round)))
      .params;
}

bool detect_shift(const LabelHistogram& now, const LabelHistogram& prev, std::int64_t n_new, int num_classes,
                  double fraction) {
  if (num_classes < 1) throw std::invalid_argument("class count must be positive");
  return wasserstein_1d(now, prev) > fraction / num_classes * static_cast<double>(n_new);
}

void replace_client_data(RunState& st, std::size_t idx, ClientDataset train, std::optional<ClientDataset> test) {
  train.client_id = static_cast<ClientId>(idx);
  train.validate();
  st.fed.clients.at(idx) = std::move(train);
  if (test && st.fed.has_tests()) {
    test->client_id = static_cast<ClientId>(idx);
    st.fed.tests.at(idx) = std::move(*test);
  }
}

bool handle_shift(RunState& st, std::size_t idx) {
  auto sig = collect_signature(st.fed.clients.at(idx), st.cfg.single_arch(), st.cfg.similarity, st.cfg.seed);
  st.warm.signatures[idx] = std::move(sig.signature);
  st.warm.extractors[idx] = std::move(sig.warmup.params.enc1);
  update_proximity_row(st.prox, st.warm.signatures, idx, st.fed.num_classes, st.cfg.similarity);
  const int old_z = st.clustering.assignment[idx];
  const int new_z = vote_cluster(st, idx);
  if (new_z == old_z) return false;
  auto& from = st.clusters[static_cast<std::size_t>(old_z)].members;
  from.erase(std::remove(from.begin(), from.end(), idx), from.end());
  refresh_data_weights(st.clusters[static_cast<std::size_t>(old_z)], st.fed);
  auto& to = st.clusters[static_cast<std::size_t>(new_z)].members;
  to.insert(std::upper_bound(to.begin(), to.end(), idx), idx);
  refresh_data_weights(st.clusters[static_cast<std::size_t>(new_z)], st.fed);
  st.clustering.assignment[idx] = new_z;
  st.events.push_back({EventKind::kReassigned, st.round, idx, old_z, new_z});
  return true;
}

std::vector<std::size_t> check_shifts(RunState& st) {
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < st.fed.size(); ++i) {
    const auto now = class_histogram(st.fed.clients[i]);
    auto& prev = st.reference_histograms.at(i);
    if (now.total() != prev.total()) {
      spdlog::debug("client {} changed size; shift check skipped", i);
    } else if (detect_shift(now, prev, now.total(), st.fed.num_classes, st.cfg.lifecycle.shift_fraction)) {
      const int z = st.clustering.assignment[i];
      st.events.push_back({EventKind::kShiftDetected, st.round, i, z, z});
      flagged.push_back(i);
      handle_shift(st, i);
    }
    prev = now;
  }
  return flagged;
}

bool maybe_recluster(RunState& st) {
  const auto threshold = std::max<int>(
      1, static_cast<int>(std::ceil(st.cfg.lifecycle.recluster_growth * static_cast<double>(st.clustered_population) - 1e-9)));
  if (st.newcomers_since_recluster < threshold) return false;
  st.newcomers_since_recluster = 0;
  st.clustered_population = st.fed.size();
  auto sweep = optimal_clustering(st.prox.a, st.cfg.clustering);
  const auto& fresh = sweep.best();
  if (canonical_labels(fresh.assignment) == canonical_labels(st.clustering.assignment)) return false;

  std::vector<ClusterState> rebuilt;
  const auto members = fresh.members();
  for (std::size_t z = 0; z < members.size(); ++z) {
    ClusterState s;
    s.cluster_id = static_cast<int>(z);
    s.members = members[z];
    refresh_data_weights(s, st.fed);
    const auto& proto = st.clusters[static_cast<std::size_t>(st.clustering.assignment[s.members.front()])].model;
    s.model.enc1.assign(proto.enc1.size(), 0.0);
    s.model.enc2.assign(proto.enc2.size(), 0.0);
    s.model.head.assign(proto.head.size(), 0.0);
    for (std::size_t m = 0; m < s.members.size(); ++m) {
      const auto& cur = st.clusters[static_cast<std::size_t>(st.clustering.assignment[s.members[m]])].model;
      const double w = s.data_weights[m];
      for (std::size_t k = 0; k < cur.enc1.size(); ++k) s.model.enc1[k] += w * cur.enc1[k];
      for (std::size_t k = 0; k < cur.enc2.size(); ++k) s.model.enc2[k] += w * cur.enc2[k];
      for (std::size_t k = 0; k < cur.head.size(); ++k) s.model.head[k] += w * cur.head[k];
    }
    rebuilt.push_back(std::move(s));
  }
  st.clusters = std::move(rebuilt);
  st.sweep = std::move(sweep);
  st.clustering = st.sweep.best();
  st.alpha_star = st.sweep.alpha_star();
  rebuild_cc_graph(st);
  st.events.push_back({EventKind::kRecluster, st.round, 0, -1, st.clustering.num_clusters});
  return true;
}

void run_with_lifecycle(RunState& st, int rounds) {
  const int period = st.cfg.lifecycle.check_period;
  int done = 0;
  while (done < rounds) {
    const int chunk = std::min(period - st.round % period, rounds - done);
    run_rounds(st, chunk);
    done += chunk;
    if (st.round % period == 0) check_shifts(st);
  }
}

}  // namespace feddag
