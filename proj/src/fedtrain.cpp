#include "feddag/fedtrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "feddag/parallel.hpp"
#include "feddag/random.hpp"

namespace feddag {

CombineMode combine_mode_from_string(const std::string& s) {
  if (s == "mean") return CombineMode::kMean;
  if (s == "sum") return CombineMode::kSum;
  throw std::invalid_argument("unknown combine mode '" + s + "'");
}

SecondaryMode secondary_mode_from_string(const std::string& s) {
  if (s == "graph") return SecondaryMode::kGraph;
  if (s == "self") return SecondaryMode::kSelf;
  if (s == "off") return SecondaryMode::kOff;
  throw std::invalid_argument("unknown secondary mode '" + s + "'");
}

ClusterOverride cluster_override_from_string(const std::string& s) {
  if (s == "none") return ClusterOverride::kNone;
  if (s == "single") return ClusterOverride::kSingle;
  if (s == "ground_truth") return ClusterOverride::kGroundTruth;
  throw std::invalid_argument("unknown cluster override '" + s + "'");
}

std::string to_string(CombineMode m) { return m == CombineMode::kMean ? "mean" : "sum"; }

std::string to_string(SecondaryMode m) {
  switch (m) {
    case SecondaryMode::kGraph: return "graph";
    case SecondaryMode::kSelf: return "self";
    case SecondaryMode::kOff: return "off";
  }
  return "graph";
}

std::string to_string(ClusterOverride m) {
  switch (m) {
    case ClusterOverride::kNone: return "none";
    case ClusterOverride::kSingle: return "single";
    case ClusterOverride::kGroundTruth: return "ground_truth";
  }
  return "none";
}

std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::kNewcomer: return "newcomer";
    case EventKind::kShiftDetected: return "shift_detected";
    case EventKind::kReassigned: return "reassigned";
    case EventKind::kRecluster: return "recluster";
  }
  return "newcomer";
}

ArchSpec FedDagConfig::single_arch() const {
  ArchSpec a = arch;
  a.dual = false;
  return a;
}

void FedDagConfig::validate() const {
  arch.validate();
  const auto& t = train;
  if (t.rounds < 0) throw std::invalid_argument("train.rounds must be non-negative");
  if (!(t.sample_rate > 0.0 && t.sample_rate <= 1.0)) throw std::invalid_argument("train.sample_rate must lie in (0, 1]");
  if (t.local_steps < 1) throw std::invalid_argument("train.local_steps must be at least 1");
  if (t.batch_size < 1) throw std::invalid_argument("train.batch_size must be at least 1");
  if (!(t.lr >= 0.0)) throw std::invalid_argument("train.lr must be non-negative");
  if (t.schedule_k < 0) throw std::invalid_argument("train.schedule_k must be non-negative");
  if (t.eval_every < 1) throw std::invalid_argument("train.eval_every must be at least 1");
  if (t.secondary != SecondaryMode::kOff && !arch.dual)
    throw std::invalid_argument("train.secondary requires a dual-encoder architecture");
  if (cc_k < 1) throw std::invalid_argument("cc_k must be at least 1");
  if (similarity.warmup.rounds < 1) throw std::invalid_argument("similarity.warmup_rounds must be at least 1");
  if (!(similarity.sparsity > 0.0 && similarity.sparsity <= 1.0))
    throw std::invalid_argument("similarity.sparsity must lie in (0, 1]");
  if (!(similarity.delta > 0.0 && similarity.delta < 1.0)) throw std::invalid_argument("similarity.delta must lie in (0, 1)");
  if (clustering.alpha_grid.empty()) throw std::invalid_argument("clustering.alpha_grid must not be empty");
  for (double a : clustering.alpha_grid)
    if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("clustering.alpha_grid entries must lie in (0, 1]");
  if (!(clustering.tau > 0.0)) throw std::invalid_argument("clustering.tau must be positive");
  if (lifecycle.check_period < 1) throw std::invalid_argument("lifecycle.check_period must be at least 1");
}

void refresh_data_weights(ClusterState& s, const Federation& fed) {
  s.data_weights = sample_weights(fed, s.members);
}

std::vector<double> sample_weights(const Federation& fed, const std::vector<std::size_t>& clients) {
  double total = 0.0;
  for (auto i : clients) total += static_cast<double>(fed.clients.at(i).size());
  std::vector<double> w;
  for (auto i : clients) w.push_back(static_cast<double>(fed.clients[i].size()) / total);
  return w;
}

void apply_weighted_delta(std::vector<double>& target, const std::vector<const std::vector<double>*>& locals,
                          const std::vector<double>& w) {
  for (std::size_t k = 0; k < target.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < locals.size(); ++i) acc += w[i] * ((*locals[i])[k] - target[k]);
    target[k] += acc;
  }
}

WarmupPhase run_warmup_phase(const Federation& fed, const FedDagConfig& cfg) {
  const ArchSpec single = cfg.single_arch();
  std::vector<SignatureResult> res(fed.size());
  parallel_for(fed.size(), cfg.workers, [&](std::size_t i) {
    res[i] = collect_signature(fed.clients[i], single, cfg.similarity, cfg.seed);
  });
  WarmupPhase out;
  for (auto& r : res) {
    out.signatures.push_back(std::move(r.signature));
    out.extractors.push_back(std::move(r.warmup.params.enc1));
  }
  return out;
}

std::vector<ClusterState> init_cluster_models(const Clustering& clustering,
                                              const std::vector<std::vector<double>>& extractors,
                                              const Federation& fed, const ArchSpec& arch,
                                              std::uint64_t seed, bool random_primary) {
  std::vector<ClusterState> out;
  const auto members = clustering.members();
  for (std::size_t z = 0; z < members.size(); ++z) {
    ClusterState s;
    s.cluster_id = static_cast<int>(z);
    s.members = members[z];
    refresh_data_weights(s, fed);
    s.model = init_params(arch, derive_seed(seed, "cluster-model", z));
    if (!random_primary) {
      std::vector<double> enc(arch.encoder_size(), 0.0);
      for (std::size_t m = 0; m < s.members.size(); ++m) {
        const auto& e = extractors.at(s.members[m]);
        if (e.size() != enc.size()) throw std::invalid_argument("warm extractor does not match the primary encoder");
        for (std::size_t k = 0; k < enc.size(); ++k) enc[k] += s.data_weights[m] * e[k];
      }
      s.model.enc1 = std::move(enc);
    }
    out.push_back(std::move(s));
  }
  return out;
}

LocalResult local_sgd(const ArchSpec& arch, ModelParams start, const ClientDataset& d, TrainBlocks blocks,
                      int steps, std::size_t batch_size, double lr, std::optional<double> lambda_div,
                      std::uint64_t batch_seed) {
  LocalResult out;
  out.params = std::move(start);
  Rng rng(batch_seed);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = order.size();
  const std::size_t bs = std::min(batch_size, d.size());
  double total = 0.0;
  for (int s = 0; s < steps; ++s) {
    std::vector<std::size_t> rows;
    while (rows.size() < bs) {
      if (pos == order.size()) {
        stable_shuffle(order, rng);
        pos = 0;
      }
      rows.push_back(order[pos++]);
    }
    const ClientDataset batch = d.subset(rows);
    const auto lg = loss_and_grads(arch, out.params, batch.features, batch.labels, blocks, lambda_div);
    total += lg.loss;
    sgd_step(out.params, lg.grads, lr);
  }
  if (!out.params.all_finite()) throw DivergedError("client " + std::to_string(d.client_id) + " diverged");
  out.mean_loss = steps > 0 ? total / steps : 0.0;
  return out;
}

namespace {

std::uint64_t bytes_of(std::size_t params) { return static_cast<std::uint64_t>(params) * sizeof(double); }

}  // namespace

PhaseOutcome primary_phase_round(ClusterState& state, const std::vector<std::size_t>& sampled,
                                 const Federation& fed, const FedDagConfig& cfg, int round) {
  PhaseOutcome out;
  if (sampled.empty()) {
    spdlog::warn("cluster {} has no sampled clients in round {}", state.cluster_id, round);
    return out;
  }
  const auto& t = cfg.train;
  std::vector<LocalResult> local(sampled.size());
  parallel_for(sampled.size(), cfg.workers, [&](std::size_t k) {
    const auto i = sampled[k];
    local[k] = local_sgd(cfg.arch, state.model, fed.clients[i], TrainBlocks::primary(), t.local_steps,
                         t.batch_size, t.lr, t.lambda_div, derive_seed(cfg.seed, "local", static_cast<std::uint64_t>(round), i, 0));
  });
  const auto w = sample_weights(fed, sampled);
  std::vector<const std::vector<double>*> enc1, head;
  double loss = 0.0;
  for (const auto& r : local) {
    enc1.push_back(&r.params.enc1);
    head.push_back(&r.params.head);
    loss += r.mean_loss;
  }
  apply_weighted_delta(state.model.enc1, enc1, w);
  apply_weighted_delta(state.model.head, head, w);
  out.mean_loss = loss / static_cast<double>(local.size());
  out.bytes_down = sampled.size() * bytes_of(cfg.arch.param_count());
  out.bytes_up = sampled.size() * bytes_of(state.model.enc1.size() + state.model.head.size());
  return out;
}

std::vector<double> combine_secondary(const std::vector<const ClusterState*>& learners, CombineMode mode) {
  if (learners.empty()) throw std::invalid_argument("no learner clusters to combine");
  std::vector<double> out(learners.front()->model.enc2.size(), 0.0);
  for (const auto* l : learners)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += l->model.enc2[k];
  if (mode == CombineMode::kMean)
    for (auto& x : out) x /= static_cast<double>(learners.size());
  return out;
}

std::vector<double> secondary_phase_delta(const ClusterState& source,
                                          const std::vector<const ClusterState*>& learners,
                                          const std::vector<std::size_t>& sampled, const Federation& fed,
                                          const FedDagConfig& cfg, int round, PhaseOutcome* outcome) {
  if (learners.empty() || sampled.empty()) return {};
  const auto& t = cfg.train;
  ModelParams start;
  start.enc1 = source.model.enc1;
  start.enc2 = combine_secondary(learners, t.combine);
  start.head = source.model.head;
  std::vector<LocalResult> local(sampled.size());
  parallel_for(sampled.size(), cfg.workers, [&](std::size_t k) {
    const auto i = sampled[k];
    local[k] = local_sgd(cfg.arch, start, fed.clients[i], TrainBlocks::secondary(), t.local_steps, t.batch_size,
                         t.lr, std::nullopt, derive_seed(cfg.seed, "local", static_cast<std::uint64_t>(round), i, 1));
  });
  const auto w = sample_weights(fed, sampled);
  std::vector<double> delta(start.enc2.size(), 0.0);
  for (std::size_t k = 0; k < delta.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < local.size(); ++i) acc += w[i] * (local[i].params.enc2[k] - start.enc2[k]);
    delta[k] = acc;
  }
  if (outcome) {
    double loss = 0.0;
    for (const auto& r : local) loss += r.mean_loss;
    outcome->mean_loss = loss / static_cast<double>(local.size());
    outcome->bytes_down = sampled.size() * bytes_of(start.enc2.size());
    outcome->bytes_up = sampled.size() * bytes_of(start.enc2.size());
  }
  return delta;
}

void secondary_phase_round(const ClusterState& source, std::vector<ClusterState*>& learners,
                           const std::vector<std::size_t>& sampled, const Federation& fed,
                           const FedDagConfig& cfg, int round) {
  std::vector<const ClusterState*> view(learners.begin(), learners.end());
  const auto delta = secondary_phase_delta(source, view, sampled, fed, cfg, round);
  if (delta.empty()) return;
  for (auto* l : learners)
    for (std::size_t k = 0; k < delta.size(); ++k) l->model.enc2[k] += delta[k];
}

std::size_t sample_count(std::size_t n, double rate) {
  return std::max<std::size_t>(static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9)), 1);
}

std::vector<std::vector<std::size_t>> sample_clients(const std::vector<ClusterState>& clusters,
                                                     std::size_t n, const TrainConfig& cfg,
                                                     std::uint64_t seed, int round) {
  const std::size_t m = std::min(sample_count(n, cfg.sample_rate), n);
  std::vector<std::vector<std::size_t>> out(clusters.size());
  const auto r = static_cast<std::uint64_t>(round);
  if (cfg.stratified) {
    std::vector<double> sizes;
    for (const auto& c : clusters) sizes.push_back(static_cast<double>(c.members.size()));
    const auto alloc = apportion(sizes, m);
    for (std::size_t z = 0; z < clusters.size(); ++z) {
      const auto& mem = clusters[z].members;
      Rng rng(derive_seed(seed, "sample", r, z));
      for (auto k : sample_without_replacement(rng, mem.size(), std::min(alloc[z], mem.size())))
        out[z].push_back(mem[k]);
    }
    return out;
  }
  std::vector<int> owner(n, -1);
  for (std::size_t z = 0; z < clusters.size(); ++z)
    for (auto i : clusters[z].members) owner.at(i) = static_cast<int>(z);
  Rng rng(derive_seed(seed, "sample", r));
  for (auto i : sample_without_replacement(rng, n, m))
    if (owner[i] >= 0) out[static_cast<std::size_t>(owner[i])].push_back(i);
  return out;
}

PhasePlan phase_plan(int round, int schedule_k, bool secondary_enabled) {
  if (!secondary_enabled) return {true, false};
  if (schedule_k == 0) return {true, true};
  if ((round + 1) % (schedule_k + 1) == 0) return {false, true};
  return {true, false};
}

void rebuild_cc_graph(RunState& st) {
  std::vector<LabelHistogram> hists;
  for (const auto& s : st.warm.signatures) hists.push_back(s.histogram);
  if (st.clustering.num_clusters >= 2) {
    const auto ds = demand_supply(st.clustering, hists);
    const auto align = alignment_scores(st.prox.vprime, st.clustering, hists);
    st.graph = build_cc_graph(ds, align, st.cfg.cc_k);
  } else {
    st.graph = CCGraph{};
    st.graph.num_clusters = st.clustering.num_clusters;
    st.graph.scores = Matrix(1, 1, -std::numeric_limits<double>::infinity());
    st.graph.edges.assign(1, {});
  }
}

RunState prepare_run(const Federation& fed_in, const FedDagConfig& cfg) {
  cfg.validate();
  fed_in.validate();
  RunState st;
  st.cfg = cfg;
  st.fed = fed_in;
  for (std::size_t i = 0; i < st.fed.size(); ++i) {
    st.fed.clients[i].client_id = static_cast<ClientId>(i);
    if (st.fed.has_tests()) st.fed.tests[i].client_id = static_cast<ClientId>(i);
  }
  const std::size_t n = st.fed.size();
  st.warm = run_warmup_phase(st.fed, cfg);

  if (n >= 2) {
    st.prox = build_proximity(st.warm.signatures, st.fed.num_classes, cfg.similarity);
    st.sweep = optimal_clustering(st.prox.a, cfg.clustering);
    st.clustering = st.sweep.best();
    st.alpha_star = st.sweep.alpha_star();
  } else {
    st.clustering.assignment = {0};
    st.clustering.num_clusters = 1;
  }
  switch (cfg.train.cluster_override) {
    case ClusterOverride::kNone: break;
    case ClusterOverride::kSingle:
      st.clustering.assignment.assign(n, 0);
      st.clustering.num_clusters = 1;
      break;
    case ClusterOverride::kGroundTruth: {
      if (st.fed.ground_truth.size() != n) throw std::invalid_argument("federation carries no ground truth");
      st.clustering.assignment = canonical_labels(st.fed.ground_truth);
      st.clustering.num_clusters = *std::max_element(st.clustering.assignment.begin(), st.clustering.assignment.end()) + 1;
      break;
    }
  }
  if (cfg.train.cluster_override != ClusterOverride::kNone && n >= 2) {
    const auto parts = clustering_loss(st.prox.a, st.clustering.assignment, cfg.clustering.gamma,
                                       cfg.clustering.tau, cfg.clustering.lambda);
    st.clustering.l1 = parts.l1;
    st.clustering.l2 = parts.l2;
    st.clustering.loss = parts.loss;
  }

  rebuild_cc_graph(st);
  st.clusters = init_cluster_models(st.clustering, st.warm.extractors, st.fed, cfg.arch, cfg.seed,
                                    cfg.train.random_primary_init);
  for (const auto& s : st.warm.signatures) st.reference_histograms.push_back(s.histogram);
  st.clustered_population = n;
  return st;
}

namespace {

std::vector<int> learners_for(const RunState& st, int source) {
  if (st.cfg.train.secondary == SecondaryMode::kSelf) return {source};
  return st.graph.learners_of(source);
}

}  // namespace

void run_rounds(RunState& st, int rounds) {
  const auto& cfg = st.cfg;
  const std::size_t n = st.fed.size();
  for (int step = 0; step < rounds; ++step) {
    const int r = st.round;
    const auto plan = phase_plan(r, cfg.train.schedule_k, cfg.train.secondary != SecondaryMode::kOff);
    const auto sampled = sample_clients(st.clusters, n, cfg.train, cfg.seed, r);
    const std::vector<ClusterState> snapshot = st.clusters;

    RoundMetrics m;
    m.round = r;
    m.phase = plan.primary && plan.secondary ? "both" : plan.primary ? "primary" : "secondary";
    m.cluster_loss.assign(st.clusters.size(), std::numeric_limits<double>::quiet_NaN());
    for (const auto& s : sampled) m.sampled += s.size();

    if (plan.primary) {
      for (std::size_t z = 0; z < st.clusters.size(); ++z) {
        if (sampled[z].empty()) continue;
        const auto o = primary_phase_round(st.clusters[z], sampled[z], st.fed, cfg, r);
        m.cluster_loss[z] = o.mean_loss;
        m.bytes_up += o.bytes_up;
        m.bytes_down += o.bytes_down;
      }
    }
    if (plan.secondary) {
      for (std::size_t q = 0; q < snapshot.size(); ++q) {
        if (sampled[q].empty()) continue;
        const auto learner_ids = learners_for(st, static_cast<int>(q));
        if (learner_ids.empty()) continue;
        std::vector<const ClusterState*> learners;
        for (int p : learner_ids) learners.push_back(&snapshot[static_cast<std::size_t>(p)]);
        PhaseOutcome o;
        const auto delta = secondary_phase_delta(snapshot[q], learners, sampled[q], st.fed, cfg, r, &o);
        for (int p : learner_ids) {
          auto& enc2 = st.clusters[static_cast<std::size_t>(p)].model.enc2;
          for (std::size_t k = 0; k < delta.size(); ++k) enc2[k] += delta[k];
        }
        if (!plan.primary) {
          m.cluster_loss[q] = o.mean_loss;
          o.bytes_down += sampled[q].size() * bytes_of(cfg.arch.param_count());
        }
        m.bytes_up += o.bytes_up;
        m.bytes_down += o.bytes_down;
      }
    }
    ++st.round;
    if (st.round % cfg.train.eval_every == 0 || step + 1 == rounds) {
      if (st.fed.has_tests()) {
        const auto ev = evaluate(st);
        m.client_accuracy = ev.client_accuracy;
        m.mean_accuracy = ev.mean;
      }
    }
    st.history.push_back(std::move(m));
  }
}

RunState train(const Federation& fed, const FedDagConfig& cfg) {
  RunState st = prepare_run(fed, cfg);
  run_rounds(st, cfg.train.rounds);
  return st;
}

double balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("prediction count mismatch");
  std::vector<double> hit(static_cast<std::size_t>(num_classes), 0.0), tot(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const auto c = static_cast<std::size_t>(truth[k]);
    tot[c] += 1.0;
    if (predicted[k] == truth[k]) hit[c] += 1.0;
  }
  double acc = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < tot.size(); ++c) {
    if (tot[c] == 0.0) continue;
    acc += hit[c] / tot[c];
    ++present;
  }
  return present ? acc / present : std::numeric_limits<double>::quiet_NaN();
}

double client_accuracy(const ArchSpec& arch, const ModelParams& params, const ClientDataset& test) {
  if (test.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Matrix logits = forward_batch(arch, params, test.features);
  std::vector<int> pred;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    pred.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return balanced_accuracy(test.labels, pred, test.num_classes);
}

Evaluation evaluate(const RunState& st) {
  Evaluation ev;
  const std::size_t n = st.fed.size();
  ev.client_accuracy.assign(n, std::numeric_limits<double>::quiet_NaN());
  if (!st.fed.has_tests()) return ev;
  parallel_for(n, st.cfg.workers, [&](std::size_t i) {
    const auto& test = st.fed.tests[i];
    if (test.size() == 0) return;
    const auto& model = st.clusters[static_cast<std::size_t>(st.cluster_of(i))].model;
    ev.client_accuracy[i] = client_accuracy(st.cfg.arch, model, test);
  });
  ev.cluster_mean.assign(st.clusters.size(), 0.0);
  std::vector<int> counted(st.clusters.size(), 0);
  double total = 0.0;
  int k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(ev.client_accuracy[i])) {
      spdlog::warn("client {} has an empty test split and is excluded", i);
      continue;
    }
    const auto z = static_cast<std::size_t>(st.cluster_of(i));
    ev.cluster_mean[z] += ev.client_accuracy[i];
    ++counted[z];
    total += ev.client_accuracy[i];
    ++k;
  }
  for (std::size_t z = 0; z < counted.size(); ++z)
    ev.cluster_mean[z] = counted[z] ? ev.cluster_mean[z] / counted[z] : std::numeric_limits<double>::quiet_NaN();
  if (k) ev.mean = total / k;
  return ev;
}

BaselineRun fedavg_reference(const Federation& fed_in, const FedDagConfig& cfg) {
  fed_in.validate();
  Federation fed = fed_in;
  for (std::size_t i = 0; i < fed.size(); ++i) fed.clients[i].client_id = static_cast<ClientId>(i);
  BaselineRun out;
  out.arch = cfg.single_arch();
  out.arch.validate();
  out.model = init_params(out.arch, derive_seed(cfg.seed, "cluster-model", 0));
  const auto& t = cfg.train;
  const std::size_t n = fed.size();
  const std::size_t m = std::min(sample_count(n, t.sample_rate), n);
  auto eval = [&] {
    std::vector<double> acc(n, std::numeric_limits<double>::quiet_NaN());
    if (!fed.has_tests()) return acc;
    parallel_for(n, cfg.workers, [&](std::size_t i) { acc[i] = client_accuracy(out.arch, out.model, fed.tests[i]); });
    return acc;
  };
  for (int r = 0; r < t.rounds; ++r) {
    Rng rng(derive_seed(cfg.seed, "sample", static_cast<std::uint64_t>(r), 0));
    const auto sampled = sample_without_replacement(rng, n, m);
    std::vector<LocalResult> local(sampled.size());
    parallel_for(sampled.size(), cfg.workers, [&](std::size_t k) {
      const auto i = sampled[k];
      local[k] = local_sgd(out.arch, out.model, fed.clients[i], TrainBlocks::primary(), t.local_steps, t.batch_size,
                           t.lr, std::nullopt, derive_seed(cfg.seed, "local", static_cast<std::uint64_t>(r), i, 0));
    });
    const auto w = sample_weights(fed, sampled);
    std::vector<const std::vector<double>*> enc, head;
    double loss = 0.0;
    for (const auto& l : local) {
      enc.push_back(&l.params.enc1);
      head.push_back(&l.params.head);
      loss += l.mean_loss;
    }
    apply_weighted_delta(out.model.enc1, enc, w);
    apply_weighted_delta(out.model.head, head, w);

    RoundMetrics rm;
    rm.round = r;
    rm.phase = "primary";
    rm.cluster_loss = {loss / static_cast<double>(local.size())};
    rm.sampled = sampled.size();
    rm.bytes_down = sampled.size() * bytes_of(out.arch.param_count());
    rm.bytes_up = sampled.size() * bytes_of(out.arch.param_count());
    if ((r + 1) % t.eval_every == 0 || r + 1 == t.rounds) {
      rm.client_accuracy = eval();
      double s = 0.0;
      int k = 0;
      for (double a : rm.client_accuracy)
        if (!std::isnan(a)) {
          s += a;
          ++k;
        }
      if (k) rm.mean_accuracy = s / k;
    }
    out.history.push_back(std::move(rm));
  }
  out.final_accuracy = eval();
  double s = 0.0;
  int k = 0;
  for (double a : out.final_accuracy)
    if (!std::isnan(a)) {
      s += a;
      ++k;
    }
  if (k) out.final_mean = s / k;
  return out;
}

}  // namespace feddag
