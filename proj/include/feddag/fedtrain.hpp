#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "feddag/ccgraph.hpp"
#include "feddag/clustering.hpp"
#include "feddag/datamodel.hpp"
#include "feddag/nnmodel.hpp"
#include "feddag/partitioner.hpp"
#include "feddag/similarity.hpp"

namespace feddag {

enum class CombineMode { kMean, kSum };
/// graph: learners train on their CC-graph sources; self: every cluster trains
/// its secondary encoder on its own data; off: the secondary encoder is frozen.
enum class SecondaryMode { kGraph, kSelf, kOff };
enum class ClusterOverride { kNone, kSingle, kGroundTruth };

CombineMode combine_mode_from_string(const std::string& s);
SecondaryMode secondary_mode_from_string(const std::string& s);
ClusterOverride cluster_override_from_string(const std::string& s);
std::string to_string(CombineMode m);
std::string to_string(SecondaryMode m);
std::string to_string(ClusterOverride m);

struct TrainConfig {
  int rounds = 50;
  double sample_rate = 0.2;
  int local_steps = 10;
  std::size_t batch_size = 10;
  double lr = 0.01;
  /// K primary-only rounds followed by one secondary-only round; 0 runs both
  /// phases every round.
  int schedule_k = 0;
  std::optional<double> lambda_div;
  /// Start every cluster's primary encoder from the seed instead of the
  /// averaged warm-up extractors.
  bool random_primary_init = false;
  CombineMode combine = CombineMode::kMean;
  SecondaryMode secondary = SecondaryMode::kGraph;
  ClusterOverride cluster_override = ClusterOverride::kNone;
  bool stratified = true;
  int eval_every = 5;
};

struct LifecycleConfig {
  int check_period = 10;          // rounds between shift checks
  double shift_fraction = 0.2;    // threshold numerator
  double recluster_growth = 0.2;  // newcomers, relative to the clustered population
};

struct FedDagConfig {
  std::uint64_t seed = 0;
  ArchSpec arch;
  SimilarityConfig similarity;
  ClusteringConfig clustering;
  int cc_k = 2;
  TrainConfig train;
  LifecycleConfig lifecycle;
  std::size_t workers = 1;

  /// Single-encoder twin of `arch` used for warm-up and signatures.
  ArchSpec single_arch() const;
  void validate() const;
};

struct ClusterState {
  int cluster_id = 0;
  std::vector<std::size_t> members;  // client indices
  ModelParams model;
  std::vector<double> data_weights;  // |D_i| / Σ|D_k| over members
};

/// Recomputes data_weights from the member dataset sizes.
void refresh_data_weights(ClusterState& s, const Federation& fed);

struct RoundMetrics {
  int round = 0;
  std::string phase;                  // both | primary | secondary
  std::vector<double> cluster_loss;   // NaN for clusters that did not train
  std::vector<double> client_accuracy;  // NaN when not evaluated this round
  double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::size_t sampled = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
};

enum class EventKind { kNewcomer, kShiftDetected, kReassigned, kRecluster };
std::string to_string(EventKind k);

struct LifecycleEvent {
  EventKind kind = EventKind::kNewcomer;
  int round = 0;
  std::size_t client = 0;
  int old_cluster = -1;
  int new_cluster = -1;
};

struct WarmupPhase {
  std::vector<ClientSignature> signatures;
  std::vector<std::vector<double>> extractors;  // warm enc1 per client
};

/// Everything the orchestrator and the lifecycle hooks share.
struct RunState {
  FedDagConfig cfg;
  Federation fed;
  WarmupPhase warm;
  ProximityMatrix prox;
  SweepResult sweep;
  Clustering clustering;
  double alpha_star = 1.0;
  CCGraph graph;
  std::vector<ClusterState> clusters;
  std::vector<RoundMetrics> history;
  std::vector<LifecycleEvent> events;
  std::vector<LabelHistogram> reference_histograms;  // last shift-check snapshot
  int round = 0;
  int newcomers_since_recluster = 0;
  std::size_t clustered_population = 0;

  int cluster_of(std::size_t client) const { return clustering.assignment.at(client); }
};

WarmupPhase run_warmup_phase(const Federation& fed, const FedDagConfig& cfg);

/// Primary encoders from the data-weighted mean of member warm extractors;
/// secondary encoder and head drawn from `seed` per cluster.
std::vector<ClusterState> init_cluster_models(const Clustering& clustering,
                                              const std::vector<std::vector<double>>& extractors,
                                              const Federation& fed, const ArchSpec& arch,
                                              std::uint64_t seed, bool random_primary);

/// Result of local training on one client.
struct LocalResult {
  ModelParams params;
  double mean_loss = 0.0;
};

/// E minibatch SGD steps on `blocks`; minibatch order from `batch_seed`.
LocalResult local_sgd(const ArchSpec& arch, ModelParams start, const ClientDataset& d, TrainBlocks blocks,
                      int steps, std::size_t batch_size, double lr, std::optional<double> lambda_div,
                      std::uint64_t batch_seed);

/// Aggregation weights |D_i| / Σ|D_k| over `clients`.
std::vector<double> sample_weights(const Federation& fed, const std::vector<std::size_t>& clients);

/// target += Σ_i w_i (local_i − target), coordinate by coordinate.
void apply_weighted_delta(std::vector<double>& target, const std::vector<const std::vector<double>*>& locals,
                          const std::vector<double>& w);

struct PhaseOutcome {
  double mean_loss = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
};

/// One primary phase for a cluster: sampled clients train enc1 and head from
/// the cluster model with enc2 frozen; the server folds in their deltas.
PhaseOutcome primary_phase_round(ClusterState& state, const std::vector<std::size_t>& sampled,
                                 const Federation& fed, const FedDagConfig& cfg, int round);

/// Secondary encoder shared by `learners`: mean or sum of their enc2 blocks.
std::vector<double> combine_secondary(const std::vector<const ClusterState*>& learners, CombineMode mode);

/// One secondary phase for `source`: its sampled clients train the combined
/// learner encoder on local data with the source's enc1 and head frozen; the
/// aggregated delta is returned (to be added to every learner's enc2).
std::vector<double> secondary_phase_delta(const ClusterState& source,
                                          const std::vector<const ClusterState*>& learners,
                                          const std::vector<std::size_t>& sampled, const Federation& fed,
                                          const FedDagConfig& cfg, int round, PhaseOutcome* outcome = nullptr);

/// Convenience wrapper applying secondary_phase_delta to `learners`.
void secondary_phase_round(const ClusterState& source, std::vector<ClusterState*>& learners,
                           const std::vector<std::size_t>& sampled, const Federation& fed,
                           const FedDagConfig& cfg, int round);

/// Number of clients sampled per round.
std::size_t sample_count(std::size_t n, double rate);

/// Sampled client indices per cluster for `round`.
std::vector<std::vector<std::size_t>> sample_clients(const std::vector<ClusterState>& clusters,
                                                     std::size_t n, const TrainConfig& cfg,
                                                     std::uint64_t seed, int round);

/// Which phases run in `round` under the K:1 schedule.
struct PhasePlan {
  bool primary = true;
  bool secondary = true;
};
PhasePlan phase_plan(int round, int schedule_k, bool secondary_enabled);

/// Recomputes the CC-graph from the current clustering, signatures and
/// per-class angles.
void rebuild_cc_graph(RunState& st);

/// Warm-up, proximity, clustering, CC-graph and model initialization.
RunState prepare_run(const Federation& fed, const FedDagConfig& cfg);

/// Runs `rounds` further training rounds, appending to the history.
void run_rounds(RunState& state, int rounds);

/// prepare_run followed by cfg.train.rounds rounds.
RunState train(const Federation& fed, const FedDagConfig& cfg);

double balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& predicted, int num_classes);
double client_accuracy(const ArchSpec& arch, const ModelParams& params, const ClientDataset& test);

struct Evaluation {
  std::vector<double> client_accuracy;   // NaN for clients without a test split
  std::vector<double> cluster_mean;
  double mean = std::numeric_limits<double>::quiet_NaN();
};

Evaluation evaluate(const RunState& state);

/// FedAvg reference on a single global single-encoder model.
struct BaselineRun {
  ArchSpec arch;
  ModelParams model;
  std::vector<RoundMetrics> history;
  std::vector<double> final_accuracy;
  double final_mean = std::numeric_limits<double>::quiet_NaN();
};

BaselineRun fedavg_reference(const Federation& fed, const FedDagConfig& cfg);

}  // namespace feddag
