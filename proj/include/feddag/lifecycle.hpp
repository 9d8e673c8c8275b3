#pragma once

#include <optional>
#include <vector>

#include "feddag/fedtrain.hpp"

namespace feddag {

/// Cluster for client `idx` from one clustering pass over the current
/// proximity at the stored threshold: the clients grouped with it vote with
/// their current cluster ids (ties to the lowest id). A client left alone
/// joins the cluster with the lowest mean proximity. `tie` reports a tied vote.
int vote_cluster(const RunState& st, std::size_t idx, bool* tie = nullptr);

struct NewcomerResult {
  std::size_t client = 0;
  int cluster = 0;
  ModelParams initial;  // the newcomer's starting model
};

/// Warm-up and signature for the newcomer, one new proximity row with only
/// its own fusion weight learned, then assignment by vote_cluster. Existing
/// weights, assignments and models are left untouched.
NewcomerResult integrate_newcomer(RunState& st, ClientDataset train, std::optional<ClientDataset> test = std::nullopt);

/// One round of local primary training for `client` starting from `start`.
ModelParams personalize(const RunState& st, std::size_t client, const ModelParams& start);

/// True iff the label-histogram distance exceeds (fraction / C)·n_new.
bool detect_shift(const LabelHistogram& now, const LabelHistogram& prev, std::int64_t n_new, int num_classes,
                  double fraction = 0.2);

/// Swaps in new local data for a client (test split optional).
void replace_client_data(RunState& st, std::size_t idx, ClientDataset train,
                         std::optional<ClientDataset> test = std::nullopt);

/// Local re-warm-up, refreshed proximity row, re-vote. Returns true when the
/// client moved to another cluster.
bool handle_shift(RunState& st, std::size_t idx);

/// Compares every client's histogram with the last snapshot, handles flagged
/// clients and refreshes the snapshot. Returns the flagged client indices.
std::vector<std::size_t> check_shifts(RunState& st);

/// Re-runs the threshold sweep once enough newcomers have joined. On a changed
/// partition the cluster models are rebuilt from the members' current models
/// and the CC-graph is recomputed. Returns true when the partition changed.
bool maybe_recluster(RunState& st);

/// Training rounds interleaved with shift checks every check_period rounds.
void run_with_lifecycle(RunState& st, int rounds);

}  // namespace feddag
