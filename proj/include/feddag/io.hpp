#pragma once

#include <filesystem>
#include <vector>

#include "feddag/fedtrain.hpp"
#include "feddag/linalg.hpp"

namespace feddag {

/// Plain comma-separated matrix, no header, %.6g values.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
/// Throws std::runtime_error on a missing, empty or ragged file.
Matrix read_matrix_csv(const std::filesystem::path& path);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<RoundMetrics>& history);
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep);
void write_ccgraph_csv(const std::filesystem::path& path, const CCGraph& graph);
void write_events_csv(const std::filesystem::path& path, const std::vector<LifecycleEvent>& events);
void write_assignment_csv(const std::filesystem::path& path, const std::vector<int>& assignment,
                          const std::vector<int>& ground_truth = {});
/// One checkpoint file per cluster: cluster_<z>.ckpt.
void write_cluster_checkpoints(const std::filesystem::path& dir, const ArchSpec& arch,
                               const std::vector<ClusterState>& clusters);

}  // namespace feddag
