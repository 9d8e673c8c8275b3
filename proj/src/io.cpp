#include "feddag/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "feddag/nnmodel.hpp"

namespace feddag {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  auto os = open_out(path);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? "," : "") << num(m(i, j));
    os << '\n';
  }
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw std::runtime_error("'" + path.string() + "': bad number '" + cell + "' on row " +
                                 std::to_string(rows.size() + 1));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("'" + path.string() + "': ragged row " + std::to_string(rows.size() + 1));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("'" + path.string() + "' is empty");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<RoundMetrics>& history) {
  auto os = open_out(path);
  os << "round,phase,sampled,bytes_up,bytes_down,mean_loss,mean_accuracy\n";
  for (const auto& h : history) {
    double loss = 0.0;
    int n = 0;
    for (double l : h.cluster_loss)
      if (!std::isnan(l)) {
        loss += l;
        ++n;
      }
    os << h.round << ',' << h.phase << ',' << h.sampled << ',' << h.bytes_up << ',' << h.bytes_down << ','
       << (n ? num(loss / n) : "") << ',' << num(h.mean_accuracy) << '\n';
  }
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep) {
  auto os = open_out(path);
  os << "alpha,clusters,l1,l2,loss,selected\n";
  for (std::size_t i = 0; i < sweep.candidates.size(); ++i) {
    const auto& c = sweep.candidates[i];
    os << num(c.alpha) << ',' << c.num_clusters << ',' << num(c.l1) << ',' << num(c.l2) << ',' << num(c.loss) << ','
       << (i == sweep.selected ? 1 : 0) << '\n';
  }
}

void write_ccgraph_csv(const std::filesystem::path& path, const CCGraph& graph) {
  auto os = open_out(path);
  os << "learner,source,rank,score\n";
  for (std::size_t p = 0; p < graph.edges.size(); ++p)
    for (std::size_t r = 0; r < graph.edges[p].size(); ++r) {
      const int q = graph.edges[p][r];
      os << p << ',' << q << ',' << r << ',' << num(graph.scores(p, static_cast<std::size_t>(q))) << '\n';
    }
}

void write_events_csv(const std::filesystem::path& path, const std::vector<LifecycleEvent>& events) {
  auto os = open_out(path);
  os << "round,event,client,old_cluster,new_cluster\n";
  for (const auto& e : events)
    os << e.round << ',' << to_string(e.kind) << ',' << e.client << ',' << e.old_cluster << ',' << e.new_cluster
       << '\n';
}

void write_assignment_csv(const std::filesystem::path& path, const std::vector<int>& assignment,
                          const std::vector<int>& ground_truth) {
  auto os = open_out(path);
  os << "client,cluster" << (ground_truth.empty() ? "" : ",ground_truth") << '\n';
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    os << i << ',' << assignment[i];
    if (!ground_truth.empty()) os << ',' << (i < ground_truth.size() ? ground_truth[i] : -1);
    os << '\n';
  }
}

void write_cluster_checkpoints(const std::filesystem::path& dir, const ArchSpec& arch,
                               const std::vector<ClusterState>& clusters) {
  std::filesystem::create_directories(dir);
  for (const auto& c : clusters) {
    const auto path = dir / ("cluster_" + std::to_string(c.cluster_id) + ".ckpt");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    save_checkpoint(os, arch, c.model);
  }
}

}  // namespace feddag
