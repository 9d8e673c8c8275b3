#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "feddag/config.hpp"
#include "feddag/io.hpp"
#include "feddag/lifecycle.hpp"

namespace fs = std::filesystem;
using namespace feddag;

namespace {

// Bad input from the user: maps to exit status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("--config", c.config, "JSON run config");
  if (needs_config) opt->required();
  cmd->add_option("--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("--seed", c.seed, "seed override");
  cmd->add_option("--workers", c.workers, "worker threads");
}

RunConfig resolve(const Common& c) {
  RunConfig rc;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw ConfigError("config file '" + c.config + "' does not exist");
    rc = load_run_config(c.config);
  }
  if (c.seed) rc.feddag.seed = *c.seed;
  if (c.workers) {
    if (*c.workers < 1) throw ConfigError("--workers must be at least 1");
    rc.feddag.workers = *c.workers;
  }
  if (!c.out.empty()) rc.output_dir = c.out;
  return rc;
}

fs::path prepare_dir(const RunConfig& rc) {
  fs::path dir(rc.output_dir);
  fs::create_directories(dir);
  std::ofstream os(dir / "config.json");
  if (!os) throw std::runtime_error("cannot write into '" + dir.string() + "'");
  os << to_json(rc).dump(2) << '\n';
  return dir;
}

Federation federation_for(const RunConfig& rc) {
  auto fed = build_federation(rc.federation, rc.feddag.seed);
  fed.validate();
  const auto& arch = rc.feddag.arch;
  const auto f = fed.clients.front().feature_dim();
  if (arch.input_dim != f)
    throw ConfigError("config field 'arch.input_dim': is " + std::to_string(arch.input_dim) +
                      " but the federation has " + std::to_string(f) + " features");
  if (arch.num_classes != static_cast<std::size_t>(fed.num_classes))
    throw ConfigError("config field 'arch.num_classes': is " + std::to_string(arch.num_classes) +
                      " but the federation has " + std::to_string(fed.num_classes) + " classes");
  return fed;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_run(const Common& c) {
  const auto rc = resolve(c);
  const auto fed = federation_for(rc);
  const auto dir = prepare_dir(rc);
  const auto t0 = std::chrono::steady_clock::now();
  auto st = prepare_run(fed, rc.feddag);
  run_with_lifecycle(st, rc.feddag.train.rounds);
  const auto ev = evaluate(st);

  write_metrics_csv(dir / "metrics.csv", st.history);
  write_sweep_csv(dir / "sweep.csv", st.sweep);
  write_ccgraph_csv(dir / "ccgraph.csv", st.graph);
  write_matrix_csv(dir / "proximity.csv", st.prox.a);
  write_events_csv(dir / "events.csv", st.events);
  write_assignment_csv(dir / "assignment.csv", st.clustering.assignment, st.fed.ground_truth);
  write_cluster_checkpoints(dir / "checkpoints", rc.feddag.arch, st.clusters);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "run: accuracy=" << fmt6(ev.mean) << " clusters=" << st.clustering.num_clusters
            << " alpha=" << fmt6(st.alpha_star) << " rounds=" << st.round << " seconds=" << fmt6(secs)
            << " dir=" << dir.string() << '\n';
  return 0;
}

int cmd_baseline(const Common& c) {
  const auto rc = resolve(c);
  const auto fed = federation_for(rc);
  const auto dir = prepare_dir(rc);
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = fedavg_reference(fed, rc.feddag);
  write_metrics_csv(dir / "metrics.csv", run.history);
  ClusterState global;
  global.model = run.model;
  write_cluster_checkpoints(dir / "checkpoints", run.arch, {global});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "baseline: accuracy=" << fmt6(run.final_mean) << " rounds=" << rc.feddag.train.rounds
            << " seconds=" << fmt6(secs) << " dir=" << dir.string() << '\n';
  return 0;
}

int cmd_partition(const Common& c) {
  const auto rc = resolve(c);
  const auto fed = federation_for(rc);
  fs::create_directories(rc.output_dir);
  dump_federation(fed, rc.output_dir, rc.feddag.seed, to_json(rc).dump());
  std::cout << "partition: clients=" << fed.size() << " classes=" << fed.num_classes << " dir=" << rc.output_dir
            << '\n';
  return 0;
}

int cmd_similarity(const Common& c) {
  const auto rc = resolve(c);
  const auto fed = federation_for(rc);
  if (fed.size() < 2) throw ConfigError("similarity needs at least two clients");
  const auto dir = prepare_dir(rc);
  const auto warm = run_warmup_phase(fed, rc.feddag);
  const auto prox = build_proximity(warm.signatures, fed.num_classes, rc.feddag.similarity);
  write_matrix_csv(dir / "proximity.csv", prox.a);
  write_matrix_csv(dir / "gradient.csv", prox.g);
  write_matrix_csv(dir / "data.csv", prox.v);
  std::ofstream os(dir / "fusion_weights.csv");
  os << "client,weight\n";
  for (std::size_t i = 0; i < prox.w.size(); ++i) os << i << ',' << fmt6(prox.w[i]) << '\n';
  std::cout << "similarity: clients=" << fed.size() << " dir=" << dir.string() << '\n';
  return 0;
}

int cmd_cluster(const Common& c, const std::string& proximity) {
  const auto rc = resolve(c);
  if (!fs::exists(proximity)) throw UsageError("proximity file '" + proximity + "' does not exist");
  Matrix a;
  try {
    a = read_matrix_csv(proximity);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
  if (a.rows() != a.cols() || a.rows() < 2)
    throw UsageError("proximity file '" + proximity + "' must hold a square matrix with at least two rows");
  // Thresholds live on [0,1]; raw distances are rescaled over the off-diagonal.
  bool in_range = true;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t k = 0; k < a.cols(); ++k)
      if (r != k && (a(r, k) < 0.0 || a(r, k) > 1.0)) in_range = false;
  if (!in_range) {
    spdlog::info("proximity entries outside [0,1]; min-max normalizing");
    a = minmax_normalize(a, true);
  }
  const auto sweep = optimal_clustering(a, rc.feddag.clustering);
  fs::path dir(rc.output_dir);
  fs::create_directories(dir);
  write_sweep_csv(dir / "sweep.csv", sweep);
  write_assignment_csv(dir / "assignment.csv", sweep.best().assignment);
  std::cout << "cluster: clients=" << a.rows() << " clusters=" << sweep.best().num_clusters
            << " alpha=" << fmt6(sweep.alpha_star()) << " dir=" << dir.string() << '\n';
  return 0;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "metrics.csv")) throw UsageError("'" + run_dir + "' has no metrics.csv");
  std::ifstream is(dir / "metrics.csv");
  std::string line;
  std::getline(is, line);
  std::uint64_t up = 0, down = 0;
  std::string accuracy = "nan";
  int rounds = 0;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) continue;
    ++rounds;
    up += std::stoull(cells[3]);
    down += std::stoull(cells[4]);
    if (cells.size() >= 7 && !cells[6].empty()) accuracy = cells[6];
  }
  std::cout << "report: rounds=" << rounds << " accuracy=" << accuracy << " bytes_up=" << up
            << " bytes_down=" << down;
  if (fs::exists(dir / "sweep.csv")) {
    std::ifstream sw(dir / "sweep.csv");
    std::getline(sw, line);
    while (std::getline(sw, line))
      if (line.size() >= 2 && line.substr(line.size() - 2) == ",1") {
        std::stringstream ss(line);
        std::string alpha, z;
        std::getline(ss, alpha, ',');
        std::getline(ss, z, ',');
        std::cout << " clusters=" << z << " alpha=" << alpha;
      }
  }
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustered federated learning simulator"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  Common run_opts, base_opts, part_opts, sim_opts, clu_opts;
  std::string proximity, report_dir;
  auto* run = app.add_subcommand("run", "partition, train, evaluate and write a run directory");
  add_common(run, run_opts, true);
  auto* base = app.add_subcommand("baseline", "FedAvg reference on the same federation");
  add_common(base, base_opts, true);
  auto* part = app.add_subcommand("partition", "write the federation as per-client CSV files");
  add_common(part, part_opts, true);
  auto* sim = app.add_subcommand("similarity", "warm-up and proximity matrix only");
  add_common(sim, sim_opts, true);
  auto* clu = app.add_subcommand("cluster", "threshold sweep over a proximity CSV");
  add_common(clu, clu_opts, false);
  clu->add_option("--proximity", proximity, "square proximity matrix CSV")->required();
  auto* rep = app.add_subcommand("report", "summarize a run directory");
  rep->add_option("--run", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*run) return cmd_run(run_opts);
    if (*base) return cmd_baseline(base_opts);
    if (*part) return cmd_partition(part_opts);
    if (*sim) return cmd_similarity(sim_opts);
    if (*clu) return cmd_cluster(clu_opts, proximity);
    if (*rep) return cmd_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
