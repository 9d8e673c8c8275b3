#include "feddag/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "feddag/random.hpp"

namespace feddag {

using json = nlohmann::json;

namespace {

// Reads the fields of one JSON object, remembering which keys were consumed
// so that misspelled keys can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config field '" + name(key) + "': " + what);
  }

  std::string name(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }

  void get(const std::string& key, int& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }

  void get(const std::string& key, std::size_t& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) fail(key, "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void get(const std::string& key, std::uint64_t& out, bool) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
        fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void get(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }

  void get(const std::string& key, std::optional<double>& out) {
    if (const auto* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else if (v->is_number()) {
        out = v->get<double>();
      } else {
        fail(key, "expected a number or null");
      }
    }
  }

  void get(const std::string& key, std::optional<std::size_t>& out) {
    if (const auto* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else if (v->is_number_integer() && v->get<long long>() > 0) {
        out = v->get<std::size_t>();
      } else {
        fail(key, "expected a positive integer or null");
      }
    }
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array");
      try {
        out = v->get<std::vector<T>>();
      } catch (const json::exception&) {
        fail(key, "array has elements of the wrong type");
      }
    }
  }

  /// Parses a string field through `conv`, reporting conversion errors here.
  template <typename T, typename Conv>
  void get_enum(const std::string& key, T& out, Conv conv) {
    std::string s;
    get(key, s);
    if (!s.empty()) {
      try {
        out = conv(s);
      } catch (const std::invalid_argument& e) {
        fail(key, e.what());
      }
    }
  }

  std::optional<Section> sub(const std::string& key) {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    return Section(*v, name(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(k, "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

FederationKind federation_kind_from_string(const std::string& s) {
  if (s == "synthetic") return FederationKind::kSynthetic;
  if (s == "label_skew") return FederationKind::kLabelSkew;
  if (s == "lda") return FederationKind::kLda;
  if (s == "concept") return FederationKind::kConcept;
  if (s == "directory") return FederationKind::kDirectory;
  throw std::invalid_argument("unknown federation kind '" + s + "'");
}

std::string to_string(FederationKind k) {
  switch (k) {
    case FederationKind::kSynthetic: return "synthetic";
    case FederationKind::kLabelSkew: return "label_skew";
    case FederationKind::kLda: return "lda";
    case FederationKind::kConcept: return "concept";
    case FederationKind::kDirectory: return "directory";
  }
  return "synthetic";
}

void parse_federation(Section s, FederationSpec& f) {
  s.get_enum("kind", f.kind, federation_kind_from_string);
  auto& y = f.synthetic;
  s.get("num_clusters", y.num_clusters);
  s.get("clients_per_cluster", y.clients_per_cluster);
  s.get("num_classes", y.num_classes);
  s.get("feature_dim", y.feature_dim);
  s.get("samples_per_client", y.samples_per_client);
  s.get("test_samples_per_client", y.test_samples_per_client);
  s.get("separation", y.separation);
  s.get("noise", y.noise);
  s.get("classes_per_cluster", y.classes_per_cluster);
  s.get_list("class_subsets", y.class_subsets);
  std::vector<std::string> concepts;
  s.get_list("concepts", concepts);
  y.concepts.clear();
  for (const auto& c : concepts) {
    try {
      y.concepts.push_back(concept_from_string(c));
    } catch (const std::invalid_argument& e) {
      s.fail("concepts", e.what());
    }
  }
  s.get_list("class_weights", y.class_weights);
  s.get("modes_per_class", y.modes_per_class);
  s.get("within_alpha", y.within_alpha);
  f.num_classes = y.num_classes;
  s.get("source_csv", f.source_csv);
  s.get("pool_samples", f.pool_samples);
  s.get("pool_feature_dim", f.pool_feature_dim);
  s.get("pool_separation", f.pool_separation);
  s.get("num_clients", f.num_clients);
  s.get("rho", f.rho);
  s.get("alpha_q", f.alpha_q);
  std::vector<std::string> pool;
  s.get_list("concept_pool", pool);
  if (!pool.empty()) {
    f.concept_pool.clear();
    for (const auto& c : pool) {
      try {
        f.concept_pool.push_back(concept_from_string(c));
      } catch (const std::invalid_argument& e) {
        s.fail("concept_pool", e.what());
      }
    }
  }
  s.get("test_fraction", f.test_fraction);
  s.get("directory", f.directory);
  s.finish();

  if (y.num_clusters < 1) s.fail("num_clusters", "must be at least 1");
  if (y.clients_per_cluster < 1) s.fail("clients_per_cluster", "must be at least 1");
  if (y.num_classes < 2) s.fail("num_classes", "must be at least 2");
  if (y.feature_dim < 1) s.fail("feature_dim", "must be positive");
  if (y.samples_per_client < 1) s.fail("samples_per_client", "must be positive");
  if (y.test_samples_per_client < 0) s.fail("test_samples_per_client", "must be non-negative");
  if (!(y.noise >= 0.0)) s.fail("noise", "must be non-negative");
  if (!y.concepts.empty() && static_cast<int>(y.concepts.size()) != y.num_clusters)
    s.fail("concepts", "needs one entry per cluster");
  if (!y.class_subsets.empty() && static_cast<int>(y.class_subsets.size()) != y.num_clusters)
    s.fail("class_subsets", "needs one entry per cluster");
  for (const auto& sub : y.class_subsets)
    for (int c : sub)
      if (c < 0 || c >= y.num_classes) s.fail("class_subsets", "class id out of range");
  if (!y.class_weights.empty() && static_cast<int>(y.class_weights.size()) != y.num_clusters)
    s.fail("class_weights", "needs one entry per cluster");
  if (y.modes_per_class < 1) s.fail("modes_per_class", "must be at least 1");
  if (y.within_alpha < 0.0) s.fail("within_alpha", "must be non-negative");
  if (f.num_clients < 1) s.fail("num_clients", "must be at least 1");
  if (!(f.rho > 0.0 && f.rho <= 1.0)) s.fail("rho", "must lie in (0, 1]");
  if (!(f.alpha_q > 0.0)) s.fail("alpha_q", "must be positive");
  if (!(f.test_fraction > 0.0 && f.test_fraction < 1.0)) s.fail("test_fraction", "must lie in (0, 1)");
  if (f.pool_samples < 1) s.fail("pool_samples", "must be positive");
  if (f.kind == FederationKind::kDirectory && f.directory.empty()) s.fail("directory", "required for kind 'directory'");
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig rc;
  auto& c = rc.feddag;
  Section root(j, "");
  root.get("seed", c.seed, true);
  root.get("output_dir", rc.output_dir);
  root.get("workers", c.workers);
  if (auto s = root.sub("federation")) parse_federation(*s, rc.federation);
  if (auto s = root.sub("arch")) {
    s->get("input_dim", c.arch.input_dim);
    s->get_list("hidden", c.arch.hidden);
    s->get("feature_dim", c.arch.feature_dim);
    s->get("num_classes", c.arch.num_classes);
    s->get_enum("activation", c.arch.activation, activation_from_string);
    s->get("dual", c.arch.dual);
    s->finish();
  }
  if (auto s = root.sub("similarity")) {
    auto& m = c.similarity;
    s->get("warmup_rounds", m.warmup.rounds);
    s->get("warmup_steps", m.warmup.steps_per_round);
    s->get("warmup_lr", m.warmup.lr);
    s->get("warmup_batch", m.warmup.batch_size);
    s->get("sparsity", m.sparsity);
    s->get("shared_mask", m.shared_mask);
    s->get("p_fraction", m.principal.p_fraction);
    s->get("p_min", m.principal.p_min);
    s->get("subsample", m.principal.subsample);
    s->get_enum("svd", m.principal.svd.method, [](const std::string& v) {
      if (v == "jacobi") return SvdMethod::kJacobi;
      if (v == "randomized") return SvdMethod::kRandomized;
      throw std::invalid_argument("expected 'jacobi' or 'randomized'");
    });
    s->get("delta", m.delta);
    s->get("eps", m.eps);
    s->get_enum("mode", m.mode, proximity_mode_from_string);
    s->get("fusion_lr", m.fusion.lr);
    s->get("fusion_iters", m.fusion.iters);
    s->get("fusion_init", m.fusion.init_w);
    s->finish();
    if (!(m.principal.p_fraction > 0.0 && m.principal.p_fraction <= 1.0)) s->fail("p_fraction", "must lie in (0, 1]");
    if (m.principal.p_min < 1) s->fail("p_min", "must be at least 1");
    if (!(m.eps > 0.0)) s->fail("eps", "must be positive");
    if (m.fusion.iters < 0) s->fail("fusion_iters", "must be non-negative");
    if (!(m.fusion.init_w >= 0.0 && m.fusion.init_w <= 1.0)) s->fail("fusion_init", "must lie in [0, 1]");
    if (m.warmup.steps_per_round < 1) s->fail("warmup_steps", "must be at least 1");
    if (m.warmup.batch_size < 1) s->fail("warmup_batch", "must be at least 1");
  }
  if (auto s = root.sub("clustering")) {
    auto& m = c.clustering;
    s->get_list("alpha_grid", m.alpha_grid);
    s->get("gamma", m.gamma);
    s->get("tau", m.tau);
    s->get("lambda", m.lambda);
    s->get_enum("linkage", m.linkage, linkage_from_string);
    s->get("rel_tol", m.rel_tol);
    s->get("exclude_singletons", m.exclude_singletons);
    s->finish();
    if (m.rel_tol < 0.0) s->fail("rel_tol", "must be non-negative");
  }
  if (auto s = root.sub("ccgraph")) {
    s->get("k", c.cc_k);
    s->finish();
  }
  if (auto s = root.sub("train")) {
    auto& t = c.train;
    s->get("rounds", t.rounds);
    s->get("sample_rate", t.sample_rate);
    s->get("local_steps", t.local_steps);
    s->get("batch_size", t.batch_size);
    s->get("lr", t.lr);
    s->get("schedule_k", t.schedule_k);
    s->get("lambda_div", t.lambda_div);
    s->get("random_primary_init", t.random_primary_init);
    s->get_enum("combine", t.combine, combine_mode_from_string);
    s->get_enum("secondary", t.secondary, secondary_mode_from_string);
    s->get_enum("cluster_override", t.cluster_override, cluster_override_from_string);
    s->get("stratified", t.stratified);
    s->get("eval_every", t.eval_every);
    s->finish();
  }
  if (auto s = root.sub("lifecycle")) {
    s->get("check_period", c.lifecycle.check_period);
    s->get("shift_fraction", c.lifecycle.shift_fraction);
    s->get("recluster_growth", c.lifecycle.recluster_growth);
    s->finish();
  }
  root.finish();

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config field ") + e.what());
  }
  if (rc.federation.kind == FederationKind::kSynthetic) {
    const auto& y = rc.federation.synthetic;
    if (c.arch.input_dim != static_cast<std::size_t>(y.feature_dim))
      throw ConfigError("config field 'arch.input_dim': must equal federation.feature_dim");
    if (c.arch.num_classes != static_cast<std::size_t>(y.num_classes))
      throw ConfigError("config field 'arch.num_classes': must equal federation.num_classes");
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& rc) {
  const auto& c = rc.feddag;
  const auto& f = rc.federation;
  const auto& y = f.synthetic;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = rc.output_dir;
  j["workers"] = c.workers;
  std::vector<std::string> concepts, pool;
  for (auto k : y.concepts) concepts.push_back(to_string(k));
  for (auto k : f.concept_pool) pool.push_back(to_string(k));
  j["federation"] = {
      {"kind", to_string(f.kind)},
      {"num_clusters", y.num_clusters},
      {"clients_per_cluster", y.clients_per_cluster},
      {"num_classes", y.num_classes},
      {"feature_dim", y.feature_dim},
      {"samples_per_client", y.samples_per_client},
      {"test_samples_per_client", y.test_samples_per_client},
      {"separation", y.separation},
      {"noise", y.noise},
      {"classes_per_cluster", y.classes_per_cluster},
      {"class_subsets", y.class_subsets},
      {"concepts", concepts},
      {"class_weights", y.class_weights},
      {"modes_per_class", y.modes_per_class},
      {"within_alpha", y.within_alpha},
      {"source_csv", f.source_csv},
      {"pool_samples", f.pool_samples},
      {"pool_feature_dim", f.pool_feature_dim},
      {"pool_separation", f.pool_separation},
      {"num_clients", f.num_clients},
      {"rho", f.rho},
      {"alpha_q", f.alpha_q},
      {"concept_pool", pool},
      {"test_fraction", f.test_fraction},
      {"directory", f.directory},
  };
  j["arch"] = {{"input_dim", c.arch.input_dim},     {"hidden", c.arch.hidden},
               {"feature_dim", c.arch.feature_dim}, {"num_classes", c.arch.num_classes},
               {"activation", to_string(c.arch.activation)}, {"dual", c.arch.dual}};
  const auto& m = c.similarity;
  j["similarity"] = {
      {"warmup_rounds", m.warmup.rounds},
      {"warmup_steps", m.warmup.steps_per_round},
      {"warmup_lr", m.warmup.lr},
      {"warmup_batch", m.warmup.batch_size},
      {"sparsity", m.sparsity},
      {"shared_mask", m.shared_mask},
      {"p_fraction", m.principal.p_fraction},
      {"p_min", m.principal.p_min},
      {"subsample", m.principal.subsample ? json(*m.principal.subsample) : json(nullptr)},
      {"svd", m.principal.svd.method == SvdMethod::kJacobi ? "jacobi" : "randomized"},
      {"delta", m.delta},
      {"eps", m.eps},
      {"mode", to_string(m.mode)},
      {"fusion_lr", m.fusion.lr},
      {"fusion_iters", m.fusion.iters},
      {"fusion_init", m.fusion.init_w},
  };
  const auto& k = c.clustering;
  j["clustering"] = {{"alpha_grid", k.alpha_grid}, {"gamma", k.gamma},   {"tau", k.tau},
                     {"lambda", k.lambda},         {"linkage", to_string(k.linkage)},
                     {"rel_tol", k.rel_tol},       {"exclude_singletons", k.exclude_singletons}};
  j["ccgraph"] = {{"k", c.cc_k}};
  const auto& t = c.train;
  j["train"] = {
      {"rounds", t.rounds},
      {"sample_rate", t.sample_rate},
      {"local_steps", t.local_steps},
      {"batch_size", t.batch_size},
      {"lr", t.lr},
      {"schedule_k", t.schedule_k},
      {"lambda_div", t.lambda_div ? json(*t.lambda_div) : json(nullptr)},
      {"random_primary_init", t.random_primary_init},
      {"combine", to_string(t.combine)},
      {"secondary", to_string(t.secondary)},
      {"cluster_override", to_string(t.cluster_override)},
      {"stratified", t.stratified},
      {"eval_every", t.eval_every},
  };
  j["lifecycle"] = {{"check_period", c.lifecycle.check_period},
                    {"shift_fraction", c.lifecycle.shift_fraction},
                    {"recluster_growth", c.lifecycle.recluster_growth}};
  return j;
}

Federation build_federation(const FederationSpec& f, std::uint64_t seed) {
  if (f.kind == FederationKind::kSynthetic) {
    SyntheticSpec y = f.synthetic;
    y.seed = derive_seed(seed, "federation");
    return gen_synthetic_clusters(y);
  }
  if (f.kind == FederationKind::kDirectory) return load_federation(f.directory);

  ClientDataset pool;
  if (!f.source_csv.empty()) {
    pool = load_dataset_csv(f.source_csv, f.num_classes);
  } else {
    SyntheticSpec y;
    y.num_clusters = 1;
    y.clients_per_cluster = 1;
    y.num_classes = f.num_classes;
    y.feature_dim = f.pool_feature_dim;
    y.samples_per_client = f.pool_samples;
    y.test_samples_per_client = 0;
    y.separation = f.pool_separation;
    y.classes_per_cluster = 0;
    y.seed = derive_seed(seed, "pool");
    pool = gen_synthetic_clusters(y).clients.front();
  }
  Federation fed;
  switch (f.kind) {
    case FederationKind::kLabelSkew:
      fed = partition_label_skew_quantity(pool, f.num_clients, f.rho, f.alpha_q, derive_seed(seed, "partition"));
      break;
    case FederationKind::kLda:
    case FederationKind::kConcept:
      fed = partition_lda(pool, f.num_clients, f.alpha_q, derive_seed(seed, "partition"));
      break;
    default: break;
  }
  fed = split_train_test(fed, f.test_fraction, derive_seed(seed, "split"));
  if (f.kind == FederationKind::kConcept) assign_concepts(fed, f.concept_pool, derive_seed(seed, "concepts"));
  return fed;
}

}  // namespace feddag
