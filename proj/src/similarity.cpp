#include "feddag/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "feddag/random.hpp"

namespace feddag {

std::size_t ClientSignature::wire_bytes() const {
  std::size_t b = feddag::wire_bytes(sparse_grad);
  for (const auto& [c, basis] : bases) b += basis.dim() * basis.p() * sizeof(double);
  b += histogram.counts.size() * sizeof(std::int64_t);
  return b;
}

WarmupResult local_warmup(const ClientDataset& d, const ArchSpec& arch, const WarmupConfig& cfg,
                          std::uint64_t init_seed, std::uint64_t batch_seed) {
  if (cfg.rounds < 1) throw std::invalid_argument("warm-up needs at least one round");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  d.validate();
  WarmupResult out;
  out.params = init_params(arch, init_seed);
  const ModelParams start = out.params;
  const auto blocks = TrainBlocks::primary();
  out.loss_before = loss_value(arch, out.params, d.features, d.labels, blocks);

  Rng rng(batch_seed);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = order.size();
  const std::size_t bs = std::min(cfg.batch_size, d.size());
  const int steps = cfg.rounds * cfg.steps_per_round;
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
    const auto lg = loss_and_grads(arch, out.params, batch.features, batch.labels, blocks);
    sgd_step(out.params, lg.grads, cfg.lr);
  }
  if (!out.params.all_finite()) throw DivergedError("warm-up produced non-finite parameters");
  out.loss_after = loss_value(arch, out.params, d.features, d.labels, blocks);
  const auto a = start.flatten();
  out.delta = out.params.flatten();
  for (std::size_t k = 0; k < a.size(); ++k) out.delta[k] -= a[k];
  return out;
}

SparseGradient sparsify(const std::vector<double>& delta, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("sparsity fraction must lie in (0, 1]");
  const std::size_t dim = delta.size();
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(dim) - 1e-9));
  k = std::min(std::max<std::size_t>(k, dim > 0 ? 1 : 0), dim);
  SparseGradient g;
  g.dim = dim;
  Rng rng(seed);
  for (auto i : sample_without_replacement(rng, dim, k)) {
    g.indices.push_back(static_cast<std::uint32_t>(i));
    g.values.push_back(delta[i]);
  }
  return g;
}

double gradient_angle(const SparseGradient& a, const SparseGradient& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    spdlog::warn("zero-norm sparse update; pair angle set to 90 degrees");
    return 90.0;
  }
  const double c = std::clamp(sparse_dot(a, b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

Matrix gradient_similarity_matrix(const std::vector<ClientSignature>& sigs) {
  if (sigs.size() < 2) throw std::invalid_argument("need at least two signatures");
  const std::size_t n = sigs.size();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      g(i, j) = g(j, i) = gradient_angle(sigs[i].sparse_grad, sigs[j].sparse_grad);
  return g;
}

std::map<int, OrthonormalBasis> class_principal_vectors(const ClientDataset& d,
                                                        const PrincipalVectorConfig& cfg,
                                                        std::uint64_t seed) {
  if (!(cfg.p_fraction > 0.0 && cfg.p_fraction <= 1.0))
    throw std::invalid_argument("p_fraction must lie in (0, 1]");
  std::map<int, OrthonormalBasis> out;
  for (int c = 0; c < d.num_classes; ++c) {
    auto idx = d.class_indices(c);
    if (idx.empty()) continue;
    if (cfg.subsample && *cfg.subsample < idx.size()) {
      Rng rng(derive_seed(seed, "subsample", static_cast<std::uint64_t>(c)));
      const auto keep = sample_without_replacement(rng, idx.size(), std::max<std::size_t>(*cfg.subsample, 1));
      std::vector<std::size_t> sub;
      for (auto k : keep) sub.push_back(idx[k]);
      idx = std::move(sub);
    }
    const Matrix slice = d.subset(idx).features.transpose();  // F × n_c
    const std::size_t used = idx.size();
    auto p = static_cast<std::size_t>(std::ceil(cfg.p_fraction * static_cast<double>(used) - 1e-9));
    p = std::max(p, cfg.p_min);
    p = std::min({p, slice.rows(), slice.cols()});
    SvdOptions opts = cfg.svd;
    opts.seed = derive_seed(seed, "svd", static_cast<std::uint64_t>(c));
    out.emplace(c, truncated_svd(slice, std::max<std::size_t>(p, 1), opts));
  }
  return out;
}

void AngleTensor::grow() {
  AngleTensor next(n + 1, classes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < classes; ++c) next.at(i, j, c) = at(i, j, c);
  *this = std::move(next);
}

double class_weight_raw(std::int64_t n_i, std::int64_t n_j, double eps) {
  const double a = std::log(static_cast<double>(n_i) + eps);
  const double b = std::log(static_cast<double>(n_j) + eps);
  return std::max(a, b) / std::min(a, b);
}

namespace {

double scale_weight(double raw, double delta, const Range& r) {
  if (!(r.hi > r.lo)) return 1.0;
  const double t = std::clamp((raw - r.lo) / (r.hi - r.lo), 0.0, 1.0);
  return 1.0 - delta + 2.0 * delta * t;
}

double scale_unit(double x, const Range& r) {
  if (!(r.hi > r.lo)) return 0.0;
  return std::clamp((x - r.lo) / (r.hi - r.lo), 0.0, 1.0);
}

Range off_diagonal_range(const Matrix& m) {
  Range r{0.0, 0.0};
  bool first = true;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (i == j) continue;
      if (first) {
        r = {m(i, j), m(i, j)};
        first = false;
      }
      r.lo = std::min(r.lo, m(i, j));
      r.hi = std::max(r.hi, m(i, j));
    }
  return r;
}

Matrix normalize_with(const Matrix& m, const Range& r) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j) out(i, j) = scale_unit(m(i, j), r);
  return out;
}

}  // namespace

double data_similarity_pair(const ClientSignature& a, const ClientSignature& b, int num_classes,
                            double delta, double eps, const Range& weight_range,
                            std::vector<double>* vprime_out) {
  if (vprime_out) vprime_out->assign(static_cast<std::size_t>(num_classes), 0.0);
  double acc = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const auto ia = a.bases.find(c);
    const auto ib = b.bases.find(c);
    const bool ha = ia != a.bases.end(), hb = ib != b.bases.end();
    double angle = 0.0, weight = 1.0;
    if (ha && hb) {
      angle = principal_angle_min(ia->second, ib->second);
      const auto uc = static_cast<std::size_t>(c);
      weight = scale_weight(class_weight_raw(a.histogram.counts[uc], b.histogram.counts[uc], eps), delta,
                            weight_range);
    } else if (ha != hb) {
      angle = 90.0;
    }
    if (vprime_out) (*vprime_out)[static_cast<std::size_t>(c)] = angle;
    acc += angle * weight;
  }
  return acc / static_cast<double>(num_classes);
}

DataSimilarity data_similarity_matrix(const std::vector<ClientSignature>& sigs, int num_classes,
                                      double delta, double eps) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  const std::size_t n = sigs.size();
  DataSimilarity out;
  bool first = true;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (const auto& [c, basis] : sigs[i].bases) {
        if (!sigs[j].bases.count(c)) continue;
        const auto uc = static_cast<std::size_t>(c);
        const double w = class_weight_raw(sigs[i].histogram.counts[uc], sigs[j].histogram.counts[uc], eps);
        if (first) {
          out.weight_range = {w, w};
          first = false;
        }
        out.weight_range.lo = std::min(out.weight_range.lo, w);
        out.weight_range.hi = std::max(out.weight_range.hi, w);
      }
  out.v = Matrix(n, n);
  out.vprime = AngleTensor(n, static_cast<std::size_t>(num_classes));
  std::vector<double> vp;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      out.v(i, j) = out.v(j, i) = data_similarity_pair(sigs[i], sigs[j], num_classes, delta, eps,
                                                       out.weight_range, &vp);
      for (std::size_t c = 0; c < vp.size(); ++c) out.vprime.at(i, j, c) = out.vprime.at(j, i, c) = vp[c];
    }
  return out;
}

Matrix fuse_proximity(const Matrix& vhat, const Matrix& ghat, const std::vector<double>& w) {
  const std::size_t n = vhat.rows();
  if (ghat.rows() != n || ghat.cols() != n || vhat.cols() != n || w.size() != n)
    throw std::invalid_argument("fusion inputs have inconsistent shapes");
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      a(i, j) = a(j, i) = w[i] * ghat(i, j) + (1.0 - w[i]) * vhat(i, j);
  return a;
}

double fusion_loss(const Matrix& vhat, const Matrix& ghat, const std::vector<double>& w) {
  return row_softmax_entropy(fuse_proximity(vhat, ghat, w));
}

std::vector<double> fusion_gradient(const Matrix& vhat, const Matrix& ghat, const std::vector<double>& w) {
  const Matrix a = fuse_proximity(vhat, ghat, w);
  const std::size_t n = a.rows();
  // dh(i, k) = ∂H_i/∂A_ik = −p_ik (ln p_ik + H_i)
  Matrix dh(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = a.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    double h = 0.0;
    for (double v : row) h -= std::exp(v - lse) * (v - lse);
    for (std::size_t k = 0; k < n; ++k) {
      const double lp = row[k] - lse;
      dh(i, k) = -std::exp(lp) * (lp + h);
    }
  }
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      g[i] += (ghat(i, j) - vhat(i, j)) * (dh(i, j) + dh(j, i));
  for (auto& x : g) x /= static_cast<double>(n);
  return g;
}

FusionResult learn_fusion_weights(const Matrix& vhat, const Matrix& ghat, const FusionConfig& cfg,
                                  std::vector<double> w0, const std::vector<bool>& trainable) {
  const std::size_t n = vhat.rows();
  if (w0.empty()) w0.assign(n, cfg.init_w);
  if (w0.size() != n) throw std::invalid_argument("initial weight vector has the wrong length");
  if (!trainable.empty() && trainable.size() != n) throw std::invalid_argument("trainable mask has the wrong length");
  FusionResult out;
  out.w = std::move(w0);
  out.losses.push_back(fusion_loss(vhat, ghat, out.w));
  for (int it = 0; it < cfg.iters; ++it) {
    const auto g = fusion_gradient(vhat, ghat, out.w);
    for (std::size_t i = 0; i < n; ++i)
      if (trainable.empty() || trainable[i]) out.w[i] = std::clamp(out.w[i] - cfg.lr * g[i], 0.0, 1.0);
    out.losses.push_back(fusion_loss(vhat, ghat, out.w));
  }
  return out;
}

ProximityMode proximity_mode_from_string(const std::string& s) {
  if (s == "fused") return ProximityMode::kFused;
  if (s == "data") return ProximityMode::kData;
  if (s == "gradient") return ProximityMode::kGradient;
  throw std::invalid_argument("unknown proximity mode '" + s + "'");
}

std::string to_string(ProximityMode m) {
  switch (m) {
    case ProximityMode::kFused: return "fused";
    case ProximityMode::kData: return "data";
    case ProximityMode::kGradient: return "gradient";
  }
  return "fused";
}

ProximityMatrix build_proximity(const std::vector<ClientSignature>& sigs, int num_classes,
                                const SimilarityConfig& cfg) {
  ProximityMatrix p;
  p.mode = cfg.mode;
  p.g = gradient_similarity_matrix(sigs);
  auto ds = data_similarity_matrix(sigs, num_classes, cfg.delta, cfg.eps);
  p.v = std::move(ds.v);
  p.vprime = std::move(ds.vprime);
  p.weight_range = ds.weight_range;
  p.g_range = off_diagonal_range(p.g);
  p.v_range = off_diagonal_range(p.v);
  p.ghat = normalize_with(p.g, p.g_range);
  p.vhat = normalize_with(p.v, p.v_range);
  switch (cfg.mode) {
    case ProximityMode::kFused: p.w = learn_fusion_weights(p.vhat, p.ghat, cfg.fusion).w; break;
    case ProximityMode::kData: p.w.assign(sigs.size(), 0.0); break;
    case ProximityMode::kGradient: p.w.assign(sigs.size(), 1.0); break;
  }
  p.a = fuse_proximity(p.vhat, p.ghat, p.w);
  return p;
}

namespace {

Matrix grow_matrix(const Matrix& m) {
  Matrix out(m.rows() + 1, m.cols() + 1);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return out;
}

}  // namespace

void update_proximity_row(ProximityMatrix& prox, const std::vector<ClientSignature>& sigs,
                          std::size_t idx, int num_classes, const SimilarityConfig& cfg) {
  if (idx > prox.size()) throw std::invalid_argument("row index beyond the proximity matrix");
  if (idx == prox.size()) {
    for (Matrix* m : {&prox.a, &prox.g, &prox.v, &prox.ghat, &prox.vhat}) *m = grow_matrix(*m);
    prox.vprime.grow();
    const double w0 = prox.mode == ProximityMode::kFused ? cfg.fusion.init_w
                      : prox.mode == ProximityMode::kData ? 0.0 : 1.0;
    prox.w.push_back(w0);
  }
  const std::size_t n = prox.size();
  if (sigs.size() != n) throw std::invalid_argument("signature count differs from the proximity size");
  std::vector<double> vp;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == idx) continue;
    const double g = gradient_angle(sigs[idx].sparse_grad, sigs[j].sparse_grad);
    const double v = data_similarity_pair(sigs[idx], sigs[j], num_classes, cfg.delta, cfg.eps,
                                          prox.weight_range, &vp);
    prox.g(idx, j) = prox.g(j, idx) = g;
    prox.v(idx, j) = prox.v(j, idx) = v;
    prox.ghat(idx, j) = prox.ghat(j, idx) = scale_unit(g, prox.g_range);
    prox.vhat(idx, j) = prox.vhat(j, idx) = scale_unit(v, prox.v_range);
    for (std::size_t c = 0; c < vp.size(); ++c) prox.vprime.at(idx, j, c) = prox.vprime.at(j, idx, c) = vp[c];
  }
  if (prox.mode == ProximityMode::kFused) {
    std::vector<bool> mask(n, false);
    mask[idx] = true;
    std::vector<double> w0 = prox.w;
    w0[idx] = cfg.fusion.init_w;
    prox.w = learn_fusion_weights(prox.vhat, prox.ghat, cfg.fusion, std::move(w0), mask).w;
  }
  prox.a = fuse_proximity(prox.vhat, prox.ghat, prox.w);
}

SignatureResult collect_signature(const ClientDataset& d, const ArchSpec& single_arch,
                                  const SimilarityConfig& cfg, std::uint64_t run_seed) {
  if (single_arch.dual) throw std::invalid_argument("warm-up runs on a single-encoder model");
  SignatureResult out;
  out.warmup = local_warmup(d, single_arch, cfg.warmup, derive_seed(run_seed, "warmup-init"),
                            derive_seed(run_seed, "warmup-batches", d.client_id));
  const auto mask_seed = cfg.shared_mask ? derive_seed(run_seed, "mask")
                                         : derive_seed(run_seed, "mask", d.client_id);
  auto& sig = out.signature;
  sig.client_id = d.client_id;
  sig.sparse_grad = sparsify(out.warmup.delta, cfg.sparsity, mask_seed);
  sig.bases = class_principal_vectors(d, cfg.principal, derive_seed(run_seed, "principal", d.client_id));
  sig.histogram = class_histogram(d);
  return out;
}

}  // namespace feddag
