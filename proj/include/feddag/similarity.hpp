#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "feddag/datamodel.hpp"
#include "feddag/linalg.hpp"
#include "feddag/nnmodel.hpp"

namespace feddag {

/// What the server learns about a client before clustering.
struct ClientSignature {
  ClientId client_id = 0;
  SparseGradient sparse_grad;
  std::map<int, OrthonormalBasis> bases;  // present classes only
  LabelHistogram histogram;

  /// Upload size: sparse entries, basis vectors as f64, histogram as i64.
  std::size_t wire_bytes() const;
};

struct WarmupConfig {
  int rounds = 2;
  int steps_per_round = 10;
  double lr = 0.01;
  std::size_t batch_size = 10;
};

struct WarmupResult {
  ModelParams params;          // single-encoder model after warm-up
  std::vector<double> delta;   // flattened final − initial
  double loss_before = 0.0;    // full local data
  double loss_after = 0.0;
};

/// Local SGD on `d` alone starting from init_params(arch, init_seed); the
/// minibatch order comes from `batch_seed`.
WarmupResult local_warmup(const ClientDataset& d, const ArchSpec& arch, const WarmupConfig& cfg,
                          std::uint64_t init_seed, std::uint64_t batch_seed);

/// Keeps ⌈fraction·dim⌉ coordinates drawn uniformly without replacement.
SparseGradient sparsify(const std::vector<double>& delta, double fraction, std::uint64_t seed);

/// Pairwise angle between sparse updates in degrees, zero diagonal. Pairs
/// with a zero-norm side are set to 90 with a warning.
Matrix gradient_similarity_matrix(const std::vector<ClientSignature>& sigs);
double gradient_angle(const SparseGradient& a, const SparseGradient& b);

struct PrincipalVectorConfig {
  double p_fraction = 0.01;
  std::size_t p_min = 1;
  std::optional<std::size_t> subsample;
  SvdOptions svd;
};

std::map<int, OrthonormalBasis> class_principal_vectors(const ClientDataset& d,
                                                        const PrincipalVectorConfig& cfg,
                                                        std::uint64_t seed);

/// N×N×C array of per-class angles, row-major in (i, j, c).
struct AngleTensor {
  std::size_t n = 0;
  std::size_t classes = 0;
  std::vector<double> data;

  AngleTensor() = default;
  AngleTensor(std::size_t n_, std::size_t c_) : n(n_), classes(c_), data(n_ * n_ * c_, 0.0) {}
  double& at(std::size_t i, std::size_t j, std::size_t c) { return data[(i * n + j) * classes + c]; }
  double at(std::size_t i, std::size_t j, std::size_t c) const { return data[(i * n + j) * classes + c]; }
  /// Grows to n+1 clients keeping existing entries.
  void grow();
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Raw frequency weight for one class between two clients.
double class_weight_raw(std::int64_t n_i, std::int64_t n_j, double eps);

struct DataSimilarity {
  Matrix v;            // degrees
  AngleTensor vprime;  // degrees, in [0, 90]
  Range weight_range;  // of raw weights over triples where both hold the class
};

DataSimilarity data_similarity_matrix(const std::vector<ClientSignature>& sigs, int num_classes,
                                      double delta, double eps);

/// One entry of the data matrix under a fixed raw-weight range; the per-class
/// angles are written to `vprime_out` (length C) when given.
double data_similarity_pair(const ClientSignature& a, const ClientSignature& b, int num_classes,
                            double delta, double eps, const Range& weight_range,
                            std::vector<double>* vprime_out = nullptr);

struct FusionConfig {
  double lr = 2.0;
  int iters = 500;
  double init_w = 0.5;
};

struct FusionResult {
  std::vector<double> w;
  std::vector<double> losses;  // before the first step and after every step
};

/// Entropy of the row softmax of the fused matrix.
double fusion_loss(const Matrix& vhat, const Matrix& ghat, const std::vector<double>& w);
/// Analytic gradient of fusion_loss with respect to w.
std::vector<double> fusion_gradient(const Matrix& vhat, const Matrix& ghat, const std::vector<double>& w);

/// Projected gradient descent on the fusion weights; entries where
/// `trainable` is false stay fixed. An empty mask trains every weight.
FusionResult learn_fusion_weights(const Matrix& vhat, const Matrix& ghat, const FusionConfig& cfg,
                                  std::vector<double> w0 = {}, const std::vector<bool>& trainable = {});

/// A_ij = A_ji = w_i·ghat_ij + (1 − w_i)·vhat_ij for i < j, zero diagonal.
Matrix fuse_proximity(const Matrix& vhat, const Matrix& ghat, const std::vector<double>& w);

enum class ProximityMode { kFused, kData, kGradient };
ProximityMode proximity_mode_from_string(const std::string& s);
std::string to_string(ProximityMode m);

struct SimilarityConfig {
  WarmupConfig warmup;
  double sparsity = 0.01;
  bool shared_mask = true;
  PrincipalVectorConfig principal;
  double delta = 0.5;
  double eps = 1.0;
  ProximityMode mode = ProximityMode::kFused;
  FusionConfig fusion;
};

struct ProximityMatrix {
  Matrix a;
  Matrix g, v;         // raw angles in degrees
  Matrix ghat, vhat;   // normalized to [0, 1]
  AngleTensor vprime;
  std::vector<double> w;
  Range g_range, v_range, weight_range;
  ProximityMode mode = ProximityMode::kFused;

  std::size_t size() const { return a.rows(); }
};

ProximityMatrix build_proximity(const std::vector<ClientSignature>& sigs, int num_classes,
                                const SimilarityConfig& cfg);

/// Recomputes row/column `idx` against every other signature using the stored
/// normalization ranges, relearns only w[idx] and refreshes the affected
/// entries of A. With idx == size() the matrices grow by one client first.
/// Entries not involving `idx` are left untouched.
void update_proximity_row(ProximityMatrix& prox, const std::vector<ClientSignature>& sigs,
                          std::size_t idx, int num_classes, const SimilarityConfig& cfg);

struct SignatureResult {
  ClientSignature signature;
  WarmupResult warmup;
};

/// Warm-up plus signature extraction for one client. All clients share the
/// warm-up initialization and (by default) the sparsification mask drawn from
/// `run_seed`; minibatch order is per client.
SignatureResult collect_signature(const ClientDataset& d, const ArchSpec& single_arch,
                                  const SimilarityConfig& cfg, std::uint64_t run_seed);

}  // namespace feddag
