#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "feddag/linalg.hpp"

namespace feddag {

using ClientId = std::uint32_t;

/// A client's local samples: one feature row per sample plus its label.
struct ClientDataset {
  ClientId client_id = 0;
  Matrix features;               // n_samples × F
  std::vector<int> labels;       // each in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return features.cols(); }

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  /// Row indices of the samples labelled `c`, ascending.
  std::vector<std::size_t> class_indices(int c) const;
  /// The per-class slice as a |D_c| × F matrix (empty when the class is absent).
  Matrix class_slice(int c) const;
  /// Copy restricted to the given rows, in the given order.
  ClientDataset subset(const std::vector<std::size_t>& rows) const;
};

/// Per-class sample counts.
struct LabelHistogram {
  std::vector<std::int64_t> counts;

  std::size_t num_classes() const { return counts.size(); }
  std::int64_t total() const;
  friend bool operator==(const LabelHistogram&, const LabelHistogram&) = default;
};

LabelHistogram class_histogram(const ClientDataset& d);

/// 1-Wasserstein distance between two histograms on raw counts with classes
/// placed at the integer points 0..C-1.
double wasserstein_1d(const LabelHistogram& h1, const LabelHistogram& h2);

/// A coordinate subset of a dense update vector.
struct SparseGradient {
  std::size_t dim = 0;
  std::vector<std::uint32_t> indices;  // strictly increasing, < dim
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  void validate() const;
  double norm() const;
  friend bool operator==(const SparseGradient&, const SparseGradient&) = default;
};

/// Inner product treating coordinates absent from either side as zero.
double sparse_dot(const SparseGradient& a, const SparseGradient& b);

void write_sparse_gradient(std::ostream& os, const SparseGradient& g);
SparseGradient read_sparse_gradient(std::istream& is);

/// Bytes a sparse update occupies on the wire: a u32 index and an f64 value per entry.
std::size_t wire_bytes(const SparseGradient& g);

/// Flat parameter blocks of the prediction model. `enc2` is empty for
/// single-encoder models.
struct ModelParams {
  std::vector<double> enc1;
  std::vector<double> enc2;
  std::vector<double> head;

  std::size_t size() const { return enc1.size() + enc2.size() + head.size(); }
  bool all_finite() const;
  /// enc1 ++ enc2 ++ head
  std::vector<double> flatten() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Loads header-less CSV rows of F feature columns followed by an integer
/// label column. Labels must lie in [0, num_classes).
ClientDataset load_dataset_csv(const std::filesystem::path& path, int num_classes,
                               ClientId client_id = 0);
void save_dataset_csv(const std::filesystem::path& path, const ClientDataset& d);

}  // namespace feddag
