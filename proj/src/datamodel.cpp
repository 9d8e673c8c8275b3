#include "feddag/datamodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace feddag {

void ClientDataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("client dataset must hold at least one sample");
  if (features.rows() != labels.size())
    throw std::invalid_argument("feature rows and labels differ in length");
  if (num_classes < 1) throw std::invalid_argument("class count must be positive");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw std::invalid_argument("label out of range");
  if (!features.all_finite()) throw std::invalid_argument("non-finite feature value");
}

std::vector<std::size_t> ClientDataset::class_indices(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == c) out.push_back(i);
  return out;
}

Matrix ClientDataset::class_slice(int c) const {
  const auto idx = class_indices(c);
  Matrix m(idx.size(), features.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = features.row(idx[r]);
    std::copy(src.begin(), src.end(), m.row(r).begin());
  }
  return m;
}

ClientDataset ClientDataset::subset(const std::vector<std::size_t>& rows) const {
  ClientDataset out;
  out.client_id = client_id;
  out.num_classes = num_classes;
  out.features = Matrix(rows.size(), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = features.row(rows[r]);
    std::copy(src.begin(), src.end(), out.features.row(r).begin());
    out.labels.push_back(labels[rows[r]]);
  }
  return out;
}

std::int64_t LabelHistogram::total() const {
  std::int64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

LabelHistogram class_histogram(const ClientDataset& d) {
  LabelHistogram h;
  h.counts.assign(static_cast<std::size_t>(d.num_classes), 0);
  for (int y : d.labels) ++h.counts[static_cast<std::size_t>(y)];
  return h;
}

double wasserstein_1d(const LabelHistogram& h1, const LabelHistogram& h2) {
  if (h1.counts.size() != h2.counts.size())
    throw std::invalid_argument("wasserstein_1d: histogram lengths differ");
  double w = 0.0;
  std::int64_t cum1 = 0, cum2 = 0;
  for (std::size_t c = 0; c + 1 < h1.counts.size(); ++c) {
    cum1 += h1.counts[c];
    cum2 += h2.counts[c];
    w += static_cast<double>(std::llabs(cum1 - cum2));
  }
  return w;
}

void SparseGradient::validate() const {
  if (indices.size() != values.size())
    throw std::invalid_argument("sparse gradient index/value length mismatch");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= dim) throw std::invalid_argument("sparse index out of range");
    if (k > 0 && indices[k] <= indices[k - 1])
      throw std::invalid_argument("sparse indices must be strictly increasing");
  }
}

double SparseGradient::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

double sparse_dot(const SparseGradient& a, const SparseGradient& b) {
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.indices.size() && j < b.indices.size()) {
    if (a.indices[i] == b.indices[j]) {
      s += a.values[i] * b.values[j];
      ++i;
      ++j;
    } else if (a.indices[i] < b.indices[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated binary stream");
  return v;
}

constexpr std::uint32_t kSparseMagic = 0x46445347;  // "GSDF"

}  // namespace

void write_sparse_gradient(std::ostream& os, const SparseGradient& g) {
  put<std::uint32_t>(os, kSparseMagic);
  put<std::uint64_t>(os, g.dim);
  put<std::uint64_t>(os, g.indices.size());
  for (auto i : g.indices) put<std::uint32_t>(os, i);
  for (double v : g.values) put<double>(os, v);
}

SparseGradient read_sparse_gradient(std::istream& is) {
  if (get<std::uint32_t>(is) != kSparseMagic) throw std::runtime_error("not a sparse gradient stream");
  SparseGradient g;
  g.dim = get<std::uint64_t>(is);
  const auto n = get<std::uint64_t>(is);
  g.indices.resize(n);
  g.values.resize(n);
  for (auto& i : g.indices) i = get<std::uint32_t>(is);
  for (auto& v : g.values) v = get<double>(is);
  g.validate();
  return g;
}

std::size_t wire_bytes(const SparseGradient& g) {
  return g.nnz() * (sizeof(std::uint32_t) + sizeof(double));
}

bool ModelParams::all_finite() const {
  auto fin = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return fin(enc1) && fin(enc2) && fin(head);
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  out.insert(out.end(), enc1.begin(), enc1.end());
  out.insert(out.end(), enc2.begin(), enc2.end());
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

ClientDataset load_dataset_csv(const std::filesystem::path& path, int num_classes,
                               ClientId client_id) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
  std::vector<double> feats;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": expected features followed by a label");
    if (width == 0) width = cells.size() - 1;
    if (cells.size() - 1 != width)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": inconsistent column count");
    for (std::size_t k = 0; k < width; ++k) {
      double v = 0.0;
      const auto& s = cells[k];
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size())
        throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                    ": bad feature value '" + s + "'");
      feats.push_back(v);
    }
    int y = 0;
    const auto& s = cells.back();
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), y);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": bad label '" +
                                  s + "'");
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": label " +
                                  std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    labels.push_back(y);
  }
  ClientDataset d;
  d.client_id = client_id;
  d.num_classes = num_classes;
  d.features = Matrix(labels.size(), width, std::move(feats));
  d.labels = std::move(labels);
  d.validate();
  return d;
}

void save_dataset_csv(const std::filesystem::path& path, const ClientDataset& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
  char buf[64];
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (double v : d.features.row(r)) {
      // Shortest round-trip representation keeps dumps lossless.
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out.write(buf, p - buf);
      out.put(',');
    }
    out << d.labels[r] << '\n';
  }
}

}  // namespace feddag
