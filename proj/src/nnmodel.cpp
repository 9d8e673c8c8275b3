#include "feddag/nnmodel.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "feddag/random.hpp"

namespace feddag {

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

namespace {

std::vector<std::size_t> encoder_widths(const ArchSpec& arch) {
  std::vector<std::size_t> w{arch.input_dim};
  w.insert(w.end(), arch.hidden.begin(), arch.hidden.end());
  w.push_back(arch.feature_dim);
  return w;
}

std::size_t dense_size(std::size_t in, std::size_t out) { return in * out + out; }

// Z = H·Wᵀ + b, with W stored out×in row-major followed by b.
Matrix dense_forward(const Matrix& h, const double* w, std::size_t in, std::size_t out) {
  const double* bias = w + in * out;
  Matrix z(h.rows(), out);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const double* hr = h.row(r).data();
    double* zr = z.row(r).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w + o * in;
      double s = bias[o];
      for (std::size_t i = 0; i < in; ++i) s += hr[i] * wo[i];
      zr[o] = s;
    }
  }
  return z;
}

// Accumulates dW, db into `gw` (may be null) and returns dH (if wanted).
Matrix dense_backward(const Matrix& h, const Matrix& dz, const double* w, std::size_t in,
                      std::size_t out, double* gw, bool want_dh) {
  Matrix dh;
  if (want_dh) dh = Matrix(h.rows(), in);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const double* hr = h.row(r).data();
    const double* dzr = dz.row(r).data();
    double* dhr = want_dh ? dh.row(r).data() : nullptr;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dzr[o];
      if (g == 0.0) continue;
      if (gw) {
        double* gwo = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwo[i] += g * hr[i];
        gw[in * out + o] += g;
      }
      if (dhr) {
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) dhr[i] += g * wo[i];
      }
    }
  }
  return dh;
}

void activate(Matrix& z, Activation a) {
  for (auto& v : z.data()) v = a == Activation::kRelu ? std::max(v, 0.0) : std::tanh(v);
}

// In place: dz *= act'(.) expressed through the post-activation output.
void activate_backward(Matrix& dz, const Matrix& out, Activation a) {
  auto& g = dz.data();
  const auto& y = out.data();
  for (std::size_t k = 0; k < g.size(); ++k)
    g[k] *= a == Activation::kRelu ? (y[k] > 0.0 ? 1.0 : 0.0) : 1.0 - y[k] * y[k];
}

struct EncoderTrace {
  std::vector<Matrix> acts;  // acts[0] is the input; acts.back() the features
};

EncoderTrace encoder_forward(const ArchSpec& arch, std::span<const double> enc, const Matrix& x) {
  const auto widths = encoder_widths(arch);
  EncoderTrace t;
  t.acts.push_back(x);
  const double* w = enc.data();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Matrix z = dense_forward(t.acts.back(), w, widths[l], widths[l + 1]);
    activate(z, arch.activation);
    t.acts.push_back(std::move(z));
    w += dense_size(widths[l], widths[l + 1]);
  }
  return t;
}

void encoder_backward(const ArchSpec& arch, std::span<const double> enc, const EncoderTrace& t,
                      Matrix dfeat, std::vector<double>& grad) {
  const auto widths = encoder_widths(arch);
  grad.assign(enc.size(), 0.0);
  std::vector<std::size_t> offsets{0};
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    offsets.push_back(offsets.back() + dense_size(widths[l], widths[l + 1]));
  for (std::size_t l = widths.size() - 1; l-- > 0;) {
    activate_backward(dfeat, t.acts[l + 1], arch.activation);
    dfeat = dense_backward(t.acts[l], dfeat, enc.data() + offsets[l], widths[l], widths[l + 1],
                           grad.data() + offsets[l], l > 0);
  }
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

std::vector<double> uniform_fan_in(const std::vector<std::size_t>& widths, Rng& rng) {
  std::vector<double> out;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t k = 0; k < dense_size(widths[l], widths[l + 1]); ++k) out.push_back(u(rng));
  }
  return out;
}

struct Evaluation {
  double loss = 0.0;
  double diversity = 0.0;
  bool use_div = false;
  EncoderTrace e1, e2;
  Matrix joint, logits;
};

Evaluation evaluate_loss(const ArchSpec& arch, const ModelParams& params, const Matrix& x,
                         std::span<const int> labels, TrainBlocks blocks,
                         std::optional<double> lambda_div) {
  check_shapes(arch, params);
  if (labels.empty() || labels.size() != x.rows())
    throw std::invalid_argument("batch must be non-empty with one label per row");
  if (x.cols() != arch.input_dim) throw std::invalid_argument("input width differs from the architecture");
  Evaluation ev;
  ev.e1 = encoder_forward(arch, params.enc1, x);
  if (arch.dual) {
    ev.e2 = encoder_forward(arch, params.enc2, x);
    ev.joint = concat_cols(ev.e1.acts.back(), ev.e2.acts.back());
  } else {
    ev.joint = ev.e1.acts.back();
  }
  ev.logits = dense_forward(ev.joint, params.head.data(), arch.head_input(), arch.num_classes);
  const auto n = static_cast<double>(x.rows());
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto z = ev.logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    total += m + std::log(s) - z[static_cast<std::size_t>(labels[r])];
  }
  ev.loss = total / n;
  ev.use_div = lambda_div.has_value() && arch.dual && blocks.enc1;
  if (ev.use_div) {
    const auto& f1 = ev.e1.acts.back();
    const auto& f2 = ev.e2.acts.back();
    double acc = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double d = dot(f1.row(r), f2.row(r));
      const double n1 = std::max(norm2(f1.row(r)), 1e-12);
      const double n2 = std::max(norm2(f2.row(r)), 1e-12);
      const double c = d / (n1 * n2);
      acc += c * c;
    }
    ev.diversity = acc / n;
    ev.loss += *lambda_div * ev.diversity;
  }
  if (!std::isfinite(ev.loss)) throw DivergedError("non-finite training loss");
  return ev;
}

}  // namespace

std::size_t ArchSpec::encoder_size() const {
  const auto w = encoder_widths(*this);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) n += dense_size(w[l], w[l + 1]);
  return n;
}

void ArchSpec::validate() const {
  if (input_dim == 0 || feature_dim == 0 || num_classes < 2)
    throw std::invalid_argument("architecture needs positive widths and at least two classes");
  for (auto h : hidden)
    if (h == 0) throw std::invalid_argument("hidden widths must be positive");
}

std::vector<double> init_encoder(const ArchSpec& arch, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_fan_in(encoder_widths(arch), rng);
}

std::vector<double> init_head(const ArchSpec& arch, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_fan_in({arch.head_input(), arch.num_classes}, rng);
}

ModelParams init_params(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams p;
  p.enc1 = init_encoder(arch, derive_seed(seed, "enc1"));
  if (arch.dual) p.enc2 = init_encoder(arch, derive_seed(seed, "enc2"));
  p.head = init_head(arch, derive_seed(seed, "head"));
  return p;
}

void check_shapes(const ArchSpec& arch, const ModelParams& params) {
  if (params.enc1.size() != arch.encoder_size() ||
      params.enc2.size() != (arch.dual ? arch.encoder_size() : 0) ||
      params.head.size() != arch.head_size())
    throw std::invalid_argument("parameter blocks do not match the architecture");
}

Matrix encode(const ArchSpec& arch, std::span<const double> encoder, const Matrix& x) {
  if (encoder.size() != arch.encoder_size()) throw std::invalid_argument("encoder length mismatch");
  return encoder_forward(arch, encoder, x).acts.back();
}

Matrix forward_batch(const ArchSpec& arch, const ModelParams& params, const Matrix& x) {
  check_shapes(arch, params);
  if (x.cols() != arch.input_dim) throw std::invalid_argument("input width differs from the architecture");
  Matrix joint = encode(arch, params.enc1, x);
  if (arch.dual) joint = concat_cols(joint, encode(arch, params.enc2, x));
  return dense_forward(joint, params.head.data(), arch.head_input(), arch.num_classes);
}

std::vector<double> forward(const ArchSpec& arch, const ModelParams& params,
                            std::span<const double> x) {
  Matrix m(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return forward_batch(arch, params, m).data();
}

double loss_value(const ArchSpec& arch, const ModelParams& params, const Matrix& x,
                  std::span<const int> labels, TrainBlocks blocks, std::optional<double> lambda_div) {
  return evaluate_loss(arch, params, x, labels, blocks, lambda_div).loss;
}

LossGrads loss_and_grads(const ArchSpec& arch, const ModelParams& params, const Matrix& x,
                         std::span<const int> labels, TrainBlocks blocks,
                         std::optional<double> lambda_div) {
  if (!blocks.any()) throw std::invalid_argument("no trainable block selected");
  if (blocks.enc2 && !arch.dual) throw std::invalid_argument("single-encoder model has no enc2");
  Evaluation ev = evaluate_loss(arch, params, x, labels, blocks, lambda_div);
  LossGrads out;
  out.loss = ev.loss;
  out.diversity = ev.diversity;

  const std::size_t n = x.rows();
  const std::size_t C = arch.num_classes;
  Matrix dlogits(n, C);
  for (std::size_t r = 0; r < n; ++r) {
    auto z = ev.logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    auto g = dlogits.row(r);
    for (std::size_t c = 0; c < C; ++c) g[c] = std::exp(z[c] - m) / s / static_cast<double>(n);
    g[static_cast<std::size_t>(labels[r])] -= 1.0 / static_cast<double>(n);
  }

  const bool need_joint = blocks.enc1 || blocks.enc2;
  if (blocks.head) out.grads.head.assign(params.head.size(), 0.0);
  Matrix djoint = dense_backward(ev.joint, dlogits, params.head.data(), arch.head_input(), C,
                                 blocks.head ? out.grads.head.data() : nullptr, need_joint);
  if (!need_joint) return out;

  const std::size_t fd = arch.feature_dim;
  Matrix df1(n, fd), df2(arch.dual ? n : 0, fd);
  for (std::size_t r = 0; r < n; ++r) {
    auto j = djoint.row(r);
    std::copy(j.begin(), j.begin() + static_cast<std::ptrdiff_t>(fd), df1.row(r).begin());
    if (arch.dual) std::copy(j.begin() + static_cast<std::ptrdiff_t>(fd), j.end(), df2.row(r).begin());
  }

  if (ev.use_div) {
    const auto& f1 = ev.e1.acts.back();
    const auto& f2 = ev.e2.acts.back();
    const double scale = *lambda_div / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto a = f1.row(r);
      auto b = f2.row(r);
      const double d = dot(a, b);
      const double na = norm2(a), nb = norm2(b);
      const double n1 = std::max(na, 1e-12), n2 = std::max(nb, 1e-12);
      const double c = d / (n1 * n2);
      // d(c²)/da = 2c·(b/(n1 n2) − [na > ε]·d·a/(n1³ n2)), symmetrically for b.
      const double ka = na > 1e-12 ? d / (n1 * n1 * n1 * n2) : 0.0;
      const double kb = nb > 1e-12 ? d / (n1 * n2 * n2 * n2) : 0.0;
      auto ga = df1.row(r);
      auto gb = df2.row(r);
      for (std::size_t k = 0; k < fd; ++k) {
        ga[k] += scale * 2.0 * c * (b[k] / (n1 * n2) - ka * a[k]);
        gb[k] += scale * 2.0 * c * (a[k] / (n1 * n2) - kb * b[k]);
      }
    }
  }

  if (blocks.enc1) encoder_backward(arch, params.enc1, ev.e1, std::move(df1), out.grads.enc1);
  if (blocks.enc2) encoder_backward(arch, params.enc2, ev.e2, std::move(df2), out.grads.enc2);
  return out;
}

void sgd_step(ModelParams& params, const ModelParams& grads, double lr) {
  auto step = [lr](std::vector<double>& p, const std::vector<double>& g) {
    if (g.empty()) return;
    if (g.size() != p.size()) throw std::invalid_argument("gradient block length mismatch");
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  };
  step(params.enc1, grads.enc1);
  step(params.enc2, grads.enc2);
  step(params.head, grads.head);
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4b434446;  // "FDCK"

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated checkpoint");
  return v;
}

void put_block(std::ostream& os, const std::vector<double>& b) {
  put<std::uint64_t>(os, b.size());
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
}

std::vector<double> get_block(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (std::uint64_t{1} << 32)) throw std::runtime_error("implausible checkpoint block length");
  std::vector<double> b(n);
  is.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("truncated checkpoint");
  return b;
}

}  // namespace

void save_checkpoint(std::ostream& os, const ArchSpec& arch, const ModelParams& params) {
  check_shapes(arch, params);
  put<std::uint32_t>(os, kCheckpointMagic);
  put<std::uint64_t>(os, arch.input_dim);
  put<std::uint64_t>(os, arch.hidden.size());
  for (auto h : arch.hidden) put<std::uint64_t>(os, h);
  put<std::uint64_t>(os, arch.feature_dim);
  put<std::uint64_t>(os, arch.num_classes);
  put<std::uint32_t>(os, arch.activation == Activation::kRelu ? 0 : 1);
  put<std::uint32_t>(os, arch.dual ? 1 : 0);
  put_block(os, params.enc1);
  put_block(os, params.enc2);
  put_block(os, params.head);
}

std::pair<ArchSpec, ModelParams> load_checkpoint(std::istream& is) {
  if (get<std::uint32_t>(is) != kCheckpointMagic) throw std::runtime_error("not a model checkpoint");
  ArchSpec arch;
  arch.input_dim = get<std::uint64_t>(is);
  const auto layers = get<std::uint64_t>(is);
  if (layers > 64) throw std::runtime_error("implausible layer count in checkpoint");
  arch.hidden.clear();
  for (std::uint64_t l = 0; l < layers; ++l) arch.hidden.push_back(get<std::uint64_t>(is));
  arch.feature_dim = get<std::uint64_t>(is);
  arch.num_classes = get<std::uint64_t>(is);
  arch.activation = get<std::uint32_t>(is) == 0 ? Activation::kRelu : Activation::kTanh;
  arch.dual = get<std::uint32_t>(is) != 0;
  ModelParams p;
  p.enc1 = get_block(is);
  p.enc2 = get_block(is);
  p.head = get_block(is);
  arch.validate();
  check_shapes(arch, p);
  return {arch, p};
}

}  // namespace feddag
