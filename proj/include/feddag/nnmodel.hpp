#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "feddag/datamodel.hpp"
#include "feddag/linalg.hpp"

namespace feddag {

enum class Activation { kRelu, kTanh };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// Shapes of the model: one or two MLP encoders feeding a linear head.
/// Each encoder maps input_dim -> hidden... -> feature_dim with the
/// activation after every layer.
struct ArchSpec {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden{256};
  std::size_t feature_dim = 32;
  std::size_t num_classes = 10;
  Activation activation = Activation::kRelu;
  bool dual = true;

  std::size_t encoder_size() const;
  std::size_t head_input() const { return dual ? 2 * feature_dim : feature_dim; }
  std::size_t head_size() const { return head_input() * num_classes + num_classes; }
  std::size_t param_count() const { return encoder_size() * (dual ? 2 : 1) + head_size(); }
  void validate() const;
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

struct TrainBlocks {
  bool enc1 = true;
  bool enc2 = false;
  bool head = true;

  bool any() const { return enc1 || enc2 || head; }
  static TrainBlocks primary() { return {true, false, true}; }
  static TrainBlocks secondary() { return {false, true, false}; }
  static TrainBlocks all() { return {true, true, true}; }
};

class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<double> init_encoder(const ArchSpec& arch, std::uint64_t seed);
std::vector<double> init_head(const ArchSpec& arch, std::uint64_t seed);
/// Every block drawn from independent streams of `seed`; enc2 empty unless dual.
ModelParams init_params(const ArchSpec& arch, std::uint64_t seed);

/// Throws std::invalid_argument when block lengths disagree with `arch`.
void check_shapes(const ArchSpec& arch, const ModelParams& params);

std::vector<double> forward(const ArchSpec& arch, const ModelParams& params,
                            std::span<const double> x);
/// One row of logits per input row.
Matrix forward_batch(const ArchSpec& arch, const ModelParams& params, const Matrix& x);

/// Encoder output for a batch, n × feature_dim.
Matrix encode(const ArchSpec& arch, std::span<const double> encoder, const Matrix& x);

struct LossGrads {
  double loss = 0.0;
  double diversity = 0.0;  // mean cos² term before scaling, 0 when unused
  ModelParams grads;       // blocks not selected are left empty
};

/// Mean cross-entropy of `labels` under the model on rows of `x`, plus
/// lambda_div·mean cos²(φ1, φ2) when `lambda_div` is set, the model is dual
/// and enc1 is trainable. Throws DivergedError on a non-finite loss.
LossGrads loss_and_grads(const ArchSpec& arch, const ModelParams& params, const Matrix& x,
                         std::span<const int> labels, TrainBlocks blocks,
                         std::optional<double> lambda_div = std::nullopt);

/// Loss only, same definition as loss_and_grads.
double loss_value(const ArchSpec& arch, const ModelParams& params, const Matrix& x,
                  std::span<const int> labels, TrainBlocks blocks,
                  std::optional<double> lambda_div = std::nullopt);

/// params -= lr·grads on every block for which grads is non-empty.
void sgd_step(ModelParams& params, const ModelParams& grads, double lr);

void save_checkpoint(std::ostream& os, const ArchSpec& arch, const ModelParams& params);
/// Reads a checkpoint and returns it together with its stored ArchSpec.
std::pair<ArchSpec, ModelParams> load_checkpoint(std::istream& is);

}  // namespace feddag
