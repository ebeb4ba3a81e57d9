#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adabin/layers.hpp"

namespace adabin {

enum class Nonlinearity { None, PReLU, MaxoutPos, Maxout };

const char* nonlinearity_name(Nonlinearity n);

/// Architecture description. `arch` is the topology ("resnet20" or
/// "smallcnn"); the quantizer and nonlinearity choices are independent
/// toggles so every ablation row can be expressed.
struct ModelConfig {
  std::string arch = "resnet20";
  bool binarize = true;  ///< false builds the all-float counterpart
  WeightMode weight = WeightMode::Adabin;
  ActivationMode activation = ActivationMode::Adabin;
  Nonlinearity nonlinearity = Nonlinearity::Maxout;
  AlphaGradMode alpha_grad = AlphaGradMode::Consistent;
  double width = 1.0;
  std::size_t classes = 10;
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  bool float_first = true;
  bool float_last = true;

  /// Canonical id, e.g. "resnet20-adabin".
  std::string id() const;
};

/// Parses a stable architecture id:
///   <arch>-adabin      adabin weights + adabin activations + Maxout
///   <arch>-sign-prelu  {-a,+a} weights + sign activations + PReLU
///   <arch>-float       real-valued network
/// with <arch> in {resnet20, smallcnn}. Unknown ids throw ConfigError
/// listing the valid ones.
ModelConfig model_config_from_id(const std::string& id);
const std::vector<std::string>& valid_model_ids();

struct ForwardResult {
  double loss = 0.0;
  Tensor logits;
};

/// Static sequential graph of layers with a softmax cross-entropy head.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }

  Tensor forward(const Tensor& x, Mode mode);
  ForwardResult forward(const Tensor& x, std::span<const int> labels, Mode mode);
  /// Backpropagates the loss of the last labelled forward into every
  /// parameter gradient. Throws if no labelled forward preceded it.
  void backward();

  std::vector<Parameter*> parameters();
  std::vector<Buffer> buffers();
  void zero_grad();

  std::vector<std::unique_ptr<Layer>>& layers() noexcept { return layers_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const noexcept { return layers_; }

  Shape input_shape(std::size_t batch) const {
    return {batch, cfg_.in_channels, cfg_.in_height, cfg_.in_width};
  }

  /// Binary convolutions in graph order.
  std::vector<BinaryConv2d*> binary_convs();
  std::vector<const BinaryConv2d*> binary_convs() const;

 private:
  ModelConfig cfg_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Tensor pending_grad_;
  bool has_pending_ = false;
};

std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace adabin
