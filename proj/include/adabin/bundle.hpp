#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "adabin/bitkernel.hpp"
#include "adabin/model.hpp"

namespace adabin {

/// Packed inference graph: binary convolutions run on bit-packed operands,
/// every other stage reuses the float kernels of the training graph.
/// The byte layout is described in docs/formats.md.
struct PackedModel {
  struct FloatConv {
    Tensor weight;  // [n, c, k, k]
    ConvGeometry geom;
  };
  struct BinaryConv {
    PackedBitTensor weight_bits;  // logical [n, c, k, k]
    PackedConvSpecs specs;
    ConvGeometry geom;
    PrecomputedBias bias;  // rebuilt at load for the input plane
    std::size_t in_height = 0, in_width = 0;
  };
  struct Affine {
    std::vector<float> scale, shift;
  };
  struct Slopes {
    std::vector<float> gamma_plus, gamma_minus;
  };
  struct UnitBegin {};
  struct ShortcutAdd {
    Shortcut shortcut;
  };
  struct GlobalPool {};
  struct Dense {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
  };
  using Op = std::variant<FloatConv, BinaryConv, Affine, Slopes, UnitBegin, ShortcutAdd,
                          GlobalPool, Dense>;

  std::size_t in_channels = 0, in_height = 0, in_width = 0, classes = 0;
  std::vector<Op> ops;

  /// Logits [N, classes].
  Tensor forward(const Tensor& x) const;
  std::size_t binary_layers() const;

  /// Recomputes shapes through the graph and rebuilds every precomputed
  /// bias. Throws ShapeError on an inconsistent graph.
  void finalize();
};

/// Packs the eval-mode form of a trained model. Throws on an empty graph or
/// a binary layer whose activation spec is not finite.
PackedModel export_packed_model(const Model& model);

std::vector<std::uint8_t> serialize_bundle(const PackedModel& pm);
PackedModel deserialize_bundle(const std::vector<std::uint8_t>& bytes);

void save_bundle(const PackedModel& pm, const std::string& path);
PackedModel load_bundle(const std::string& path);

}  // namespace adabin
