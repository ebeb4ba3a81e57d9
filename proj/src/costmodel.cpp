#include "adabin/costmodel.hpp"

#include "adabin/error.hpp"

namespace adabin {

double LayerCost::ops() const noexcept {
  return static_cast<double>(float_ops + extra_float_ops) +
         static_cast<double>(binary_ops + extra_binary_ops) / 64.0;
}

double LayerCost::extra_ops() const noexcept {
  return static_cast<double>(extra_float_ops) + static_cast<double>(extra_binary_ops) / 64.0;
}

LayerCost& LayerCost::operator+=(const LayerCost& o) noexcept {
  float_ops += o.float_ops;
  binary_ops += o.binary_ops;
  params_bits += o.params_bits;
  extra_float_ops += o.extra_float_ops;
  extra_binary_ops += o.extra_binary_ops;
  extra_param_bits += o.extra_param_bits;
  return *this;
}

LayerCost conv_cost(std::size_t n, std::size_t c, std::size_t k, std::size_t out_h,
                    std::size_t out_w, ConvCostMode mode) {
  if (n == 0 || c == 0 || k == 0 || out_h == 0 || out_w == 0) {
    throw Error("conv_cost: all dimensions must be positive");
  }
  const std::uint64_t positions = std::uint64_t{out_h} * out_w;
  const std::uint64_t outputs = positions * n;
  const std::uint64_t macs = outputs * c * k * k;
  const std::uint64_t weights = std::uint64_t{n} * c * k * k;
  LayerCost lc;
  if (mode == ConvCostMode::Float) {
    lc.float_ops = 2 * macs;
    lc.params_bits = 32 * weights;
    return lc;
  }
  lc.binary_ops = 2 * macs;
  lc.float_ops = outputs;
  lc.params_bits = weights + 32 * std::uint64_t{n};
  if (mode == ConvCostMode::Adabin) {
    lc.extra_binary_ops = positions * c;
    lc.extra_float_ops = positions * k * k + 2 * outputs;
    lc.extra_param_bits = 32 * std::uint64_t{n} + 64;
  }
  return lc;
}

namespace {

LayerCost elementwise(std::uint64_t elems, std::uint64_t ops_per_elem,
                      std::uint64_t param_bits = 0) {
  LayerCost lc;
  lc.float_ops = elems * ops_per_elem;
  lc.params_bits = param_bits;
  return lc;
}

ConvCostMode binary_mode(const BinaryConv2d& bc) {
  if (bc.weight_mode() == WeightMode::ScaledSign && bc.activation_mode() == ActivationMode::Sign) {
    return ConvCostMode::SignBinary;
  }
  return ConvCostMode::Adabin;
}

struct Accountant {
  ModelCostReport& rep;

  void push(std::string name, std::string kind, LayerCost c, LayerCost f) {
    rep.total += c;
    rep.float_total += f;
    rep.layers.push_back({std::move(name), std::move(kind), c, f});
  }

  void conv_layer(const std::string& name, const Layer& l, const Shape& out) {
    if (const auto* bc = dynamic_cast<const BinaryConv2d*>(&l)) {
      const Shape& w = bc->weight.value.shape();
      push(name, l.kind(), conv_cost(w[0], w[1], w[2], out[2], out[3], binary_mode(*bc)),
           conv_cost(w[0], w[1], w[2], out[2], out[3], ConvCostMode::Float));
    } else if (const auto* fc = dynamic_cast<const Conv2d*>(&l)) {
      const Shape& w = fc->weight.value.shape();
      const LayerCost c = conv_cost(w[0], w[1], w[2], out[2], out[3], ConvCostMode::Float);
      push(name, l.kind(), c, c);
    }
  }

  void simple(const std::string& name, const Layer& l, const Shape& in, const Shape& out) {
    const std::uint64_t in_elems = shape_numel(in);
    const std::uint64_t out_elems = shape_numel(out);
    LayerCost c;
    if (const auto* bn = dynamic_cast<const BatchNorm2d*>(&l)) {
      c = elementwise(out_elems, 2, 64 * bn->channels());
    } else if (const auto* mx = dynamic_cast<const Maxout*>(&l)) {
      c = elementwise(out_elems, 2);
      c.extra_param_bits = 64 * mx->channels();
    } else if (const auto* ap = dynamic_cast<const AvgPool2d*>(&l)) {
      c = elementwise(out_elems, ap->kernel() * ap->kernel());
    } else if (dynamic_cast<const GlobalAvgPool*>(&l)) {
      c = elementwise(in_elems, 1);
    } else if (const auto* lin = dynamic_cast<const Linear*>(&l)) {
      const std::uint64_t w = std::uint64_t{lin->in_features()} * lin->out_features();
      c.float_ops = 2 * w + lin->out_features();
      c.params_bits = 32 * (w + lin->out_features());
    }
    push(name, l.kind(), c, c);
  }
};

}  // namespace

ModelCostReport model_cost(const Model& model) {
  ModelCostReport rep;
  rep.model_id = model.config().id();
  Accountant acc{rep};
  Shape s = model.input_shape(1);
  for (const auto& lp : model.layers()) {
    const Layer& l = *lp;
    if (const auto* u = dynamic_cast<const ResidualUnit*>(&l)) {
      const Shape conv_out = u->conv().output_shape(s);
      acc.conv_layer(u->name() + ".conv", u->conv(), conv_out);
      acc.simple(u->name() + ".bn", u->bn(), conv_out, conv_out);
      if (u->uses_shortcut()) {
        const auto& sc = u->shortcut();
        const std::uint64_t elems = shape_numel(conv_out);
        // pooling (stride^2 ops per pooled element when downsampling) + add
        const std::uint64_t pool =
            sc.is_identity() ? 0 : shape_numel(sc.output_shape(s)) / sc.out_channels *
                                       sc.in_channels * sc.stride * sc.stride;
        const LayerCost c = elementwise(elems + pool, 1);
        acc.push(u->name() + ".shortcut", "shortcut", c, c);
      }
      if (u->act()) acc.simple(u->name() + ".act", *u->act(), conv_out, conv_out);
      s = conv_out;
      continue;
    }
    const Shape out = l.output_shape(s);
    if (dynamic_cast<const BinaryConv2d*>(&l) || dynamic_cast<const Conv2d*>(&l)) {
      acc.conv_layer(l.name(), l, out);
    } else {
      acc.simple(l.name(), l, s, out);
    }
    s = out;
  }
  rep.total_ops = rep.total.ops();
  rep.float_model_ops = rep.float_total.ops();
  rep.speedup = rep.float_model_ops / rep.total_ops;
  rep.memory_saving = static_cast<double>(rep.float_total.total_param_bits()) /
                      static_cast<double>(rep.total.total_param_bits());
  rep.params_bytes = static_cast<double>(rep.total.total_param_bits()) / 8.0;
  return rep;
}

OverheadClaims adabin_overhead(std::size_t n, std::size_t c, std::size_t k, std::size_t out_h,
                               std::size_t out_w) {
  const LayerCost fl = conv_cost(n, c, k, out_h, out_w, ConvCostMode::Float);
  const LayerCost sb = conv_cost(n, c, k, out_h, out_w, ConvCostMode::SignBinary);
  const LayerCost ab = conv_cost(n, c, k, out_h, out_w, ConvCostMode::Adabin);
  OverheadClaims oc;
  oc.extra_ops_pct = 100.0 * (ab.ops() - sb.ops()) / sb.ops();
  oc.extra_params_pct = 100.0 * static_cast<double>(ab.total_param_bits() - sb.total_param_bits()) /
                        static_cast<double>(sb.total_param_bits());
  oc.speedup = fl.ops() / ab.ops();
  oc.memory_saving = static_cast<double>(fl.total_param_bits()) /
                     static_cast<double>(ab.total_param_bits());
  return oc;
}

}  // namespace adabin
