#include "adabin/model.hpp"

#include <cmath>

#include "adabin/error.hpp"

namespace adabin {

const char* nonlinearity_name(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::None: return "none";
    case Nonlinearity::PReLU: return "prelu";
    case Nonlinearity::MaxoutPos: return "maxout-pos";
    case Nonlinearity::Maxout: return "maxout";
  }
  return "?";
}

std::string ModelConfig::id() const {
  if (!binarize) return arch + "-float";
  if (weight == WeightMode::ScaledSign && activation == ActivationMode::Sign &&
      nonlinearity == Nonlinearity::PReLU) {
    return arch + "-sign-prelu";
  }
  return arch + "-adabin";
}

const std::vector<std::string>& valid_model_ids() {
  static const std::vector<std::string> ids = {
      "resnet20-adabin", "resnet20-sign-prelu", "resnet20-float",
      "smallcnn-adabin", "smallcnn-sign-prelu", "smallcnn-float",
  };
  return ids;
}

ModelConfig model_config_from_id(const std::string& id) {
  ModelConfig cfg;
  const auto dash = id.find('-');
  const std::string arch = id.substr(0, dash);
  const std::string variant = dash == std::string::npos ? "" : id.substr(dash + 1);
  const bool arch_ok = arch == "resnet20" || arch == "smallcnn";
  if (!arch_ok || (variant != "adabin" && variant != "sign-prelu" && variant != "float")) {
    std::string msg = "unknown architecture id '" + id + "'; valid ids:";
    for (const auto& v : valid_model_ids()) msg += " " + v;
    throw ConfigError(msg);
  }
  cfg.arch = arch;
  if (variant == "sign-prelu") {
    cfg.weight = WeightMode::ScaledSign;
    cfg.activation = ActivationMode::Sign;
    cfg.nonlinearity = Nonlinearity::PReLU;
  } else if (variant == "float") {
    cfg.binarize = false;
  }
  return cfg;
}

namespace {

std::unique_ptr<Layer> make_act(Nonlinearity nl, std::size_t channels) {
  switch (nl) {
    case Nonlinearity::None: return nullptr;
    // An absent slope is frozen at the identity value 1.
    case Nonlinearity::PReLU: return std::make_unique<Maxout>(channels, false, true, 1.0f, 0.25f);
    case Nonlinearity::MaxoutPos:
      return std::make_unique<Maxout>(channels, true, false, 1.0f, 1.0f);
    case Nonlinearity::Maxout: return std::make_unique<Maxout>(channels, true, true, 1.0f, 0.25f);
  }
  return nullptr;
}

struct Builder {
  const ModelConfig& cfg;
  Rng& rng;
  std::vector<std::unique_ptr<Layer>>& layers;

  std::unique_ptr<Layer> conv(std::size_t in, std::size_t out, std::size_t k, ConvGeometry g,
                              bool binary) {
    if (binary) {
      return std::make_unique<BinaryConv2d>(in, out, k, g, cfg.weight, cfg.activation,
                                            cfg.alpha_grad, rng);
    }
    return std::make_unique<Conv2d>(in, out, k, g, rng);
  }

  void unit(std::size_t in, std::size_t out, std::size_t stride, bool binary, bool shortcut) {
    auto c = conv(in, out, 3, {stride, 1}, binary);
    layers.push_back(std::make_unique<ResidualUnit>(std::move(c),
                                                    std::make_unique<BatchNorm2d>(out),
                                                    make_act(cfg.nonlinearity, out),
                                                    Shortcut{in, out, stride}, shortcut));
  }

  void head(std::size_t channels) {
    layers.push_back(std::make_unique<GlobalAvgPool>());
    if (cfg.float_last || !cfg.binarize) {
      layers.push_back(std::make_unique<Linear>(channels, cfg.classes, rng));
    } else {
      layers.push_back(conv(channels, cfg.classes, 1, {1, 0}, true));
    }
  }
};

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.width <= 0.0) throw ConfigError("width multiplier must be positive");
  if (cfg_.classes < 2) throw ConfigError("need at least 2 classes");
  Rng rng(seed);
  Builder b{cfg_, rng, layers_};
  const auto base = static_cast<std::size_t>(std::lround(16.0 * cfg_.width));
  if (base == 0) throw ConfigError("width multiplier too small");
  const bool bin = cfg_.binarize;
  const bool stem_binary = bin && !cfg_.float_first;

  if (cfg_.arch == "resnet20") {
    b.unit(cfg_.in_channels, base, 1, stem_binary, false);
    std::size_t in = base;
    for (std::size_t stage = 0; stage < 3; ++stage) {
      const std::size_t out = base << stage;
      for (std::size_t blk = 0; blk < 3; ++blk) {
        const std::size_t stride = (stage > 0 && blk == 0) ? 2 : 1;
        b.unit(in, out, stride, bin, true);
        b.unit(out, out, 1, bin, true);
        in = out;
      }
    }
    b.head(in);
  } else if (cfg_.arch == "smallcnn") {
    b.unit(cfg_.in_channels, base, 1, stem_binary, false);
    b.unit(base, base, 1, bin, true);
    b.unit(base, 2 * base, 2, bin, true);
    b.unit(2 * base, 2 * base, 1, bin, true);
    b.unit(2 * base, 4 * base, 2, bin, true);
    b.head(4 * base);
  } else {
    std::string msg = "unknown architecture '" + cfg_.arch + "'; valid ids:";
    for (const auto& v : valid_model_ids()) msg += " " + v;
    throw ConfigError(msg);
  }

  std::size_t unit = 0;
  for (auto& l : layers_) {
    if (dynamic_cast<ResidualUnit*>(l.get())) {
      l->set_name("unit" + std::to_string(unit++));
    } else {
      l->set_name(l->kind());
    }
  }
  // Validate the whole chain once.
  Shape s = input_shape(1);
  for (auto& l : layers_) s = l->output_shape(s);
}

Tensor Model::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.in_height ||
      x.dim(3) != cfg_.in_width) {
    throw ShapeError("model expects input " + shape_str(input_shape(0)) + " (any N), got " +
                     shape_str(x.shape()));
  }
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  if (h.rank() == 4) h = h.reshaped({h.dim(0), h.dim(1)});
  return h;
}

ForwardResult Model::forward(const Tensor& x, std::span<const int> labels, Mode mode) {
  ForwardResult r;
  r.logits = forward(x, mode);
  LossOutput lo = softmax_cross_entropy(r.logits, labels);
  r.loss = lo.loss;
  pending_grad_ = std::move(lo.grad_logits);
  has_pending_ = true;
  return r;
}

void Model::backward() {
  if (!has_pending_) throw Error("backward called before a labelled forward");
  Tensor g = pending_grad_;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if ((*it)->kind() == std::string_view("binary_conv2d") && g.rank() == 2) {
      g = g.reshaped({g.dim(0), g.dim(1), 1, 1});
    }
    g = (*it)->backward(g);
  }
  has_pending_ = false;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) l->collect_parameters(out);
  return out;
}

std::vector<Buffer> Model::buffers() {
  std::vector<Buffer> out;
  for (auto& l : layers_) l->collect_buffers(out);
  return out;
}

void Model::zero_grad() { zero_grads(parameters()); }

std::vector<BinaryConv2d*> Model::binary_convs() {
  std::vector<BinaryConv2d*> out;
  for (auto& l : layers_) {
    if (auto* u = dynamic_cast<ResidualUnit*>(l.get())) {
      if (auto* bc = dynamic_cast<BinaryConv2d*>(&u->conv())) out.push_back(bc);
    } else if (auto* bc = dynamic_cast<BinaryConv2d*>(l.get())) {
      out.push_back(bc);
    }
  }
  return out;
}

std::vector<const BinaryConv2d*> Model::binary_convs() const {
  std::vector<const BinaryConv2d*> out;
  for (auto* p : const_cast<Model*>(this)->binary_convs()) out.push_back(p);
  return out;
}

std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return std::make_unique<Model>(cfg, seed);
}

}  // namespace adabin
