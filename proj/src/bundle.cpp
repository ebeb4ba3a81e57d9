#include "adabin/bundle.hpp"

#include <cmath>

#include "adabin/error.hpp"
#include "binary_io.hpp"

namespace adabin {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'B', 'N'};
constexpr std::uint16_t kVersion = 1;

enum Tag : std::uint32_t {
  kFloatConv = 1,
  kBinaryConv = 2,
  kAffine = 3,
  kSlopes = 4,
  kUnitBegin = 5,
  kShortcutAdd = 6,
  kGlobalPool = 7,
  kDense = 8,
};

std::vector<float> to_vec(const Tensor& t) { return t.storage(); }

void export_conv(const Layer& l, std::vector<PackedModel::Op>& ops) {
  if (const auto* bc = dynamic_cast<const BinaryConv2d*>(&l)) {
    const BinarySpec ws = bc->weight_spec();
    const BinarySpec as = bc->activation_spec();
    if (!std::isfinite(as.alpha[0]) || !std::isfinite(as.beta[0])) {
      throw Error(bc->name() + ": activation spec is not finite");
    }
    PackedModel::BinaryConv op;
    op.weight_bits = pack_ge(bc->weight.value, ws.beta);
    op.specs = {ws.alpha, ws.beta, as.alpha[0], as.beta[0]};
    op.geom = bc->geometry();
    ops.emplace_back(std::move(op));
  } else if (const auto* fc = dynamic_cast<const Conv2d*>(&l)) {
    ops.emplace_back(PackedModel::FloatConv{fc->weight.value, fc->geometry()});
  } else {
    throw Error(std::string("export: unsupported convolution kind ") + l.kind());
  }
}

void export_slopes(const Layer& l, std::vector<PackedModel::Op>& ops) {
  const auto* m = dynamic_cast<const Maxout*>(&l);
  if (!m) throw Error(std::string("export: unsupported activation kind ") + l.kind());
  ops.emplace_back(PackedModel::Slopes{to_vec(m->gamma_plus.value), to_vec(m->gamma_minus.value)});
}

// Dense row-major [n][c][ky][kx] bit stream, 64 bits per little-endian word.
std::vector<std::uint64_t> dense_bits(const PackedBitTensor& b) {
  const std::size_t total = shape_numel(b.shape());
  std::vector<std::uint64_t> out((total + 63) / 64, 0);
  for (std::size_t i = 0; i < total; ++i) {
    if (b.get_flat(i)) out[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  return out;
}

PackedBitTensor from_dense_bits(Shape shape, const std::vector<std::uint64_t>& words) {
  PackedBitTensor b(std::move(shape));
  const std::size_t total = shape_numel(b.shape());
  for (std::size_t i = 0; i < total; ++i) b.set_flat(i, (words[i / 64] >> (i % 64)) & 1u);
  return b;
}

void put_geom(io::Writer& w, std::size_t in_c, std::size_t out_c, std::size_t k,
              const ConvGeometry& g) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(in_c));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(out_c));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(k));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.stride));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.pad));
}

void put_raw_floats(io::Writer& w, const std::vector<float>& v) {
  w.put_bytes(v.data(), v.size() * sizeof(float));
}

std::vector<float> get_raw_floats(io::Reader& r, std::size_t n) {
  if (n > r.remaining() / sizeof(float)) r.fail("array of " + std::to_string(n) + " floats");
  std::vector<float> v(n);
  r.get_bytes(v.data(), n * sizeof(float));
  return v;
}

std::size_t get_dim(io::Reader& r, const char* what) {
  const auto v = r.get<std::uint32_t>();
  if (v == 0 || v > (1u << 20)) r.fail(std::string("invalid ") + what + " " + std::to_string(v));
  return v;
}

struct OpWriter {
  io::Writer& w;

  void operator()(const PackedModel::FloatConv& op) {
    const Shape& s = op.weight.shape();
    w.put<std::uint32_t>(kFloatConv);
    put_geom(w, s[1], s[0], s[2], op.geom);
    put_raw_floats(w, op.weight.storage());
  }
  void operator()(const PackedModel::BinaryConv& op) {
    const Shape& s = op.weight_bits.shape();
    w.put<std::uint32_t>(kBinaryConv);
    put_geom(w, s[1], s[0], s[2], op.geom);
    w.put<float>(op.specs.alpha_a);
    w.put<float>(op.specs.beta_a);
    put_raw_floats(w, op.specs.alpha_w);
    put_raw_floats(w, op.specs.beta_w);
    const auto words = dense_bits(op.weight_bits);
    w.put<std::uint64_t>(words.size());
    w.put_bytes(words.data(), words.size() * sizeof(std::uint64_t));
  }
  void operator()(const PackedModel::Affine& op) {
    w.put<std::uint32_t>(kAffine);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(op.scale.size()));
    put_raw_floats(w, op.scale);
    put_raw_floats(w, op.shift);
  }
  void operator()(const PackedModel::Slopes& op) {
    w.put<std::uint32_t>(kSlopes);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(op.gamma_plus.size()));
    put_raw_floats(w, op.gamma_plus);
    put_raw_floats(w, op.gamma_minus);
  }
  void operator()(const PackedModel::UnitBegin&) { w.put<std::uint32_t>(kUnitBegin); }
  void operator()(const PackedModel::ShortcutAdd& op) {
    w.put<std::uint32_t>(kShortcutAdd);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(op.shortcut.in_channels));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(op.shortcut.out_channels));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(op.shortcut.stride));
  }
  void operator()(const PackedModel::GlobalPool&) { w.put<std::uint32_t>(kGlobalPool); }
  void operator()(const PackedModel::Dense& op) {
    w.put<std::uint32_t>(kDense);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(op.weight.dim(1)));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(op.weight.dim(0)));
    put_raw_floats(w, op.weight.storage());
    put_raw_floats(w, op.bias.storage());
  }
};

PackedModel::Op read_op(io::Reader& r) {
  const std::size_t at = r.pos();
  const auto tag = r.get<std::uint32_t>();
  switch (tag) {
    case kFloatConv:
    case kBinaryConv: {
      const std::size_t in_c = get_dim(r, "input channels");
      const std::size_t out_c = get_dim(r, "output channels");
      const std::size_t k = get_dim(r, "kernel size");
      const std::size_t stride = get_dim(r, "stride");
      const std::size_t pad = r.get<std::uint32_t>();
      if (pad >= k + stride) r.fail("invalid padding " + std::to_string(pad));
      const ConvGeometry g{stride, pad};
      if (tag == kFloatConv) {
        Shape s{out_c, in_c, k, k};
        return PackedModel::FloatConv{Tensor(s, get_raw_floats(r, shape_numel(s))), g};
      }
      PackedModel::BinaryConv op;
      op.geom = g;
      op.specs.alpha_a = r.get<float>();
      op.specs.beta_a = r.get<float>();
      op.specs.alpha_w = get_raw_floats(r, out_c);
      op.specs.beta_w = get_raw_floats(r, out_c);
      const auto count = r.get<std::uint64_t>();
      const std::size_t expect = (out_c * in_c * k * k + 63) / 64;
      if (count != expect) {
        r.fail("weight bit record has " + std::to_string(count) + " words, expected " +
               std::to_string(expect));
      }
      if (count > r.remaining() / sizeof(std::uint64_t)) r.fail("truncated weight bits");
      std::vector<std::uint64_t> words(count);
      r.get_bytes(words.data(), count * sizeof(std::uint64_t));
      op.weight_bits = from_dense_bits({out_c, in_c, k, k}, words);
      return op;
    }
    case kAffine: {
      const std::size_t c = get_dim(r, "channels");
      PackedModel::Affine op;
      op.scale = get_raw_floats(r, c);
      op.shift = get_raw_floats(r, c);
      return op;
    }
    case kSlopes: {
      const std::size_t c = get_dim(r, "channels");
      PackedModel::Slopes op;
      op.gamma_plus = get_raw_floats(r, c);
      op.gamma_minus = get_raw_floats(r, c);
      return op;
    }
    case kUnitBegin: return PackedModel::UnitBegin{};
    case kShortcutAdd: {
      Shortcut sc;
      sc.in_channels = get_dim(r, "input channels");
      sc.out_channels = get_dim(r, "output channels");
      sc.stride = get_dim(r, "stride");
      return PackedModel::ShortcutAdd{sc};
    }
    case kGlobalPool: return PackedModel::GlobalPool{};
    case kDense: {
      const std::size_t in = get_dim(r, "input features");
      const std::size_t out = get_dim(r, "output features");
      PackedModel::Dense op;
      op.weight = Tensor({out, in}, get_raw_floats(r, out * in));
      op.bias = Tensor({out}, get_raw_floats(r, out));
      return op;
    }
    default:
      throw FormatError("bundle: unknown record tag " + std::to_string(tag) +
                        " at byte offset " + std::to_string(at));
  }
}

}  // namespace

PackedModel export_packed_model(const Model& model) {
  if (model.layers().empty()) throw Error("export: model has no layers");
  const ModelConfig& cfg = model.config();
  PackedModel pm;
  pm.in_channels = cfg.in_channels;
  pm.in_height = cfg.in_height;
  pm.in_width = cfg.in_width;
  pm.classes = cfg.classes;
  for (const auto& lp : model.layers()) {
    const Layer& l = *lp;
    if (const auto* u = dynamic_cast<const ResidualUnit*>(&l)) {
      pm.ops.emplace_back(PackedModel::UnitBegin{});
      export_conv(u->conv(), pm.ops);
      PackedModel::Affine bn;
      u->bn().folded(bn.scale, bn.shift);
      pm.ops.emplace_back(std::move(bn));
      if (u->uses_shortcut()) pm.ops.emplace_back(PackedModel::ShortcutAdd{u->shortcut()});
      if (u->act()) export_slopes(*u->act(), pm.ops);
    } else if (dynamic_cast<const GlobalAvgPool*>(&l)) {
      pm.ops.emplace_back(PackedModel::GlobalPool{});
    } else if (const auto* lin = dynamic_cast<const Linear*>(&l)) {
      pm.ops.emplace_back(PackedModel::Dense{lin->weight.value, lin->bias.value});
    } else if (dynamic_cast<const Maxout*>(&l)) {
      export_slopes(l, pm.ops);
    } else {
      export_conv(l, pm.ops);
    }
  }
  pm.finalize();
  return pm;
}

void PackedModel::finalize() {
  if (ops.empty()) throw ShapeError("packed model has no layers");
  Shape s{1, in_channels, in_height, in_width};
  Shape unit_in;
  for (auto& op : ops) {
    if (auto* fc = std::get_if<FloatConv>(&op)) {
      const Shape& w = fc->weight.shape();
      if (s.size() != 4 || s[1] != w[1]) {
        throw ShapeError("packed float conv " + shape_str(w) + " vs input " + shape_str(s));
      }
      s = {s[0], w[0], conv_out_extent(s[2], w[2], fc->geom), conv_out_extent(s[3], w[3], fc->geom)};
    } else if (auto* bc = std::get_if<BinaryConv>(&op)) {
      const Shape& w = bc->weight_bits.shape();
      if (s.size() != 4 || s[1] != w[1]) {
        throw ShapeError("packed binary conv " + shape_str(w) + " vs input " + shape_str(s));
      }
      bc->in_height = s[2];
      bc->in_width = s[3];
      bc->bias = precompute_bias(bc->weight_bits, bc->specs.alpha_w, bc->specs.beta_w,
                                 bc->specs.beta_a, {bc->geom, s[2], s[3]});
      s = {s[0], w[0], conv_out_extent(s[2], w[2], bc->geom), conv_out_extent(s[3], w[3], bc->geom)};
    } else if (auto* af = std::get_if<Affine>(&op)) {
      if (s.size() != 4 || s[1] != af->scale.size()) {
        throw ShapeError("packed batch-norm of " + std::to_string(af->scale.size()) +
                         " channels vs input " + shape_str(s));
      }
    } else if (auto* sl = std::get_if<Slopes>(&op)) {
      if (s.size() < 2 || s[1] != sl->gamma_plus.size()) {
        throw ShapeError("packed maxout of " + std::to_string(sl->gamma_plus.size()) +
                         " channels vs input " + shape_str(s));
      }
    } else if (std::holds_alternative<UnitBegin>(op)) {
      unit_in = s;
    } else if (auto* sa = std::get_if<ShortcutAdd>(&op)) {
      if (unit_in.empty() || sa->shortcut.output_shape(unit_in) != s) {
        throw ShapeError("packed shortcut does not match its unit");
      }
    } else if (std::holds_alternative<GlobalPool>(op)) {
      if (s.size() != 4) throw ShapeError("packed global pool needs NCHW input");
      s = {s[0], s[1], 1, 1};
    } else if (auto* d = std::get_if<Dense>(&op)) {
      if (shape_numel(s) != s[0] * d->weight.dim(1)) {
        throw ShapeError("packed linear " + shape_str(d->weight.shape()) + " vs input " +
                         shape_str(s));
      }
      s = {s[0], d->weight.dim(0)};
    }
  }
  if (shape_numel(s) != classes) {
    throw ShapeError("packed model ends in " + shape_str(s) + ", expected " +
                     std::to_string(classes) + " classes");
  }
}

Tensor PackedModel::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels || x.dim(2) != in_height || x.dim(3) != in_width) {
    throw ShapeError("packed model expects [N, " + std::to_string(in_channels) + ", " +
                     std::to_string(in_height) + ", " + std::to_string(in_width) + "], got " +
                     shape_str(x.shape()));
  }
  Tensor h = x, unit_in;
  for (const auto& op : ops) {
    if (const auto* fc = std::get_if<FloatConv>(&op)) {
      h = conv2d_ref(h, fc->weight, fc->geom);
    } else if (const auto* bc = std::get_if<BinaryConv>(&op)) {
      const float beta_a = bc->specs.beta_a;
      const PackedBitTensor a_bits = pack_ge(h, std::span<const float>(&beta_a, 1));
      h = binary_conv_packed(a_bits, bc->weight_bits, bc->specs, bc->geom, &bc->bias);
    } else if (const auto* af = std::get_if<Affine>(&op)) {
      h = batchnorm_affine(h, af->scale, af->shift);
    } else if (const auto* sl = std::get_if<Slopes>(&op)) {
      h = maxout_apply(h, sl->gamma_plus, sl->gamma_minus);
    } else if (std::holds_alternative<UnitBegin>(op)) {
      unit_in = h;
    } else if (const auto* sa = std::get_if<ShortcutAdd>(&op)) {
      const Tensor s = sa->shortcut.forward(unit_in);
      for (std::size_t i = 0; i < h.numel(); ++i) h[i] += s[i];
    } else if (std::holds_alternative<GlobalPool>(op)) {
      h = global_avg_pool(h);
    } else if (const auto* d = std::get_if<Dense>(&op)) {
      h = linear_apply(h, d->weight, d->bias);
    }
  }
  if (h.rank() == 4) h = h.reshaped({h.dim(0), h.dim(1)});
  return h;
}

std::size_t PackedModel::binary_layers() const {
  std::size_t n = 0;
  for (const auto& op : ops) n += std::holds_alternative<BinaryConv>(op) ? 1 : 0;
  return n;
}

std::vector<std::uint8_t> serialize_bundle(const PackedModel& pm) {
  if (pm.ops.empty()) throw Error("bundle: packed model has no layers");
  io::Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pm.in_channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pm.in_height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pm.in_width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pm.classes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pm.ops.size()));
  OpWriter ow{w};
  for (const auto& op : pm.ops) std::visit(ow, op);
  return std::move(w.bytes());
}

PackedModel deserialize_bundle(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes.data(), bytes.size(), "bundle");
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kMagic, 4)) r.fail("bad magic, not an ADBN bundle");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  PackedModel pm;
  pm.in_channels = get_dim(r, "input channels");
  pm.in_height = get_dim(r, "input height");
  pm.in_width = get_dim(r, "input width");
  pm.classes = get_dim(r, "class count");
  const auto count = r.get<std::uint32_t>();
  if (count == 0) r.fail("bundle has no layer records");
  for (std::uint32_t i = 0; i < count; ++i) pm.ops.push_back(read_op(r));
  if (!r.done()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  try {
    pm.finalize();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("bundle: inconsistent graph: ") + e.what());
  }
  return pm;
}

void save_bundle(const PackedModel& pm, const std::string& path) {
  io::write_file(path, serialize_bundle(pm));
}

PackedModel load_bundle(const std::string& path) { return deserialize_bundle(io::read_file(path)); }

}  // namespace adabin
