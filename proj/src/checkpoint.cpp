#include "adabin/checkpoint.hpp"

#include <sstream>

#include "adabin/error.hpp"
#include "binary_io.hpp"

namespace adabin {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

enum Tag : std::uint32_t {
  kConfig = 1,
  kEpoch = 2,
  kParam = 3,
  kBuffer = 4,
  kRng = 5,
  kEnd = 0xFFFFFFFFu,
};

void put_shape(io::Writer& w, const Shape& s) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  for (auto d : s) w.put<std::uint64_t>(d);
}

Shape get_shape(io::Reader& r) {
  const auto rank = r.get<std::uint32_t>();
  if (rank > 8) r.fail("tensor rank " + std::to_string(rank));
  Shape s(rank);
  for (auto& d : s) d = r.get<std::uint64_t>();
  return s;
}

void put_record(io::Writer& out, std::uint32_t tag, io::Writer& payload) {
  out.put<std::uint32_t>(tag);
  out.put<std::uint64_t>(payload.size());
  out.put_bytes(payload.bytes().data(), payload.size());
}

std::vector<float> checked_floats(io::Reader& r, const Shape& s) {
  auto v = r.get_floats();
  if (v.size() != shape_numel(s)) {
    r.fail("array of " + std::to_string(v.size()) + " values for shape " + shape_str(s));
  }
  return v;
}

}  // namespace

RunConfig Checkpoint::config() const {
  return make_run_config(parse_config_text(config_text, "checkpoint config"));
}

Checkpoint capture_checkpoint(const RunConfig& cfg, Model& model, std::uint32_t epoch,
                              double best_accuracy, const DataRng& rng) {
  Checkpoint ck;
  ck.config_text = cfg.to_text();
  ck.epoch = epoch;
  ck.best_accuracy = best_accuracy;
  for (Parameter* p : model.parameters()) {
    ck.params.push_back({p->name, p->role, p->value.shape(), p->value.storage(),
                         p->momentum.storage()});
  }
  for (const Buffer& b : model.buffers()) {
    ck.buffers.push_back({b.name, b.tensor->shape(), b.tensor->storage()});
  }
  std::ostringstream os;
  os << rng;
  ck.rng_state = os.str();
  return ck;
}

void restore_model(const Checkpoint& ck, Model& model) {
  const auto params = model.parameters();
  if (params.size() != ck.params.size()) {
    throw FormatError("checkpoint has " + std::to_string(ck.params.size()) +
                      " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const auto& rec = ck.params[i];
    if (rec.name != p.name || rec.role != p.role || rec.shape != p.value.shape()) {
      throw FormatError("checkpoint parameter '" + rec.name + "' " + shape_str(rec.shape) +
                        " does not match model parameter '" + p.name + "' " +
                        shape_str(p.value.shape()));
    }
    p.value = Tensor(rec.shape, rec.value);
    p.momentum = Tensor(rec.shape, rec.momentum);
    p.zero_grad();
  }
  const auto buffers = model.buffers();
  if (buffers.size() != ck.buffers.size()) {
    throw FormatError("checkpoint has " + std::to_string(ck.buffers.size()) +
                      " buffers, model has " + std::to_string(buffers.size()));
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    const auto& rec = ck.buffers[i];
    if (rec.name != buffers[i].name || rec.shape != buffers[i].tensor->shape()) {
      throw FormatError("checkpoint buffer '" + rec.name + "' does not match model buffer '" +
                        buffers[i].name + "'");
    }
    *buffers[i].tensor = Tensor(rec.shape, rec.value);
  }
}

void restore_rng(const Checkpoint& ck, DataRng& rng) {
  std::istringstream is(ck.rng_state);
  is >> rng;
  if (!is) throw FormatError("checkpoint RNG state is unreadable");
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck) {
  const RunConfig cfg = ck.config();
  auto model = build_model(cfg.model_config(), cfg.seed);
  restore_model(ck, *model);
  return model;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  io::Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kVersion);
  {
    io::Writer p;
    p.put_string(ck.config_text);
    put_record(w, kConfig, p);
  }
  {
    io::Writer p;
    p.put<std::uint32_t>(ck.epoch);
    p.put<double>(ck.best_accuracy);
    put_record(w, kEpoch, p);
  }
  for (const auto& rec : ck.params) {
    io::Writer p;
    p.put_string(rec.name);
    p.put<std::uint8_t>(static_cast<std::uint8_t>(rec.role));
    put_shape(p, rec.shape);
    p.put_floats(rec.value);
    p.put_floats(rec.momentum);
    put_record(w, kParam, p);
  }
  for (const auto& rec : ck.buffers) {
    io::Writer p;
    p.put_string(rec.name);
    put_shape(p, rec.shape);
    p.put_floats(rec.value);
    put_record(w, kBuffer, p);
  }
  {
    io::Writer p;
    p.put_string(ck.rng_state);
    put_record(w, kRng, p);
  }
  io::Writer end;
  put_record(w, kEnd, end);
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes.data(), bytes.size(), "checkpoint");
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kMagic, 4)) r.fail("bad magic, not an ADCK checkpoint");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  bool have_config = false, have_epoch = false, have_rng = false, ended = false;
  while (!ended) {
    const std::size_t record_at = r.pos();
    const auto tag = r.get<std::uint32_t>();
    const auto len = r.get<std::uint64_t>();
    if (len > r.remaining()) {
      throw FormatError("checkpoint: record at byte offset " + std::to_string(record_at) +
                        " has length " + std::to_string(len) + " past end of file");
    }
    io::Reader p(bytes.data() + r.pos(), static_cast<std::size_t>(len),
                 "checkpoint record at byte offset " + std::to_string(record_at));
    r.skip(static_cast<std::size_t>(len));
    switch (tag) {
      case kConfig:
        ck.config_text = p.get_string();
        have_config = true;
        break;
      case kEpoch:
        ck.epoch = p.get<std::uint32_t>();
        ck.best_accuracy = p.get<double>();
        have_epoch = true;
        break;
      case kParam: {
        Checkpoint::ParamRecord rec;
        rec.name = p.get_string();
        const auto role = p.get<std::uint8_t>();
        if (role > static_cast<std::uint8_t>(Role::BatchNorm)) p.fail("unknown role " + std::to_string(role));
        rec.role = static_cast<Role>(role);
        rec.shape = get_shape(p);
        rec.value = checked_floats(p, rec.shape);
        rec.momentum = checked_floats(p, rec.shape);
        ck.params.push_back(std::move(rec));
        break;
      }
      case kBuffer: {
        Checkpoint::BufferRecord rec;
        rec.name = p.get_string();
        rec.shape = get_shape(p);
        rec.value = checked_floats(p, rec.shape);
        ck.buffers.push_back(std::move(rec));
        break;
      }
      case kRng:
        ck.rng_state = p.get_string();
        have_rng = true;
        break;
      case kEnd: ended = true; break;
      default:
        throw FormatError("checkpoint: unknown record tag " + std::to_string(tag) +
                          " at byte offset " + std::to_string(record_at));
    }
    if (!p.done()) p.fail(std::to_string(p.remaining()) + " unread bytes in record");
  }
  if (!r.done()) r.fail("trailing bytes after END record");
  if (!have_config || !have_epoch || !have_rng) {
    throw FormatError("checkpoint: missing config, epoch or RNG record");
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  io::write_file(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace adabin
