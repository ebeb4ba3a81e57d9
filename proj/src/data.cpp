#include "adabin/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "adabin/error.hpp"
#include "binary_io.hpp"

namespace adabin {

namespace fs = std::filesystem;

namespace {

// Standard per-channel CIFAR-10 statistics of [0, 1] pixels.
const std::vector<float> kCifarMean = {0.4914f, 0.4822f, 0.4465f};
const std::vector<float> kCifarStd = {0.2470f, 0.2435f, 0.2616f};
const std::vector<float> kMnistMean = {0.1307f};
const std::vector<float> kMnistStd = {0.3081f};

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

Dataset empty_like(const Dataset& ds, std::size_t n) {
  Dataset out;
  out.kind = ds.kind;
  out.split = ds.split;
  out.mean = ds.mean;
  out.std = ds.std;
  out.classes = ds.classes;
  out.images = Tensor({n, ds.channels(), ds.height(), ds.width()});
  out.labels.resize(n);
  return out;
}

Dataset concat(std::vector<Dataset> parts, const std::string& split) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  Dataset out = empty_like(parts.front(), n);
  out.split = split;
  const std::size_t per = out.channels() * out.height() * out.width();
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), out.images.data().begin() + at * per);
    std::copy(p.labels.begin(), p.labels.end(), out.labels.begin() + at);
    at += p.size();
  }
  return out;
}

}  // namespace

const char* dataset_kind_name(DatasetKind k) { return k == DatasetKind::Mnist ? "mnist" : "cifar10"; }

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "cifar10") return DatasetKind::Cifar10;
  if (name == "mnist") return DatasetKind::Mnist;
  throw ConfigError("unknown dataset '" + name + "'; valid: cifar10 mnist");
}

// ---------------------------------------------------------------- CIFAR-10

Dataset read_cifar_batch(const std::string& path, std::size_t records_expected) {
  const std::vector<std::uint8_t> bytes = io::read_file(path);
  if (records_expected != 0 && bytes.size() != records_expected * kCifarRecordBytes) {
    throw FormatError(path + ": expected " + std::to_string(records_expected * kCifarRecordBytes) +
                      " bytes (" + std::to_string(records_expected) + " records), got " +
                      std::to_string(bytes.size()));
  }
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t whole = bytes.size() / kCifarRecordBytes + 1;
    throw FormatError(path + ": expected a multiple of " + std::to_string(kCifarRecordBytes) +
                      " bytes (e.g. " + std::to_string(whole * kCifarRecordBytes) + "), got " +
                      std::to_string(bytes.size()));
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.kind = DatasetKind::Cifar10;
  ds.mean = kCifarMean;
  ds.std = kCifarStd;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError(path + ": record " + std::to_string(r) + " has label " +
                        std::to_string(rec[0]) + " (must be 0..9)");
    }
    ds.labels[r] = rec[0];
    float* dst = ds.images.data().data() + r * 3072;
    for (std::size_t i = 0; i < 3072; ++i) dst[i] = static_cast<float>(rec[1 + i]) / 255.0f;
  }
  return ds;
}

void write_cifar_batch(const std::string& path, std::span<const std::uint8_t> pixels,
                       std::span<const int> labels) {
  if (pixels.size() != labels.size() * 3072) {
    throw ShapeError("write_cifar_batch: need 3072 pixels per label");
  }
  std::vector<std::uint8_t> out;
  out.reserve(labels.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] > 9) throw Error("write_cifar_batch: label out of range");
    out.push_back(static_cast<std::uint8_t>(labels[r]));
    out.insert(out.end(), pixels.begin() + r * 3072, pixels.begin() + (r + 1) * 3072);
  }
  io::write_file(path, out);
}

DatasetPair load_cifar10(const std::string& dir, std::size_t records_per_file) {
  fs::path root(dir);
  if (!fs::exists(root / "data_batch_1.bin") && fs::exists(root / "cifar-10-batches-bin")) {
    root /= "cifar-10-batches-bin";
  }
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) {
    parts.push_back(
        read_cifar_batch((root / ("data_batch_" + std::to_string(i) + ".bin")).string(),
                         records_per_file));
  }
  DatasetPair p;
  p.train = concat(std::move(parts), "train");
  p.test = read_cifar_batch((root / "test_batch.bin").string(), records_per_file);
  p.test.split = "test";
  return p;
}

// ------------------------------------------------------------------- MNIST

Dataset read_mnist_pair(const std::string& images_path, const std::string& labels_path,
                        const std::string& split) {
  const auto img = io::read_file(images_path);
  const auto lab = io::read_file(labels_path);
  if (img.size() < 16) {
    throw FormatError(images_path + ": expected at least 16 header bytes, got " +
                      std::to_string(img.size()));
  }
  if (lab.size() < 8) {
    throw FormatError(labels_path + ": expected at least 8 header bytes, got " +
                      std::to_string(lab.size()));
  }
  if (read_be32(img, 0) != kIdxImages) {
    throw FormatError(images_path + ": bad IDX image magic " + hex32(read_be32(img, 0)) +
                      " (expected " + hex32(kIdxImages) + ")");
  }
  if (read_be32(lab, 0) != kIdxLabels) {
    throw FormatError(labels_path + ": bad IDX label magic " + hex32(read_be32(lab, 0)) +
                      " (expected " + hex32(kIdxLabels) + ")");
  }
  const std::size_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
  const std::size_t nl = read_be32(lab, 4);
  if (nl != n) {
    throw FormatError(labels_path + ": " + std::to_string(nl) + " labels for " +
                      std::to_string(n) + " images");
  }
  if (img.size() != 16 + n * rows * cols) {
    throw FormatError(images_path + ": expected " + std::to_string(16 + n * rows * cols) +
                      " bytes, got " + std::to_string(img.size()));
  }
  if (lab.size() != 8 + n) {
    throw FormatError(labels_path + ": expected " + std::to_string(8 + n) + " bytes, got " +
                      std::to_string(lab.size()));
  }
  Dataset ds;
  ds.kind = DatasetKind::Mnist;
  ds.split = split;
  ds.mean = kMnistMean;
  ds.std = kMnistStd;
  ds.images = Tensor({n, 1, rows, cols});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    ds.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9) {
      throw FormatError(labels_path + ": item " + std::to_string(i) + " has label " +
                        std::to_string(lab[8 + i]));
    }
    ds.labels[i] = lab[8 + i];
  }
  return ds;
}

void write_idx_images(const std::string& path, std::size_t count, std::size_t rows,
                      std::size_t cols, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != count * rows * cols) throw ShapeError("write_idx_images: pixel count");
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxImages);
  put_be32(out, static_cast<std::uint32_t>(count));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  out.insert(out.end(), pixels.begin(), pixels.end());
  io::write_file(path, out);
}

void write_idx_labels(const std::string& path, std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabels);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) out.push_back(static_cast<std::uint8_t>(l));
  io::write_file(path, out);
}

DatasetPair load_mnist(const std::string& dir) {
  const fs::path root(dir);
  DatasetPair p;
  p.train = read_mnist_pair((root / "train-images-idx3-ubyte").string(),
                            (root / "train-labels-idx1-ubyte").string(), "train");
  p.test = read_mnist_pair((root / "t10k-images-idx3-ubyte").string(),
                           (root / "t10k-labels-idx1-ubyte").string(), "test");
  return p;
}

DatasetPair load_dataset(DatasetKind kind, const std::string& dir,
                         std::size_t cifar_records_per_file) {
  if (dir.empty()) throw ConfigError("no data directory given (set --data-dir or ADABIN_DATA)");
  return kind == DatasetKind::Mnist ? load_mnist(dir) : load_cifar10(dir, cifar_records_per_file);
}

void write_synthetic_cifar10(const std::string& dir, std::size_t per_file, std::size_t test_count,
                             std::uint64_t seed) {
  fs::create_directories(dir);
  DataRng rng(seed);
  std::uniform_int_distribution<int> noise(-40, 40);
  std::uniform_int_distribution<int> label_dist(0, 9);
  std::uniform_int_distribution<int> phase_dist(0, 7);
  auto make = [&](std::size_t n, const std::string& name) {
    std::vector<std::uint8_t> px(n * 3072);
    std::vector<int> labels(n);
    for (std::size_t r = 0; r < n; ++r) {
      const int label = label_dist(rng);
      labels[r] = label;
      const int phase = phase_dist(rng);
      const bool vertical = label % 2 == 0;
      const int period = 2 + label / 2;
      for (int c = 0; c < 3; ++c) {
        const int base = 60 + 30 * ((label + c) % 5);
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x) {
            const int t = (vertical ? x : y) + phase;
            const int stripe = (t / period) % 2 ? 50 : -50;
            const int v = base + stripe + noise(rng);
            px[r * 3072 + (c * 32 + y) * 32 + x] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
          }
      }
    }
    write_cifar_batch((fs::path(dir) / name).string(), px, labels);
  };
  for (int i = 1; i <= 5; ++i) make(per_file, "data_batch_" + std::to_string(i) + ".bin");
  make(test_count, "test_batch.bin");
}

// ------------------------------------------------------------ augmentation

void augment_image(std::span<const float> in, std::size_t c, std::size_t h, std::size_t w,
                   std::size_t pad, const AugmentChoice& choice, std::span<float> out) {
  if (choice.dy > 2 * pad || choice.dx > 2 * pad) throw Error("augment: crop offset out of range");
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        // Position in the padded image, mapped back to the source.
        const long sy = static_cast<long>(y + choice.dy) - static_cast<long>(pad);
        const std::size_t xo = choice.flip ? w - 1 - x : x;
        const long sx = static_cast<long>(xo + choice.dx) - static_cast<long>(pad);
        float v = 0.0f;
        if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w)) {
          v = in[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
        }
        out[(ch * h + y) * w + x] = v;
      }
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, DataRng* rng) {
  const std::size_t c = ds.channels(), h = ds.height(), w = ds.width(), per = c * h * w;
  Batch b;
  b.images = Tensor({indices.size(), c, h, w});
  b.labels.resize(indices.size());
  constexpr std::size_t kPad = 4;
  std::uniform_int_distribution<std::size_t> off(0, 2 * kPad);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= ds.size()) throw Error("make_batch: index " + std::to_string(src) + " out of range");
    b.labels[i] = ds.labels[src];
    const auto in = ds.images.data().subspan(src * per, per);
    const auto out = b.images.data().subspan(i * per, per);
    if (rng && ds.kind == DatasetKind::Cifar10) {
      AugmentChoice ch;
      ch.dy = off(*rng);
      ch.dx = off(*rng);
      ch.flip = coin(*rng);
      augment_image(in, c, h, w, kPad, ch, out);
    } else {
      std::copy(in.begin(), in.end(), out.begin());
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float m = ds.mean[ch], inv = 1.0f / ds.std[ch];
      for (std::size_t p = 0; p < h * w; ++p) out[ch * h * w + p] = (out[ch * h * w + p] - m) * inv;
    }
  }
  return b;
}

std::vector<std::size_t> stratified_subset(std::span<const int> labels, std::size_t classes,
                                           std::size_t count, std::uint64_t seed) {
  if (count >= labels.size()) {
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels[i]).push_back(i);
  DataRng rng(seed);
  std::vector<std::size_t> out;
  std::size_t want_total = count;
  // Classes are filled in label order; a class that runs short passes its
  // remainder on to the classes after it.
  for (std::size_t k = 0; k < classes; ++k) {
    const std::size_t left = classes - k;
    const std::size_t share = want_total / left + (want_total % left ? 1 : 0);
    auto& pool = by_class[k];
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t take = std::min(share, pool.size());
    out.insert(out.end(), pool.begin(), pool.begin() + take);
    want_total -= take;
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out = empty_like(ds, indices.size());
  const std::size_t per = ds.channels() * ds.height() * ds.width();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw Error("subset: index out of range");
    const auto src = ds.images.data().subspan(indices[i] * per, per);
    std::copy(src.begin(), src.end(), out.images.data().begin() + i * per);
    out.labels[i] = ds.labels[indices[i]];
  }
  return out;
}

}  // namespace adabin
