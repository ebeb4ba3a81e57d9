#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adabin/tensor.hpp"

namespace adabin {

enum class DatasetKind { Cifar10, Mnist };

const char* dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& name);

/// Images are stored un-normalized in [0, 1]; `mean`/`std` are applied
/// when a batch is assembled.
struct Dataset {
  DatasetKind kind = DatasetKind::Cifar10;
  std::string split;
  Tensor images;            // [N, C, H, W]
  std::vector<int> labels;  // [N]
  std::vector<float> mean;  // [C]
  std::vector<float> std;   // [C]
  std::size_t classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Reads data_batch_1..5.bin and test_batch.bin from `dir` (or from
/// `dir`/cifar-10-batches-bin). Each file must hold exactly
/// `records_per_file` records; 0 accepts any whole number of records.
DatasetPair load_cifar10(const std::string& dir,
                         std::size_t records_per_file = kCifarRecordsPerFile);
Dataset read_cifar_batch(const std::string& path, std::size_t records_expected);
void write_cifar_batch(const std::string& path, std::span<const std::uint8_t> pixels,
                       std::span<const int> labels);

/// Reads train-images-idx3-ubyte / train-labels-idx1-ubyte and their
/// t10k-* counterparts.
DatasetPair load_mnist(const std::string& dir);
Dataset read_mnist_pair(const std::string& images_path, const std::string& labels_path,
                        const std::string& split);
void write_idx_images(const std::string& path, std::size_t count, std::size_t rows,
                      std::size_t cols, std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::string& path, std::span<const int> labels);

/// Loads the dataset named by `kind` from `dir`.
DatasetPair load_dataset(DatasetKind kind, const std::string& dir,
                         std::size_t cifar_records_per_file = kCifarRecordsPerFile);

/// Writes a small learnable CIFAR-format dataset (class-dependent colour
/// and stripe patterns plus noise) with `per_file` records per train file.
void write_synthetic_cifar10(const std::string& dir, std::size_t per_file, std::size_t test_count,
                             std::uint64_t seed);

struct Batch {
  Tensor images;  // normalized [B, C, H, W]
  std::vector<int> labels;
};

/// Pad-and-crop offset plus flip decision for one image.
struct AugmentChoice {
  std::size_t dy = 4, dx = 4;
  bool flip = false;
};

/// Crops `pad`-padded image at (dy, dx) back to its own size and flips
/// horizontally if requested. [C, H, W] in, same shape out.
void augment_image(std::span<const float> in, std::size_t c, std::size_t h, std::size_t w,
                   std::size_t pad, const AugmentChoice& choice, std::span<float> out);

using DataRng = std::mt19937_64;

/// Gathers `indices` from the dataset, applies train-time augmentation when
/// `rng` is non-null (CIFAR only; MNIST is left unchanged) and normalizes.
Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, DataRng* rng);

/// Stratified sample of `count` indices with an equal share per class
/// (remainders go to the lowest labels), in ascending order.
std::vector<std::size_t> stratified_subset(std::span<const int> labels, std::size_t classes,
                                           std::size_t count, std::uint64_t seed);

/// Keeps only the listed examples.
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace adabin
