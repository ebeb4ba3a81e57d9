#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adabin/config.hpp"
#include "adabin/data.hpp"
#include "adabin/model.hpp"

namespace adabin {

/// Versioned training snapshot. Byte layout in docs/formats.md.
struct Checkpoint {
  struct ParamRecord {
    std::string name;
    Role role = Role::Weight;
    Shape shape;
    std::vector<float> value;
    std::vector<float> momentum;
  };
  struct BufferRecord {
    std::string name;
    Shape shape;
    std::vector<float> value;
  };

  std::string config_text;
  std::uint32_t epoch = 0;  ///< number of completed epochs
  double best_accuracy = 0.0;
  std::vector<ParamRecord> params;
  std::vector<BufferRecord> buffers;
  std::string rng_state;

  RunConfig config() const;
};

Checkpoint capture_checkpoint(const RunConfig& cfg, Model& model, std::uint32_t epoch,
                              double best_accuracy, const DataRng& rng);

/// Copies values and momentum buffers into a model built from the same
/// config. Throws on any name/role/shape mismatch.
void restore_model(const Checkpoint& ck, Model& model);
void restore_rng(const Checkpoint& ck, DataRng& rng);

/// Builds the model described by the snapshot config and restores it.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace adabin
