#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "adabin/data.hpp"
#include "adabin/model.hpp"

namespace adabin {

enum class Profile { Paper, Desk };

/// Everything needed to reproduce one run, given the dataset files and
/// thread count. Serialized as flat `key=value` lines.
struct RunConfig {
  std::string model = "resnet20-adabin";
  // Toggles that override the model id defaults; empty means "from id".
  std::string weight;
  std::string activation;
  std::string nonlinearity;
  bool float_first = true;
  bool float_last = true;
  double width = 1.0;

  DatasetKind dataset = DatasetKind::Cifar10;
  std::string data_dir;
  std::size_t subset = 0;       ///< train examples, 0 = full split
  std::size_t test_subset = 0;  ///< test examples, 0 = full split
  std::size_t cifar_records = kCifarRecordsPerFile;  ///< 0 = any whole count
  bool augment = true;

  Profile profile = Profile::Paper;
  int epochs = 400;
  std::size_t batch = 256;
  float lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  float latent_clip = 0.0f;  ///< clamp binary-conv latent weights to [-c, c], 0 = off
  std::uint64_t seed = 0;
  AlphaGradMode alpha_grad = AlphaGradMode::Consistent;
  std::string out = "runs/default";

  ModelConfig model_config() const;
  std::string to_text() const;
};

/// Ordered key/value assignments, as read from a file or the command line.
using ConfigAssignments = std::vector<std::pair<std::string, std::string>>;

/// Parses `key=value` lines; '#' starts a comment. A key repeated with a
/// different value is a contradiction and throws ConfigError.
ConfigAssignments parse_config_text(const std::string& text, const std::string& origin);
ConfigAssignments read_config_file(const std::string& path);

/// Builds a config: the profile is applied first (from `assignments` if it
/// names one), then every other assignment in order. Later sources override
/// earlier ones. Validates the result.
RunConfig make_run_config(const ConfigAssignments& assignments);

/// Throws ConfigError on contradictory or out-of-range settings.
void validate(const RunConfig& cfg);

const char* profile_name(Profile p);
AlphaGradMode alpha_grad_from_name(const std::string& s);
const char* alpha_grad_name(AlphaGradMode m);
WeightMode weight_mode_from_name(const std::string& s);
ActivationMode activation_mode_from_name(const std::string& s);
Nonlinearity nonlinearity_from_name(const std::string& s);

}  // namespace adabin
