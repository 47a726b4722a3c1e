#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "morphkit/detect/pairs.hpp"
#include "morphkit/detect/svm.hpp"
#include "morphkit/embednet/train.hpp"

namespace morphkit {

// Flat key=value run configuration. Every field has a default; unknown keys
// are rejected when parsing.
struct RunConfig {
  std::string manifest;
  // Cross-dataset evaluation: when set, eval scores every subject of this
  // manifest instead of the held-out split of `manifest`.
  std::string eval_manifest;
  std::uint64_t seed = 1;

  ModelConfig model;

  LrSchedule lr_stage1{0.1, 0.9, 5, 1e-6};
  LrSchedule lr_stage2{0.01, 0.9, 5, 1e-6};
  int epochs_stage1 = 30;
  int epochs_stage2 = 30;
  std::size_t batch_size = 128;
  TripletOptions triplet;
  bool dual_encoder = false;
  bool alternate_updates = false;

  double train_fraction = 0.5;
  double validation_fraction = 0.1;

  std::vector<BetaConfig> beta_grid = default_beta_grid();
  // Empty: choose beta on the validation split.
  std::vector<BetaConfig> beta_fixed;
  Polarity polarity = Polarity::LowIsAttack;
  bool trusted_known = true;

  SvmParams svm;
  std::size_t bsif_filters = 8;
  std::size_t bsif_size = 3;
  std::string bsif_file;
  std::size_t bsif_patches = 20000;
  std::size_t baseline_max_train_pairs = 4000;

  std::vector<std::uint64_t> gradcheck_seeds{1, 2, 3};
  std::size_t gradcheck_coords = 6;
  double gradcheck_eps = 1e-6;
  double gradcheck_tolerance = 1e-3;

  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical text: every key in a fixed order with round-trip precision.
std::string config_text(const RunConfig& config);
// 64-bit FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

TrainConfig stage_train_config(const RunConfig& config, int stage);

}  // namespace morphkit
