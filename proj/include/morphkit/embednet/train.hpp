#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "morphkit/embednet/model.hpp"
#include "morphkit/gradcore/optim.hpp"
#include "morphkit/imaging/dataset.hpp"
#include "morphkit/imaging/triplet.hpp"

namespace morphkit {

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 128;
  LrSchedule lr;
  std::uint64_t seed = 1;
  TripletOptions triplet;
  // Stage 2 only: train a questioned-image encoder while a copy of the
  // stage-1 encoder ("trusted.") embeds the trusted image and stays frozen.
  bool dual_encoder = false;
  // Stage 2 only: update the critics and the encoder in separate steps
  // instead of one joint step.
  bool alternate_updates = false;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Maps subject ids to contiguous class indices (ascending subject order).
class ClassMap {
 public:
  explicit ClassMap(std::span<const Sample> samples);
  std::size_t size() const { return subjects_.size(); }
  std::size_t index(int subject) const;
  bool contains(int subject) const;
  const std::vector<int>& subjects() const { return subjects_; }

 private:
  std::vector<int> subjects_;
};

// Minimizes the stage-1 objective on the real samples. Triplets are rebuilt
// every epoch (fresh landmark perturbations); the order is shuffled per
// epoch. The head W is renormalized after every step. Steps with lr = 0
// leave the parameters untouched.
TrainResult train_stage1(std::span<const Sample> samples, const ModelConfig& config, ParamStore init,
                         const TrainConfig& train, const EpochCallback& on_epoch = {});

// Minimizes the stage-2 objective. Every epoch visits each same-subject real
// pair once (random orientation); each batch holds half genuine pairs and
// equal numbers of cross-subject real imposters and (real, morph) imposters,
// where a morph is paired with a real capture of its target subject.
TrainResult train_stage2(std::span<const Sample> samples, const ModelConfig& config, ParamStore stage1,
                         const TrainConfig& train, const EpochCallback& on_epoch = {});

struct CheckpointInfo {
  ModelConfig model;
  int stage = 1;
  std::uint64_t seed = 0;
  bool dual_encoder = false;
  // Stage 2 only: update the critics and the encoder in separate steps
  // instead of one joint step.
  bool alternate_updates = false;
};

// Parameters in the binary store format plus a key=value sidecar at
// path + ".meta".
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const CheckpointInfo& info);
ParamStore load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace morphkit
