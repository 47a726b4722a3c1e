#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphkit/cli/config.hpp"
#include "morphkit/features/descriptors.hpp"
#include "morphkit/imaging/dataset.hpp"

namespace morphkit {

// Bad invocation (missing or inconsistent flags); the tool exits with 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every command writes its outputs under `out` with fixed file names and
// throws on failure.

void cmd_synth(const SynthConfig& synth, const std::filesystem::path& out);

struct MorphRequest {
  std::filesystem::path image_a, landmarks_a, image_b, landmarks_b;
  MorphOptions options;
};
// Writes morph.ppm and morph.txt.
void cmd_morph(const MorphRequest& request, const std::filesystem::path& out);

// Builds triplets for the first `count` real training images and writes
// their three images plus triplets.csv.
void cmd_triplets(const RunConfig& config, std::size_t count, const std::filesystem::path& out);

// Stage 1 starts from the seeded initialization unless `init` is given;
// stage 2 requires `init`. Writes checkpoint.mkpt (+ .meta), train_log.csv
// and report.txt.
void cmd_train(const RunConfig& config, int stage, const std::filesystem::path& init,
               const std::filesystem::path& out);

// Scores the held-out test pairs (or every pair of eval_manifest) with the
// fused similarity. Writes report.txt, scores.csv and det.csv.
void cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& out);

// D-EER of every beta_grid entry on the validation split; writes report.txt.
void cmd_sweep_beta(const RunConfig& config, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& out);

// Baseline pair feature: LBP or BSIF histograms combined by
// baseline_pair_feature, or the landmark displacement feature.
FeatureVector baseline_features(const std::string& descriptor, const Sample& trusted, const Sample& questioned,
                                bool trusted_known, const FilterBank* bank = nullptr);

// descriptor: lbp, bsif or landmark. Trains an RBF SVM on training-split
// pair features and scores the test pairs. Same outputs as eval.
void cmd_baseline(const RunConfig& config, const std::string& descriptor, const std::filesystem::path& out);

struct GradcheckLine {
  std::string loss;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Finite-difference checks of every loss graph at each configured seed.
// Lines: L1_a, L1_g, L1_id, L1_t, L2_a, L2_g, L2_t (maximum over seeds).
std::vector<GradcheckLine> run_gradcheck(const RunConfig& config, bool inject_fault = false);

// Returns true when every loss is within gradcheck_tolerance. Writes
// report.txt when `out` is non-empty.
bool cmd_gradcheck(const RunConfig& config, bool inject_fault, const std::filesystem::path& out);

}  // namespace morphkit
