#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morphkit/embednet/model.hpp"
#include "morphkit/evalkit/metrics.hpp"
#include "morphkit/imaging/dataset.hpp"

namespace morphkit {

enum class PairLabel { Genuine, Attack };
enum class PairPhase { Train, Test };

// Trusted image first, questioned image second.
struct PairRecord {
  std::string trusted_path;
  std::string trusted_landmarks;
  std::string questioned_path;
  std::string questioned_landmarks;
  int subject_id = -1;
  PairLabel label = PairLabel::Genuine;
  bool trusted_known = true;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

// Train phase: every unordered pair of distinct rows (manifest order gives
// the orientation); genuine iff both are real captures of one subject,
// otherwise an imposter (labelled Attack). Test phase: genuine = two real
// captures of one subject; attack = a real capture of subject s paired with
// a morph targeting s, skipping the capture the morph was made from.
// When subjects is given, only rows of those subjects are used.
std::vector<PairRecord> build_pairs(const Manifest& manifest, PairPhase phase,
                                    const std::vector<int>* subjects = nullptr);

// CSV trusted_path,questioned_path,subject_id,label
void write_pair_list(const std::filesystem::path& path, std::span<const PairRecord> pairs);
std::vector<PairRecord> read_pair_list(const std::filesystem::path& path);

struct BetaConfig {
  double beta_a = 1.0;
  double beta_g = 1.0;
  friend bool operator==(const BetaConfig&, const BetaConfig&) = default;
};

// The five weightings swept in the evaluation: (4,1),(3,1),(2,2),(1,3),(1,4).
std::vector<BetaConfig> default_beta_grid();

// cos(z_f, z_f') + beta_a cos(z_a, z_a') + beta_g cos(z_g, z_g'). A
// similarity: genuine pairs score high, so the default polarity for
// detection is LowIsAttack.
double pair_score(const EmbeddingTriple& trusted, const EmbeddingTriple& questioned, const BetaConfig& beta);

struct ScoredPair {
  EmbeddingTriple trusted;
  EmbeddingTriple questioned;
  PairLabel label = PairLabel::Genuine;
};

ScoreSet fused_scores(std::span<const ScoredPair> pairs, const BetaConfig& beta,
                      Polarity polarity = Polarity::LowIsAttack);

struct BetaSweepResult {
  std::size_t best_index = 0;
  BetaConfig best;
  std::vector<double> d_eers;
};

// D-EER for every grid entry; the first minimum wins.
BetaSweepResult beta_sweep(std::span<const ScoredPair> validation, std::span<const BetaConfig> grid,
                           Polarity polarity = Polarity::LowIsAttack);

}  // namespace morphkit
