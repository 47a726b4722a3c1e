#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "morphkit/geometry/landmarks.hpp"
#include "morphkit/imaging/morph.hpp"

namespace morphkit {

enum class SampleKind { Real, Morph };

// One manifest line. Paths are relative to the manifest's directory. For
// morphs subject_id is the subject whose capture was warped as image a, and
// source_a/source_b name the two source images.
struct ManifestRow {
  std::string path;
  int subject_id = -1;
  SampleKind kind = SampleKind::Real;
  std::string source_a;
  std::string source_b;
  std::string landmarks_path;

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRow> rows;

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

// CSV with header path,subject_id,kind,source_a,source_b,landmarks_path.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
Manifest read_manifest(const std::filesystem::path& path);

struct SynthConfig {
  int subjects = 20;
  int captures = 3;
  int morphs_per_subject = 2;
  std::uint64_t seed = 1;
  std::size_t image_size = 112;
  // Relative spread of the per-subject geometry parameters.
  double shape_jitter = 0.06;
  // Per-capture landmark noise (pixels, standard deviation).
  double capture_jitter = 0.8;
  // Per-capture global brightness offset (standard deviation, [-1, 1] units).
  double brightness_jitter = 0.06;
  // Per-pixel sensor noise (standard deviation).
  double pixel_noise = 0.02;
  MorphOptions morph;
};

// A manifest row loaded into memory, resized to the network input size.
// Landmarks are rescaled with the same pixel-center mapping as the image.
struct Sample {
  std::string path;
  FaceImage image;
  LandmarkSet landmarks;
  int subject = -1;
  SampleKind kind = SampleKind::Real;
  std::string source_a;
  std::string source_b;

  bool real() const { return kind == SampleKind::Real; }
};

// Loads every row (in manifest order), in parallel.
std::vector<Sample> load_samples(const Manifest& manifest, std::size_t image_size);

// Disjoint subject partition. train_fraction of the subjects (rounded down,
// at least 1) go to training, the rest to test; validation_fraction of the
// training subjects (at least 1 when training has 2 or more) are held out
// of training for model selection.
struct SubjectSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};
SubjectSplit split_subjects(std::vector<int> subjects, double train_fraction, double validation_fraction,
                            std::uint64_t seed);

// Distinct subject ids of the manifest, ascending.
std::vector<int> manifest_subjects(const Manifest& manifest);

// 68-point template in the iBUG layout for a square image of the given size.
LandmarkSet face_template(std::size_t size);

// Writes real/ and morph/ images (PPM) with landmark files plus manifest.csv
// into out_dir. Real rows come first, ordered by subject then capture; morph
// rows follow, ordered by target subject then morph index. Deterministic in
// the config.
Manifest synth_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace morphkit
