#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace morphkit {

// Which side of a threshold counts as an attack. With HighIsAttack a sample
// is classified as an attack iff score > threshold; with LowIsAttack iff
// score < threshold.
enum class Polarity { HighIsAttack, LowIsAttack };

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> attack;
  Polarity polarity = Polarity::HighIsAttack;
};

struct OperatingPoint {
  double threshold = 0.0;
  double apcer = 0.0;  // attacks classified bona fide
  double bpcer = 0.0;  // bona fide classified attack
  friend bool operator==(const OperatingPoint&, const OperatingPoint&) = default;
};

// Operating points at -inf, every distinct score and +inf, ordered so APCER
// is non-decreasing and BPCER non-increasing.
struct DetCurve {
  std::vector<OperatingPoint> points;
};

DetCurve det_curve(const ScoreSet& scores);

// Error rate where APCER = BPCER, linearly interpolated between the two
// operating points bracketing the crossing.
double d_eer(const DetCurve& curve);

// Smallest BPCER among operating points with APCER <= target.
double bpcer_at_apcer(const DetCurve& curve, double target);

struct MetricSummary {
  double d_eer = 0.0;
  double bpcer_at_5 = 0.0;
  double bpcer_at_10 = 0.0;
};

MetricSummary summarize(const DetCurve& curve);

// CSV threshold,apcer,bpcer (round-trip precision).
void write_det_csv(const std::filesystem::path& path, const DetCurve& curve);
// "D-EER <v>\nBPCER@5 <v>\nBPCER@10 <v>\n" with values as fractions.
std::string summary_text(const MetricSummary& m);

}  // namespace morphkit
