#include "morphkit/evalkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace morphkit {

DetCurve det_curve(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.attack.empty()) {
    throw std::invalid_argument("det_curve needs genuine and attack scores");
  }
  for (const auto* v : {&scores.genuine, &scores.attack}) {
    for (double s : *v) {
      if (!std::isfinite(s)) throw std::invalid_argument("det_curve: non-finite score");
    }
  }
  // Work in an orientation where larger means "more attack-like".
  const double sign = scores.polarity == Polarity::HighIsAttack ? 1.0 : -1.0;
  std::vector<double> gen, att;
  for (double s : scores.genuine) gen.push_back(sign * s);
  for (double s : scores.attack) att.push_back(sign * s);
  std::sort(gen.begin(), gen.end());
  std::sort(att.begin(), att.end());

  std::vector<double> thresholds;
  thresholds.reserve(gen.size() + att.size() + 2);
  thresholds.push_back(-std::numeric_limits<double>::infinity());
  thresholds.insert(thresholds.end(), gen.begin(), gen.end());
  thresholds.insert(thresholds.end(), att.begin(), att.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  DetCurve curve;
  curve.points.reserve(thresholds.size());
  const double ng = static_cast<double>(gen.size()), na = static_cast<double>(att.size());
  for (double t : thresholds) {
    // attack iff oriented score > t
    const auto att_below = std::upper_bound(att.begin(), att.end(), t) - att.begin();
    const auto gen_above = gen.end() - std::upper_bound(gen.begin(), gen.end(), t);
    curve.points.push_back({sign * t, static_cast<double>(att_below) / na, static_cast<double>(gen_above) / ng});
  }
  return curve;
}

double d_eer(const DetCurve& curve) {
  const auto& p = curve.points;
  if (p.empty()) throw std::invalid_argument("d_eer: empty curve");
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double d = p[k].apcer - p[k].bpcer;
    if (d == 0.0) return p[k].apcer;
    if (d > 0.0) {
      if (k == 0) return p[0].apcer;
      const double d0 = p[k - 1].apcer - p[k - 1].bpcer;
      const double t = d0 / (d0 - d);
      return p[k - 1].apcer + t * (p[k].apcer - p[k - 1].apcer);
    }
  }
  return p.back().apcer;
}

double bpcer_at_apcer(const DetCurve& curve, double target) {
  double best = 1.0;
  bool found = false;
  for (const auto& op : curve.points) {
    if (op.apcer <= target) {
      best = found ? std::min(best, op.bpcer) : op.bpcer;
      found = true;
    }
  }
  if (!found) throw std::invalid_argument("bpcer_at_apcer: no operating point meets the target");
  return best;
}

MetricSummary summarize(const DetCurve& curve) {
  return {d_eer(curve), bpcer_at_apcer(curve, 0.05), bpcer_at_apcer(curve, 0.10)};
}

void write_det_csv(const std::filesystem::path& path, const DetCurve& curve) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.precision(17);
  os << "threshold,apcer,bpcer\n";
  for (const auto& p : curve.points) os << p.threshold << ',' << p.apcer << ',' << p.bpcer << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string summary_text(const MetricSummary& m) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "D-EER " << m.d_eer << "\nBPCER@5 " << m.bpcer_at_5 << "\nBPCER@10 " << m.bpcer_at_10 << '\n';
  return os.str();
}

}  // namespace morphkit
