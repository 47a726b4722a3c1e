#include "morphkit/detect/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace morphkit {

std::vector<PairRecord> build_pairs(const Manifest& manifest, PairPhase phase, const std::vector<int>* subjects) {
  std::vector<const ManifestRow*> rows;
  for (const auto& r : manifest.rows) {
    if (!subjects || std::find(subjects->begin(), subjects->end(), r.subject_id) != subjects->end()) {
      rows.push_back(&r);
    }
  }
  auto make = [](const ManifestRow& t, const ManifestRow& q, PairLabel label) {
    return PairRecord{t.path, t.landmarks_path, q.path, q.landmarks_path, t.subject_id, label, true};
  };
  std::vector<PairRecord> out;
  if (phase == PairPhase::Train) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        const ManifestRow& a = *rows[i];
        const ManifestRow& b = *rows[j];
        const bool genuine =
            a.kind == SampleKind::Real && b.kind == SampleKind::Real && a.subject_id == b.subject_id;
        out.push_back(make(a, b, genuine ? PairLabel::Genuine : PairLabel::Attack));
      }
    }
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i]->kind != SampleKind::Real) continue;
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        if (rows[j]->kind == SampleKind::Real && rows[j]->subject_id == rows[i]->subject_id) {
          out.push_back(make(*rows[i], *rows[j], PairLabel::Genuine));
        }
      }
    }
    for (const ManifestRow* m : rows) {
      if (m->kind != SampleKind::Morph) continue;
      for (const ManifestRow* r : rows) {
        if (r->kind == SampleKind::Real && r->subject_id == m->subject_id && r->path != m->source_a) {
          out.push_back(make(*r, *m, PairLabel::Attack));
        }
      }
    }
  }
  if (out.empty()) throw std::invalid_argument("no eligible pairs in the manifest");
  return out;
}

void write_pair_list(const std::filesystem::path& path, std::span<const PairRecord> pairs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << "trusted_path,questioned_path,subject_id,label\n";
  for (const auto& p : pairs) {
    os << p.trusted_path << ',' << p.questioned_path << ',' << p.subject_id << ','
       << (p.label == PairLabel::Genuine ? "genuine" : "attack") << '\n';
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<PairRecord> read_pair_list(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open pair list '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != "trusted_path,questioned_path,subject_id,label") {
    throw std::runtime_error("pair list '" + path.string() + "' has an unexpected header");
  }
  std::vector<PairRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
      f.push_back(line.substr(start, pos - start));
    }
    f.push_back(line.substr(start));
    if (f.size() != 4) throw std::runtime_error("pair list line has " + std::to_string(f.size()) + " fields");
    PairRecord p;
    p.trusted_path = f[0];
    p.questioned_path = f[1];
    p.subject_id = std::stoi(f[2]);
    if (f[3] == "genuine") {
      p.label = PairLabel::Genuine;
    } else if (f[3] == "attack") {
      p.label = PairLabel::Attack;
    } else {
      throw std::runtime_error("pair label must be genuine or attack, got '" + f[3] + "'");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<BetaConfig> default_beta_grid() { return {{4, 1}, {3, 1}, {2, 2}, {1, 3}, {1, 4}}; }

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pair_score: embedding sizes differ");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw std::domain_error("pair_score: zero-norm embedding");
  return ab / std::sqrt(aa * bb);
}

}  // namespace

double pair_score(const EmbeddingTriple& t, const EmbeddingTriple& q, const BetaConfig& beta) {
  if (!std::isfinite(beta.beta_a) || !std::isfinite(beta.beta_g) || beta.beta_a < 0 || beta.beta_g < 0) {
    throw std::invalid_argument("pair_score: beta weights must be finite and non-negative");
  }
  return cosine(t.z_f, q.z_f) + beta.beta_a * cosine(t.z_a, q.z_a) + beta.beta_g * cosine(t.z_g, q.z_g);
}

ScoreSet fused_scores(std::span<const ScoredPair> pairs, const BetaConfig& beta, Polarity polarity) {
  ScoreSet s;
  s.polarity = polarity;
  for (const auto& p : pairs) {
    (p.label == PairLabel::Genuine ? s.genuine : s.attack).push_back(pair_score(p.trusted, p.questioned, beta));
  }
  return s;
}

BetaSweepResult beta_sweep(std::span<const ScoredPair> validation, std::span<const BetaConfig> grid,
                           Polarity polarity) {
  if (grid.empty()) throw std::invalid_argument("beta_sweep: empty grid");
  BetaSweepResult r;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const ScoreSet s = fused_scores(validation, grid[k], polarity);
    if (s.genuine.empty() || s.attack.empty()) {
      throw std::invalid_argument("beta_sweep: validation pairs need both labels");
    }
    r.d_eers.push_back(d_eer(det_curve(s)));
    if (r.d_eers[k] < r.d_eers[r.best_index]) r.best_index = k;
  }
  r.best = grid[r.best_index];
  return r;
}

}  // namespace morphkit
