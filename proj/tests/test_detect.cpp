#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "morphkit/common/random.hpp"
#include "morphkit/detect/pairs.hpp"
#include "morphkit/detect/svm.hpp"
#include "oracles.hpp"

using namespace morphkit;
using oracle::qp_dual_objective;

namespace {

ManifestRow real(const std::string& path, int subject) { return {path, subject, SampleKind::Real, "", "", ""}; }

ManifestRow morph(const std::string& path, int subject, const std::string& a, const std::string& b) {
  return {path, subject, SampleKind::Morph, a, b, ""};
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::normal_distribution<double> d(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

EmbeddingTriple random_triple(Rng& rng) { return {random_vec(rng, 4), random_vec(rng, 5), random_vec(rng, 6)}; }

struct Problem {
  std::vector<FeatureVector> features;
  std::vector<int> labels;
};

Problem random_problem(Rng& rng, std::size_t n, std::size_t dim) {
  Problem p;
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector f{"toy", {}};
    for (std::size_t k = 0; k < dim; ++k) f.values.push_back(u(rng));
    p.features.push_back(f);
    p.labels.push_back(i % 2 ? 1 : -1);
  }
  std::shuffle(p.labels.begin(), p.labels.end(), rng);
  return p;
}

}  // namespace

TEST_CASE("test pairs for one subject") {
  Manifest m;
  m.rows = {real("a0", 0), real("a1", 0), morph("m", 0, "a0", "b0"), real("b0", 1)};
  const auto pairs = build_pairs(m, PairPhase::Test);
  std::size_t gen = 0, att = 0;
  for (const auto& p : pairs) {
    if (p.label == PairLabel::Genuine) {
      ++gen;
      CHECK(p.trusted_path == "a0");
      CHECK(p.questioned_path == "a1");
    } else {
      ++att;
      CHECK(p.questioned_path == "m");
      CHECK(p.trusted_path == "a1");
    }
    CHECK(p.subject_id == 0);
  }
  CHECK(gen == 1);
  CHECK(att == 1);
  CHECK_THROWS(build_pairs(Manifest{"", {real("x", 0)}}, PairPhase::Test));
}

TEST_CASE("pair counts match an exhaustive enumeration") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<int> ns(2, 5), nc(1, 4), nm(0, 3);
    Manifest m;
    const int subjects = ns(rng);
    std::vector<int> caps(subjects);
    for (int s = 0; s < subjects; ++s) {
      caps[s] = nc(rng);
      for (int c = 0; c < caps[s]; ++c) m.rows.push_back(real("r" + std::to_string(s) + "_" + std::to_string(c), s));
    }
    for (int s = 0; s < subjects; ++s) {
      const int k = nm(rng);
      for (int j = 0; j < k; ++j)
        m.rows.push_back(morph("m" + std::to_string(s) + "_" + std::to_string(j), s,
                               "r" + std::to_string(s) + "_0", "r" + std::to_string((s + 1) % subjects) + "_0"));
    }
    std::shuffle(m.rows.begin(), m.rows.end(), rng);

    // Oracle over ordered index pairs.
    std::size_t train_gen = 0, train_imp = 0, test_gen = 0, test_att = 0, cross_real = 0;
    for (std::size_t i = 0; i < m.rows.size(); ++i)
      for (std::size_t j = 0; j < m.rows.size(); ++j) {
        const auto& a = m.rows[i];
        const auto& b = m.rows[j];
        const bool both_real = a.kind == SampleKind::Real && b.kind == SampleKind::Real;
        if (i < j) {
          if (both_real && a.subject_id == b.subject_id) {
            ++train_gen;
            ++test_gen;
          } else {
            ++train_imp;
            if (both_real) ++cross_real;
          }
        }
        if (a.kind == SampleKind::Real && b.kind == SampleKind::Morph && a.subject_id == b.subject_id &&
            a.path != b.source_a)
          ++test_att;
      }

    const auto train = build_pairs(m, PairPhase::Train);
    std::size_t g = 0, cr = 0;
    for (const auto& p : train) {
      g += p.label == PairLabel::Genuine;
      const bool qr = p.questioned_path[0] == 'r', tr = p.trusted_path[0] == 'r';
      if (p.label == PairLabel::Attack && qr && tr) {
        ++cr;
        CHECK(p.trusted_path.substr(1, 1) != p.questioned_path.substr(1, 1));
      }
    }
    CHECK(g == train_gen);
    CHECK(train.size() - g == train_imp);
    CHECK(cr == cross_real);

    if (test_gen + test_att == 0) {
      CHECK_THROWS(build_pairs(m, PairPhase::Test));
      continue;
    }
    const auto test = build_pairs(m, PairPhase::Test);
    std::size_t tg = 0;
    for (const auto& p : test) {
      if (p.label == PairLabel::Genuine) {
        ++tg;
      } else {
        CHECK(p.trusted_path[0] == 'r');
        CHECK(p.questioned_path[0] == 'm');
        CHECK(p.trusted_path.substr(1, 1) == p.questioned_path.substr(1, 1));
      }
    }
    CHECK(tg == test_gen);
    CHECK(test.size() - tg == test_att);
  }
}

TEST_CASE("subject filter and pair list round trip") {
  Manifest m;
  m.rows = {real("a0", 0), real("a1", 0), real("b0", 1), real("b1", 1), morph("mb", 1, "b0", "a0")};
  const std::vector<int> only{1};
  const auto pairs = build_pairs(m, PairPhase::Test, &only);
  CHECK(pairs.size() == 2);
  for (const auto& p : pairs) CHECK(p.subject_id == 1);

  const auto path = std::filesystem::temp_directory_path() / "morphkit_pairs_test.csv";
  write_pair_list(path, pairs);
  const auto back = read_pair_list(path);
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].trusted_path == pairs[i].trusted_path);
    CHECK(back[i].questioned_path == pairs[i].questioned_path);
    CHECK(back[i].subject_id == pairs[i].subject_id);
    CHECK(back[i].label == pairs[i].label);
  }
  std::filesystem::remove(path);
}

TEST_CASE("pair_score examples") {
  const EmbeddingTriple t{{1, 0}, {0, 1}, {1, 1}};
  CHECK(pair_score(t, t, {1, 1}) == doctest::Approx(3.0).epsilon(1e-15));
  const EmbeddingTriple o{{0, 1}, {1, 0}, {1, -1}};
  CHECK(pair_score(t, o, {1, 1}) == 0.0);

  // cosines 0.5 (f), 0.4 (a), 0.3 (g)
  auto unit_at = [](double c) { return std::vector<double>{c, std::sqrt(1 - c * c)}; };
  const EmbeddingTriple base{{1, 0}, {1, 0}, {1, 0}};
  const EmbeddingTriple q{unit_at(0.4), unit_at(0.3), unit_at(0.5)};
  CHECK(pair_score(base, q, {2, 2}) == doctest::Approx(1.9).epsilon(1e-14));

  CHECK_THROWS_AS(pair_score(t, EmbeddingTriple{{0, 0}, {0, 1}, {1, 1}}, {1, 1}), std::domain_error);
  CHECK_THROWS(pair_score(t, EmbeddingTriple{{1, 0, 0}, {0, 1}, {1, 1}}, {1, 1}));
  CHECK_THROWS(pair_score(t, t, {-1, 1}));
}

TEST_CASE("pair_score symmetry and scale invariance") {
  Rng rng(17);
  std::uniform_real_distribution<double> scale(0.01, 100);
  for (int trial = 0; trial < 100; ++trial) {
    const EmbeddingTriple a = random_triple(rng), b = random_triple(rng);
    for (const auto& beta : default_beta_grid()) {
      CHECK(pair_score(a, b, beta) == pair_score(b, a, beta));
      EmbeddingTriple c = b;
      for (auto* v : {&c.z_a, &c.z_g, &c.z_f}) {
        const double k = scale(rng);
        for (auto& x : *v) x *= k;
      }
      CHECK(std::abs(pair_score(a, c, beta) - pair_score(a, b, beta)) <= 1e-9);
    }
  }
}

TEST_CASE("beta sweep") {
  Rng rng(23);
  const auto grid = default_beta_grid();
  // Appearance and landmark cosines are chosen so only beta = (2,2) ranks
  // every genuine pair above every attack: s = f + b_a a + b_g g with f = 0.
  auto triple = [](double a, double g) {
    auto unit_at = [](double c) { return std::vector<double>{c, std::sqrt(1 - c * c)}; };
    return std::pair{EmbeddingTriple{{1, 0}, {1, 0}, {1, 0}}, EmbeddingTriple{unit_at(a), unit_at(g), {0, 1}}};
  };
  std::vector<ScoredPair> pairs;
  // genuine: a + g = 1 with a spread; attack: a + g = 0.9 with the same spread
  for (double a : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    auto [t, q] = triple(a, 1.0 - a);
    pairs.push_back({t, q, PairLabel::Genuine});
    auto [t2, q2] = triple(std::min(a, 0.9), std::max(0.0, 0.9 - a));
    pairs.push_back({t2, q2, PairLabel::Attack});
  }
  const auto r = beta_sweep(pairs, grid);
  CHECK(r.best == BetaConfig{2, 2});
  CHECK(r.d_eers[r.best_index] == 0.0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(r.d_eers[k] == d_eer(det_curve(fused_scores(pairs, grid[k]))));
    if (k != 2) CHECK(r.d_eers[k] > 0.0);
  }

  const std::vector<BetaConfig> one{{3, 1}};
  CHECK(beta_sweep(pairs, one).best == BetaConfig{3, 1});
  CHECK_THROWS(beta_sweep(pairs, std::vector<BetaConfig>{}));
  std::vector<ScoredPair> only_genuine;
  for (const auto& p : pairs)
    if (p.label == PairLabel::Genuine) only_genuine.push_back(p);
  CHECK_THROWS(beta_sweep(only_genuine, grid));

  // Random validation sets: the selection is the first argmin of recomputed D-EERs.
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ScoredPair> v;
    for (int i = 0; i < 12; ++i)
      v.push_back({random_triple(rng), random_triple(rng), i % 3 ? PairLabel::Genuine : PairLabel::Attack});
    const auto s = beta_sweep(v, grid);
    std::vector<double> e;
    for (const auto& b : grid) e.push_back(d_eer(det_curve(fused_scores(v, b))));
    const auto best = std::min_element(e.begin(), e.end()) - e.begin();
    CHECK(static_cast<std::size_t>(best) == s.best_index);
  }
}

TEST_CASE("svm dual objective matches a projected-gradient QP") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Problem p = random_problem(rng, 10, 3);
    SvmParams params;
    params.C = trial % 2 ? 10.0 : 1.0;
    params.gamma = 0.5;
    const auto r = svm_train(p.features, p.labels, params);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < p.features.size(); ++i) {
      x.push_back(p.features[i].values);
      y.push_back(p.labels[i]);
    }
    CHECK(std::abs(r.dual_objective - qp_dual_objective(x, y, params.C, params.gamma)) <= 1e-3);
    CHECK(svm_kkt_violation(r, p.features, p.labels) < 1e-3);
    double balance = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(r.alpha[i] >= 0.0);
      CHECK(r.alpha[i] <= params.C);
      balance += r.alpha[i] * y[i];
    }
    CHECK(std::abs(balance) <= 1e-6);
  }
}

TEST_CASE("svm two-point case") {
  std::vector<FeatureVector> f{{"t", {0, 0}}, {"t", {1, 0}}};
  std::vector<int> y{1, -1};
  SvmParams params;
  params.C = 1e3;
  const auto r = svm_train(f, y, params);
  CHECK(r.model.support_vectors.size() == 2);
  CHECK(svm_score(r.model, f[0].values) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(svm_score(r.model, f[1].values) == doctest::Approx(-1.0).epsilon(1e-3));
  // Points equidistant from both support vectors lie on the boundary.
  for (double yy : {-2.0, 0.0, 0.7}) CHECK(std::abs(svm_score(r.model, std::vector<double>{0.5, yy})) < 1e-9);
  CHECK(r.model.gamma == 0.5);
}

TEST_CASE("svm separates blobs and decays to the bias far away") {
  Rng rng(41);
  std::normal_distribution<double> d(0, 0.3);
  std::vector<FeatureVector> f;
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    const double c = i % 2 ? 2.0 : -2.0;
    f.push_back({"blob", {c + d(rng), c + d(rng)}});
    y.push_back(i % 2 ? 1 : -1);
  }
  const auto r = svm_train(f, y);
  CHECK(r.model.gamma == 0.5);
  CHECK(r.model.C == 10.0);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK((svm_score(r.model, f[i].values) > 0) == (y[i] > 0));
  CHECK(svm_score(r.model, std::vector<double>{100, -100}) == doctest::Approx(r.model.bias).epsilon(1e-12));

  // Free support vectors sit on the margin.
  std::size_t sv = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (r.alpha[i] > 1e-9 && r.alpha[i] < r.model.C - 1e-9)
      CHECK(std::abs(svm_score(r.model, f[i].values) - y[i]) < 1e-3);
    if (r.alpha[i] > 0) {
      // Naive double-loop recomputation.
      double naive = r.model.bias;
      for (std::size_t k = 0; k < r.model.support_vectors.size(); ++k) {
        double dist = 0;
        for (std::size_t j = 0; j < 2; ++j) {
          const double t = r.model.support_vectors[k][j] - f[i].values[j];
          dist += t * t;
        }
        naive += r.model.coef[k] * std::exp(-r.model.gamma * dist);
      }
      CHECK(svm_score(r.model, f[i].values) == doctest::Approx(naive).epsilon(1e-12));
      ++sv;
    }
  }
  CHECK(sv == r.model.support_vectors.size());
  CHECK_THROWS(svm_score(r.model, std::vector<double>{1.0}));
}

TEST_CASE("svm input validation") {
  std::vector<FeatureVector> f{{"t", {0}}, {"t", {1}}};
  CHECK_THROWS(svm_train(f, std::vector<int>{1, 1}));
  CHECK_THROWS(svm_train(f, std::vector<int>{1, 0}));
  CHECK_THROWS(svm_train(f, std::vector<int>{1}));
  SvmParams bad;
  bad.C = 0;
  CHECK_THROWS(svm_train(f, std::vector<int>{1, -1}, bad));
}

TEST_CASE("baseline pair feature") {
  const FeatureVector a{"lbp", {1, 2, 3}}, b{"lbp", {3, 2, 0}};
  for (bool known : {true, false}) {
    const auto z = baseline_pair_feature(a, a, known);
    for (double v : z.values) CHECK(v == 0.0);
  }
  CHECK(baseline_pair_feature(a, b, false).values == baseline_pair_feature(b, a, false).values);
  const auto ab = baseline_pair_feature(a, b, true);
  const auto ba = baseline_pair_feature(b, a, true);
  CHECK(ab.values == std::vector<double>{2, 0, -3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(ab.values[i] == -ba.values[i]);
  CHECK_THROWS(baseline_pair_feature(a, FeatureVector{"lbp", {1}}, true));
}
