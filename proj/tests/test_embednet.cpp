#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "morphkit/common/random.hpp"
#include "morphkit/embednet/losses.hpp"
#include "morphkit/embednet/model.hpp"
#include "morphkit/embednet/train.hpp"
#include "morphkit/gradcore/gradcheck.hpp"

using namespace morphkit;

namespace {

ModelConfig tiny_config(std::size_t classes = 3) {
  ModelConfig c;
  c.encoder.input_size = 12;
  c.encoder.blocks = {{4, 2}, {4, 2}};
  c.encoder.d_a = 5;
  c.encoder.d_g = 5;
  c.encoder.d_f = 6;
  c.encoder.n_classes = classes;
  c.margin.s = 8.0;
  c.critic_hidden = 4;
  return c;
}

FaceImage random_image(Rng& rng, std::size_t size) {
  std::uniform_real_distribution<double> u(-1, 1);
  FaceImage img(size, size);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

std::vector<double> unit_at(double c) { return {c, std::sqrt(1 - c * c)}; }

double eval(const Graph& g, const ParamStore& p, Var v) {
  Bindings b;
  p.bind(b);
  const std::vector<Var> out{v};
  return g.evaluate(b, out)[0].item();
}

double fd_error(const Graph& g, const ParamStore& p) {
  Bindings b;
  p.bind(b);
  std::vector<std::string> wrt;
  for (const auto& n : p.names())
    if (g.has_input(n)) wrt.push_back(n);
  return finite_difference_check(g, b, wrt, 1e-6).max_rel_error;
}

struct TripletFixture {
  std::vector<FaceImage> images;
  std::vector<TripletItem> items;
};

TripletFixture triplet_batch(Rng& rng, std::size_t n, const ModelConfig& c) {
  TripletFixture f;
  f.images.reserve(3 * n);
  for (std::size_t i = 0; i < 3 * n; ++i) f.images.push_back(random_image(rng, c.encoder.input_size));
  std::uniform_real_distribution<double> phi(0.0, 0.1);
  for (std::size_t i = 0; i < n; ++i)
    f.items.push_back({&f.images[3 * i], &f.images[3 * i + 1], &f.images[3 * i + 2], i % c.encoder.n_classes,
                       (i + 1) % c.encoder.n_classes, phi(rng)});
  return f;
}

struct PairFixture {
  std::vector<FaceImage> images;
  std::vector<PairItem> items;
};

// 2 genuine, 1 cross-subject, 1 (real, morph) pair over 6 images.
PairFixture pair_batch(Rng& rng, const ModelConfig& c) {
  PairFixture f;
  for (int i = 0; i < 6; ++i) f.images.push_back(random_image(rng, c.encoder.input_size));
  auto item = [&](int a, int b, bool gen, bool b_real, std::size_t ca, std::size_t cb) {
    return PairItem{&f.images[a], &f.images[b], gen, true, b_real, ca, cb};
  };
  f.items = {item(0, 1, true, true, 0, 0), item(2, 3, true, true, 1, 1), item(0, 2, false, true, 0, 1),
             item(4, 5, false, false, 2, 0)};
  return f;
}

}  // namespace

TEST_CASE("encoder determinism, zero weights and branch independence") {
  const ModelConfig c = tiny_config();
  Rng rng(1);
  const FaceImage img = random_image(rng, 12);
  const ParamStore p = init_model(c, 7);
  CHECK(encode(p, c.encoder, img) == encode(p, c.encoder, img));
  CHECK(init_model(c, 7) == p);

  ParamStore zero = p;
  for (const auto& n : zero.names_with_prefix(kEncoderPrefix)) {
    auto& t = zero.at(n);
    for (auto& v : t.data()) v = 0.0;
  }
  const auto z = encode(zero, c.encoder, img);
  for (const auto* v : {&z.z_a, &z.z_g, &z.z_f})
    for (double x : *v) CHECK(x == 0.0);

  ParamStore bumped = p;
  for (auto& v : bumped.at("enc.fc_a.w").data()) v += 0.1;
  const auto e0 = encode(p, c.encoder, img), e1 = encode(bumped, c.encoder, img);
  CHECK(e0.z_g == e1.z_g);
  CHECK(e0.z_a != e1.z_a);

  CHECK_THROWS(encode(p, c.encoder, random_image(rng, 16)));
  CHECK(e0.z_a.size() == 5);
  CHECK(e0.z_f.size() == 6);
}

TEST_CASE("default encoder reaches 7x7 and splits depth evenly") {
  const EncoderConfig e;
  CHECK(e.final_size() == 7);
  CHECK(e.branch_inputs() == 7 * 7 * 16);
  EncoderConfig odd = e;
  odd.blocks.back().channels = 31;
  CHECK_THROWS(odd.validate());
}

TEST_CASE("appearance loss examples") {
  const std::vector<std::vector<double>> a{{1, 2}}, b{{0, 3}}, c{{-2, 0}};
  CHECK(loss_appearance(a, a) == doctest::Approx(-1.0));
  CHECK(loss_appearance(std::vector<std::vector<double>>{{1, 0}}, std::vector<std::vector<double>>{{0, 1}}) == 0.0);
  const std::vector<std::vector<double>> x{{1, 0}, {1, 0}}, y{{2, 0}, {-1, 0}};
  CHECK(loss_appearance(x, y) == doctest::Approx(0.0));
  CHECK_THROWS(loss_appearance(std::vector<std::vector<double>>{{0, 0}}, a));
}

TEST_CASE("landmark loss examples") {
  const std::vector<std::vector<double>> base{{1, 0}};
  // hinge inactive
  const std::vector<std::vector<double>> far{unit_at(0.1)};
  const std::vector<double> phi1{0.05};
  CHECK(loss_landmark(base, base, far, phi1, 9.4) == doctest::Approx(-1.0));
  // all identical, phi = 0
  const std::vector<double> phi0{0.0};
  CHECK(loss_landmark(base, base, base, phi0, 9.4) == doctest::Approx(0.0));
  // cos(x', x_hat) = 0.9, cos(x', x) = 0.5, alpha_g phi = 0.2
  const std::vector<std::vector<double>> hat{unit_at(0.9)}, x{unit_at(0.5)};
  const std::vector<double> phi{0.1};
  CHECK(loss_landmark(base, hat, x, phi, 2.0) == doctest::Approx(-0.6).epsilon(1e-12));
  const std::vector<double> neg{-0.1};
  CHECK_THROWS(loss_landmark(base, hat, x, neg, 2.0));
}

TEST_CASE("id loss examples") {
  // z aligned with W_0, orthogonal to W_1
  const std::vector<double> z{1, 0}, W{1, 0, 0, 1};
  const MarginConfig defaults{0.9, 0.4, 0.15, 64};
  const double t = 64 * (std::cos(0.4) - 0.15);
  CHECK(loss_id(z, 0, W, 2, defaults) == doctest::Approx(-std::log(std::exp(t) / (std::exp(t) + 1.0))).epsilon(1e-12));

  // m = (1, 0, 0) gives plain softmax cross-entropy on s cos(theta)
  Rng rng(3);
  std::normal_distribution<double> d(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> zf(4), w(12);
    for (auto& v : zf) v = d(rng);
    for (auto& v : w) v = d(rng);
    const MarginConfig plain{1, 0, 0, 5};
    const std::size_t label = trial % 3;
    double norm_z = 0;
    for (double v : zf) norm_z += v * v;
    std::vector<double> logits(3);
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0, nw = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        dot += zf[k] * w[k * 3 + j];
        nw += w[k * 3 + j] * w[k * 3 + j];
      }
      logits[j] = 5 * dot / std::sqrt(norm_z * nw);
    }
    double lse = 0;
    for (double l : logits) lse += std::exp(l);
    CHECK(loss_id(zf, label, w, 3, plain) == doctest::Approx(std::log(lse) - logits[label]).epsilon(1e-12));

    // scale invariance in z_f
    std::vector<double> scaled = zf;
    const double k = std::exp(d(rng) * 3);
    for (auto& v : scaled) v *= k;
    CHECK(std::abs(loss_id(scaled, label, w, 3, defaults) - loss_id(zf, label, w, 3, defaults)) <= 1e-9);
  }

  CHECK(loss_id(z, 0, std::vector<double>{1, 0}, 1, defaults) == 0.0);
  CHECK_THROWS(loss_id(z, 2, W, 2, defaults));
  CHECK_THROWS(loss_id(std::vector<double>{0, 0}, 0, W, 2, defaults));
  CHECK_THROWS(loss_id(z, 0, std::vector<double>{1, 0, 0, 0}, 2, defaults));
}

TEST_CASE("mi loss examples and algebra") {
  CHECK(loss_mi(std::vector<double>{1, 1}, std::vector<double>{0}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(loss_mi(std::vector<double>{2}, std::vector<double>{0, 2}) ==
        doctest::Approx(-(2 - std::log((1 + std::exp(2.0)) / 2))).epsilon(1e-14));
  CHECK_THROWS(loss_mi(std::vector<double>{}, std::vector<double>{0}));
  CHECK_THROWS(loss_mi(std::vector<double>{0}, std::vector<double>{}));

  Rng rng(5);
  std::uniform_real_distribution<double> u(-50, 50), pos(1e-3, 5);
  std::uniform_int_distribution<int> n(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const double c = u(rng);
    const std::vector<double> g(n(rng), c), i(n(rng), c);
    CHECK(std::abs(loss_mi(g, i)) <= 1e-12);

    std::vector<double> gen(n(rng)), imp(n(rng));
    for (auto& v : gen) v = u(rng);
    for (auto& v : imp) v = u(rng);
    std::vector<double> shifted = gen;
    const double delta = pos(rng);
    for (auto& v : shifted) v += delta;
    CHECK(loss_mi(shifted, imp) < loss_mi(gen, imp));
  }
}

TEST_CASE("critic score") {
  const ModelConfig c = tiny_config();
  ParamStore p = init_model(c, 2);
  const std::vector<double> a{1, -2, 0.5, 3, 0}, b{0.2, 0.1, -1, 2, 4};
  CHECK(critic_score(p, kCriticA, a, b) == critic_score(p, kCriticA, a, b));
  (void)critic_score(p, kCriticG, b, a);
  for (const auto& n : p.names_with_prefix(kCriticA))
    for (auto& v : p.at(n).data()) v = 0.0;
  CHECK(critic_score(p, kCriticA, a, b) == 0.0);
  CHECK_THROWS(critic_score(p, kCriticA, std::vector<double>{1, 2}, b));
}

TEST_CASE("loss graphs pass finite-difference checks") {
  const ModelConfig c = tiny_config();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const ParamStore p = init_model(c, seed);
    const TripletFixture t = triplet_batch(rng, 2, c);
    const PairFixture q = pair_batch(rng, c);

    {
      Graph g;
      const Stage1Terms s = build_stage1_loss(g, t.items, c);
      for (Var v : {s.l_a, s.l_g, s.l_id, s.total}) {
        Graph copy = g;
        copy.set_output(v);
        CHECK(fd_error(copy, p) <= 1e-3);
      }
    }
    {
      Graph g;
      const Stage2Terms s = build_stage2_loss(g, q.items, c);
      for (Var v : {s.l_a, s.l_g, s.l_id, s.total}) {
        Graph copy = g;
        copy.set_output(v);
        CHECK(fd_error(copy, p) <= 1e-3);
      }
    }
  }
}

TEST_CASE("depth split gives exactly zero cross-branch gradients") {
  const ModelConfig c = tiny_config();
  Rng rng(9);
  const ParamStore p = init_model(c, 9);
  const TripletFixture t = triplet_batch(rng, 2, c);
  Graph g;
  const Stage1Terms s = build_stage1_loss(g, t.items, c);
  Bindings b;
  p.bind(b);
  const std::vector<std::string> wrt{"enc.fc_a.w", "enc.fc_a.b", "enc.fc_g.w", "enc.fc_g.b"};

  Graph ga = g;
  ga.set_output(s.l_a);
  const auto grad_a = ga.gradient(b, wrt);
  for (double v : grad_a.at("enc.fc_g.w").values()) CHECK(v == 0.0);
  for (double v : grad_a.at("enc.fc_g.b").values()) CHECK(v == 0.0);
  double mag = 0;
  for (double v : grad_a.at("enc.fc_a.w").values()) mag += std::abs(v);
  CHECK(mag > 0.0);

  Graph gg = g;
  gg.set_output(s.l_g);
  const auto grad_g = gg.gradient(b, wrt);
  for (double v : grad_g.at("enc.fc_a.w").values()) CHECK(v == 0.0);
  for (double v : grad_g.at("enc.fc_a.b").values()) CHECK(v == 0.0);
}

TEST_CASE("stage-1 loss composition") {
  Rng rng(4);
  ModelConfig c = tiny_config();
  const ParamStore p = init_model(c, 4);
  const TripletFixture t = triplet_batch(rng, 3, c);

  Graph g1;
  const auto s1 = build_stage1_loss(g1, t.items, c);
  const double la = eval(g1, p, s1.l_a), lg = eval(g1, p, s1.l_g), lid = eval(g1, p, s1.l_id);
  CHECK(eval(g1, p, s1.total) == doctest::Approx(lid + 1.3 * la + 0.75 * lg).epsilon(1e-12));

  ModelConfig zero = c;
  zero.weights.lambda1_a = zero.weights.lambda1_g = 0;
  Graph g0;
  const auto s0 = build_stage1_loss(g0, t.items, zero);
  CHECK(eval(g0, p, s0.total) == doctest::Approx(lid).epsilon(1e-12));

  ModelConfig doubled = c;
  doubled.weights.lambda1_a *= 2;
  Graph g2;
  const auto s2 = build_stage1_loss(g2, t.items, doubled);
  CHECK(eval(g2, p, s2.total) - eval(g1, p, s1.total) == doctest::Approx(1.3 * la).epsilon(1e-10));
}

TEST_CASE("stage-2 loss composition") {
  Rng rng(6);
  ModelConfig c = tiny_config();
  ParamStore p = init_model(c, 6);
  const PairFixture q = pair_batch(rng, c);

  ModelConfig zero = c;
  zero.weights.lambda2_a = zero.weights.lambda2_g = 0;
  Graph g0;
  const auto s0 = build_stage2_loss(g0, q.items, zero);
  CHECK(eval(g0, p, s0.total) == eval(g0, p, s0.l_id));

  // Zero critic weights: every critic score is 0 and both MI terms vanish.
  ParamStore flat = p;
  for (const auto& pre : {kCriticA, kCriticG})
    for (const auto& n : flat.names_with_prefix(pre))
      for (auto& v : flat.at(n).data()) v = 0.0;
  Graph g;
  const auto s = build_stage2_loss(g, q.items, c);
  CHECK(std::abs(eval(g, flat, s.l_a)) <= 1e-12);
  CHECK(std::abs(eval(g, flat, s.l_g)) <= 1e-12);
  CHECK(eval(g, flat, s.total) == doctest::Approx(eval(g, flat, s.l_id)).epsilon(1e-12));

  std::vector<PairItem> only_genuine{q.items[0], q.items[1]};
  Graph gx;
  CHECK_THROWS(build_stage2_loss(gx, only_genuine, c));
  std::vector<PairItem> only_imposter{q.items[2], q.items[3]};
  Graph gy;
  CHECK_THROWS(build_stage2_loss(gy, only_imposter, c));
}

namespace {

struct SynthFixture {
  std::filesystem::path dir;
  std::vector<Sample> samples;
  ModelConfig config;
  TrainConfig train;

  SynthFixture() {
    dir = std::filesystem::temp_directory_path() / "morphkit_embednet_test";
    std::filesystem::remove_all(dir);
    SynthConfig sc;
    sc.subjects = 20;
    const Manifest m = synth_dataset(sc, dir);
    samples = load_samples(m, 112);
    config.margin.s = 16;
    config.encoder.n_classes = 20;
    train.batch_size = 16;
    train.lr.initial = 0.01;
    train.seed = 3;
  }
  ~SynthFixture() { std::filesystem::remove_all(dir); }
};

}  // namespace

TEST_CASE("training on synthetic data") {
  static SynthFixture f;
  static const ParamStore init = init_model(f.config, 3);

  SUBCASE("lr = 0 leaves the parameters bit-identical") {
    TrainConfig t = f.train;
    t.epochs = 1;
    t.lr.initial = 0;
    t.lr.floor = 0;
    CHECK(train_stage1(f.samples, f.config, init, t).params == init);
  }

  SUBCASE("stage-1 loss decreases and runs are deterministic") {
    TrainConfig t = f.train;
    t.epochs = 6;
    const auto r = train_stage1(f.samples, f.config, init, t);
    REQUIRE(r.log.size() == 6);
    CHECK(r.log[5].loss < r.log[0].loss);
    t.epochs = 2;
    const auto a = train_stage1(f.samples, f.config, init, t);
    const auto b = train_stage1(f.samples, f.config, init, t);
    CHECK(a.params == b.params);
    CHECK(a.params != init);
  }

  SUBCASE("stage 2") {
    TrainConfig t = f.train;
    t.epochs = 0;
    CHECK(train_stage2(f.samples, f.config, init, t).params == init);

    t.epochs = 1;
    const auto joint = train_stage2(f.samples, f.config, init, t);
    CHECK(joint.params != init);
    CHECK(std::isfinite(joint.log[0].loss));
    CHECK(train_stage2(f.samples, f.config, init, t).params == joint.params);

    t.alternate_updates = true;
    const auto alt = train_stage2(f.samples, f.config, init, t);
    CHECK(alt.params != joint.params);

    t.alternate_updates = false;
    t.dual_encoder = true;
    const auto dual = train_stage2(f.samples, f.config, init, t);
    for (const auto& n : init.names_with_prefix(kEncoderPrefix)) {
      const std::string trusted = kTrustedPrefix + n.substr(kEncoderPrefix.size());
      CHECK(dual.params.at(trusted) == init.at(n));
    }
    CHECK(dual.params.at("enc.fc_a.w") != init.at("enc.fc_a.w"));

    std::vector<Sample> reals;
    for (const auto& s : f.samples)
      if (s.real()) reals.push_back(s);
    CHECK_THROWS(train_stage2(reals, f.config, init, t));
    t.batch_size = 2;
    CHECK_THROWS(train_stage2(f.samples, f.config, init, t));
  }

  SUBCASE("class count must match the data") {
    ModelConfig wrong = f.config;
    wrong.encoder.n_classes = 5;
    TrainConfig t = f.train;
    t.epochs = 1;
    CHECK_THROWS(train_stage1(f.samples, wrong, init_model(wrong, 1), t));
  }
}

TEST_CASE("checkpoint round trip") {
  const ModelConfig c = tiny_config(4);
  const ParamStore p = init_model(c, 11);
  const auto path = std::filesystem::temp_directory_path() / "morphkit_ckpt_test.mkpt";
  CheckpointInfo info{c, 2, 11, false};
  save_checkpoint(path, p, info);
  CheckpointInfo back;
  const ParamStore q = load_checkpoint(path, &back);
  CHECK(q == p);
  CHECK(back.model == c);
  CHECK(back.stage == 2);
  CHECK(back.seed == 11);
  CHECK(read_checkpoint_info(path).model.encoder.blocks == c.encoder.blocks);

  ParamStore broken = p;
  broken.set("enc.fc_a.w", Tensor({2, 2}));
  save_checkpoint(path, broken, info);
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".meta");
}
