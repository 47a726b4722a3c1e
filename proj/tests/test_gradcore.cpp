#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "doctest.h"
#include "morphkit/gradcore/gradcheck.hpp"
#include "morphkit/gradcore/graph.hpp"
#include "morphkit/gradcore/optim.hpp"
#include "morphkit/gradcore/param_store.hpp"

using namespace morphkit;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Wraps a primitive so its (possibly tensor-valued) result is reduced to a
// scalar through a fixed random projection.
struct PrimitiveCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Var(Graph&, std::vector<Var>&)> build;
  double lo = -1.0;
  double hi = 1.0;
};

}  // namespace

TEST_CASE("evaluate identity, cosine and matmul") {
  Graph g;
  Var x = g.input("x");
  g.set_output(x);
  Bindings b{{"x", Tensor::vector({1, 2, 3})}};
  CHECK(g.evaluate(b) == Tensor::vector({1, 2, 3}));

  Graph gc;
  Var v = gc.input("v");
  gc.set_output(gc.cosine(v, v));
  CHECK(gc.evaluate({{"v", Tensor::vector({0.3, -2.0, 5.0})}}).item() == doctest::Approx(1.0).epsilon(1e-15));

  Graph gm;
  gm.set_output(gm.matmul(gm.input("i"), gm.input("m")));
  Tensor m = Tensor::matrix(2, 2, {1.5, -2, 3, 4.25});
  CHECK(gm.evaluate({{"i", Tensor::matrix(2, 2, {1, 0, 0, 1})}, {"m", m}}) == m);
}

TEST_CASE("basic gradients") {
  Graph g;
  Var x = g.input("x");
  g.set_output(g.mul(x, x));
  std::vector<std::string> wrt{"x"};
  auto grads = g.gradient({{"x", Tensor::scalar(3.0)}}, wrt);
  CHECK(grads.at("x").item() == doctest::Approx(6.0));

  Graph gm;
  gm.set_output(gm.mean(gm.input("v")));
  auto gv = gm.gradient({{"v", Tensor::vector({4, 1, -2, 7, 0})}}, wrt = {"v"});
  for (double e : gv.at("v").data()) CHECK(e == doctest::Approx(0.2));
}

TEST_CASE("errors") {
  Graph g;
  g.set_output(g.add(g.input("a"), g.input("b")));
  CHECK_THROWS_AS(g.evaluate({{"a", Tensor::vector({1, 2})}, {"b", Tensor::vector({1, 2, 3})}}), ShapeError);
  CHECK_THROWS_AS(g.evaluate({{"a", Tensor::vector({1, 2})}}), GraphError);

  Graph gl;
  gl.set_output(gl.log(gl.input("a")));
  CHECK_THROWS_AS(gl.evaluate({{"a", Tensor::scalar(0.0)}}), NonFiniteError);
  CHECK_THROWS_AS(gl.evaluate({{"a", Tensor::scalar(-1.0)}}), NonFiniteError);

  Graph gv;
  gv.set_output(gv.scale(gv.input("a"), 2.0));
  std::vector<std::string> wrt{"a"};
  CHECK_THROWS_AS(gv.gradient({{"a", Tensor::vector({1, 2})}}, wrt), GraphError);
  std::vector<std::string> unknown{"zz"};
  CHECK_THROWS_AS(gv.gradient({{"a", Tensor::scalar(1)}}, unknown), GraphError);

  Graph gz;
  gz.set_output(gz.cosine(gz.input("a"), gz.input("b")));
  CHECK_THROWS(gz.evaluate({{"a", Tensor::vector({0, 0})}, {"b", Tensor::vector({1, 0})}}));
}

TEST_CASE("finite difference check on a quadratic and at a relu kink") {
  Graph g;
  Var x = g.input("x");
  g.set_output(g.mul(x, x));
  std::vector<std::string> wrt{"x"};
  auto rep = finite_difference_check(g, {{"x", Tensor::scalar(3.0)}}, wrt, 1e-5);
  CHECK(rep.checked == 1);
  CHECK(rep.max_rel_error <= 1e-8);

  Graph gr;
  gr.set_output(gr.sum(gr.relu(gr.input("x"))));
  auto kink = finite_difference_check(gr, {{"x", Tensor::vector({0.0, 1e-5, 0.5, -0.3})}}, wrt, 1e-5);
  CHECK(kink.skipped == 2);
  CHECK(kink.checked == 2);
  CHECK(kink.max_rel_error <= 1e-4);

  FdCheckOptions bad;
  bad.corrupt_analytic = true;
  CHECK(finite_difference_check(g, {{"x", Tensor::scalar(3.0)}}, wrt, 1e-5, bad).max_rel_error > 1e-3);
  CHECK_THROWS(finite_difference_check(g, {{"x", Tensor::scalar(3.0)}}, wrt, 0.0));
}

TEST_CASE("every primitive matches central differences at 100 random points") {
  std::vector<PrimitiveCase> cases = {
      {"add", {{3, 2}, {3, 2}}, [](Graph& g, std::vector<Var>& in) { return g.add(in[0], in[1]); }},
      {"add_broadcast", {{4}, {}}, [](Graph& g, std::vector<Var>& in) { return g.add(in[0], in[1]); }},
      {"sub", {{5}, {5}}, [](Graph& g, std::vector<Var>& in) { return g.sub(in[0], in[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Graph& g, std::vector<Var>& in) { return g.mul(in[0], in[1]); }},
      {"mul_broadcast", {{}, {6}}, [](Graph& g, std::vector<Var>& in) { return g.mul(in[0], in[1]); }},
      {"scale", {{4}}, [](Graph& g, std::vector<Var>& in) { return g.scale(in[0], -2.5); }},
      {"add_scalar", {{4}}, [](Graph& g, std::vector<Var>& in) { return g.add_scalar(in[0], 0.7); }},
      {"matmul_vec", {{3}, {3, 4}}, [](Graph& g, std::vector<Var>& in) { return g.matmul(in[0], in[1]); }},
      {"matmul_mat", {{2, 3}, {3, 4}}, [](Graph& g, std::vector<Var>& in) { return g.matmul(in[0], in[1]); }},
      {"conv2d_s1", {{2, 5, 5}, {3, 2, 3, 3}, {3}},
       [](Graph& g, std::vector<Var>& in) { return g.conv2d(in[0], in[1], in[2], 1, 1); }},
      {"conv2d_s2", {{2, 6, 6}, {2, 2, 3, 3}, {2}},
       [](Graph& g, std::vector<Var>& in) { return g.conv2d(in[0], in[1], in[2], 2, 1); }},
      {"relu", {{8}}, [](Graph& g, std::vector<Var>& in) { return g.relu(in[0]); }},
      {"mean", {{7}}, [](Graph& g, std::vector<Var>& in) { return g.mean(in[0]); }},
      {"sum", {{2, 2}}, [](Graph& g, std::vector<Var>& in) { return g.sum(in[0]); }},
      {"exp", {{5}}, [](Graph& g, std::vector<Var>& in) { return g.exp(in[0]); }},
      {"log", {{5}}, [](Graph& g, std::vector<Var>& in) { return g.log(in[0]); }, 0.5, 3.0},
      {"sqrt", {{5}}, [](Graph& g, std::vector<Var>& in) { return g.sqrt(in[0]); }, 0.5, 3.0},
      {"concat", {{2}, {}, {3}},
       [](Graph& g, std::vector<Var>& in) { return g.concat(std::vector<Var>{in[0], in[1], in[2]}); }},
      {"slice", {{4, 3}}, [](Graph& g, std::vector<Var>& in) { return g.slice(in[0], 1, 3); }},
      {"reshape", {{2, 3}}, [](Graph& g, std::vector<Var>& in) { return g.reshape(in[0], {6}); }},
      {"l2_norm", {{5}}, [](Graph& g, std::vector<Var>& in) { return g.l2_norm(in[0]); }},
      {"cosine", {{6}, {6}}, [](Graph& g, std::vector<Var>& in) { return g.cosine(in[0], in[1]); }},
      {"cosine_columns", {{4}, {4, 3}},
       [](Graph& g, std::vector<Var>& in) { return g.cosine_columns(in[0], in[1]); }},
      {"softmax_xent", {{5}}, [](Graph& g, std::vector<Var>& in) { return g.softmax_cross_entropy(in[0], 2); }},
      {"acos", {{5}}, [](Graph& g, std::vector<Var>& in) { return g.acos(in[0]); }, -0.9, 0.9},
      {"cos", {{5}}, [](Graph& g, std::vector<Var>& in) { return g.cos(in[0]); }, -3.0, 3.0},
      {"clamp", {{8}}, [](Graph& g, std::vector<Var>& in) { return g.clamp(in[0], -0.5, 0.4); }},
      {"log_mean_exp", {{6}}, [](Graph& g, std::vector<Var>& in) { return g.log_mean_exp(in[0]); }, -5, 5},
  };

  std::mt19937_64 rng(1234);
  for (const auto& pc : cases) {
    CAPTURE(pc.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Graph g;
      std::vector<Var> in;
      Bindings b;
      std::vector<std::string> wrt;
      for (std::size_t k = 0; k < pc.shapes.size(); ++k) {
        const std::string name = "in" + std::to_string(k);
        in.push_back(g.input(name));
        b[name] = random_tensor(pc.shapes[k], rng, pc.lo, pc.hi);
        wrt.push_back(name);
      }
      Var y = pc.build(g, in);
      Tensor yv = g.evaluate(b, std::vector<Var>{y}).front();
      Tensor proj = random_tensor(yv.shape(), rng);
      g.set_output(g.sum(g.mul(y, g.constant(proj))));
      auto rep = finite_difference_check(g, b, wrt, 1e-5);
      worst = std::max(worst, rep.max_rel_error);
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("evaluation is deterministic and gradients are linear") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Bindings b{{"a", random_tensor({4}, rng)}, {"w", random_tensor({4, 3}, rng)}};
    auto build_f = [](Graph& g) { return g.sum(g.exp(g.matmul(g.input("a"), g.input("w")))); };
    auto build_h = [](Graph& g) {
      return g.l2_norm(g.matmul(g.mul(g.input("a"), g.input("a")), g.input("w")));
    };
    Graph gf, gh, gs;
    gf.set_output(build_f(gf));
    gh.set_output(build_h(gh));
    gs.set_output(gs.add(build_f(gs), build_h(gs)));
    CHECK(gs.evaluate(b) == gs.evaluate(b));
    std::vector<std::string> wrt{"a", "w"};
    auto df = gf.gradient(b, wrt);
    auto dh = gh.gradient(b, wrt);
    auto ds = gs.gradient(b, wrt);
    for (const auto& name : wrt) {
      for (std::size_t i = 0; i < ds.at(name).numel(); ++i) {
        CHECK(ds.at(name)[i] == doctest::Approx(df.at(name)[i] + dh.at(name)[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("cached re-evaluation matches a full traced pass") {
  std::mt19937_64 rng(5);
  Graph g;
  const Var x = g.input("x");
  const Var h = g.relu(g.conv2d(x, g.input("k"), g.input("kb"), 2, 1));
  const Var z = g.reshape(h, {2 * 3 * 3});
  const Var y1 = g.sum(g.relu(g.add(g.matmul(z, g.input("w")), g.input("b"))));
  const Var y2 = g.l2_norm(g.clamp(z, -0.1, 0.2));
  const std::vector<Var> outs{y1, y2};
  Bindings b{{"x", random_tensor({1, 6, 6}, rng)},
             {"k", random_tensor({2, 1, 3, 3}, rng)},
             {"kb", random_tensor({2}, rng)},
             {"w", random_tensor({18, 4}, rng)},
             {"b", random_tensor({4}, rng)}};
  Graph::Cache cache(g, b, outs);
  std::vector<std::uint8_t> full_branches, cached_branches;
  g.evaluate_traced(b, outs, full_branches);
  CHECK(cache.base_branches() == full_branches);
  for (int trial = 0; trial < 50; ++trial) {
    const std::string name = std::vector<std::string>{"x", "k", "kb", "w", "b"}[trial % 5];
    Bindings probe = b;
    std::uniform_int_distribution<std::size_t> pick(0, probe.at(name).numel() - 1);
    probe[name][pick(rng)] += 0.3;
    const auto full = g.evaluate_traced(probe, outs, full_branches);
    const auto cached = cache.evaluate_traced(name, probe.at(name), cached_branches);
    CHECK(cached == full);
    CHECK(cached_branches == full_branches);
  }
}

TEST_CASE("sgd update and learning-rate schedule") {
  ParamStore p;
  p.set("w", Tensor::scalar(1.0));
  Gradients g{{"w", Tensor::scalar(2.0)}};
  CHECK(sgd_update(p, g, 0.1).at("w").item() == doctest::Approx(0.8));
  CHECK(sgd_update(p, g, 0.0) == p);
  CHECK_THROWS_AS(sgd_update(p, Gradients{}, 0.1), std::invalid_argument);

  LrSchedule s;
  CHECK(s.at(0) == doctest::Approx(0.1));
  CHECK(s.at(4) == doctest::Approx(0.1));
  CHECK(s.at(10) == doctest::Approx(0.081));
  CHECK(s.at(100000) == doctest::Approx(1e-6));
  LrSchedule zero{0.0, 0.9, 5, 1e-6};
  CHECK(zero.at(3) == 0.0);
}

TEST_CASE("param store binary round trip is bit exact") {
  std::mt19937_64 rng(5);
  ParamStore p(5);
  p.set("enc.conv0.w", he_uniform({4, 3, 3, 3}, 27, rng));
  p.set("b", Tensor::vector({-0.0, 1e-300, 3.141592653589793}));
  p.set("s", Tensor::scalar(std::nextafter(1.0, 2.0)));
  const auto path = std::filesystem::temp_directory_path() / "morphkit_params.mkpt";
  p.save(path);
  ParamStore q = ParamStore::load(path);
  CHECK(q == p);
  CHECK(std::signbit(q.at("b")[0]));

  std::ifstream is(path, std::ios::binary);
  char magic[5];
  is.read(magic, 5);
  CHECK(std::string(magic, 5) == "MKPT1");

  std::ofstream(path, std::ios::binary) << "NOTMK";
  CHECK_THROWS(ParamStore::load(path));
  std::filesystem::remove(path);

  std::mt19937_64 r1(11), r2(11);
  CHECK(he_uniform({8, 8}, 8, r1) == he_uniform({8, 8}, 8, r2));
}
