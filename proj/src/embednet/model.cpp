#include "morphkit/embednet/model.hpp"

#include <cmath>
#include <stdexcept>

namespace morphkit {

std::size_t EncoderConfig::final_size() const {
  std::size_t n = input_size;
  for (const auto& b : blocks) n = (n + 2 - 3) / b.stride + 1;
  return n;
}

void EncoderConfig::validate() const {
  if (input_size < 4) throw std::invalid_argument("encoder input size must be at least 4");
  std::size_t n = input_size;
  for (const auto& b : blocks) {
    if (b.channels == 0 || b.stride == 0) throw std::invalid_argument("conv blocks need channels and stride >= 1");
    n = (n + 2 - 3) / b.stride + 1;
  }
  if (final_depth() % 2 != 0) throw std::invalid_argument("final conv depth must be even for the depth split");
  if (d_a == 0 || d_g == 0 || d_f == 0) throw std::invalid_argument("embedding sizes must be positive");
  if (n_classes == 0) throw std::invalid_argument("n_classes must be positive");
}

void MarginConfig::validate() const {
  if (!(m1 > 0.0)) throw std::invalid_argument("margin m1 must be positive");
  if (!(s > 0.0)) throw std::invalid_argument("logit scale s must be positive");
  if (!std::isfinite(m2) || !std::isfinite(m3)) throw std::invalid_argument("margins must be finite");
}

void LossWeights::validate() const {
  for (double w : {alpha_g, lambda1_a, lambda1_g, lambda2_a, lambda2_g}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
}

void init_encoder(ParamStore& params, const EncoderConfig& config, const std::string& prefix, Rng& rng) {
  config.validate();
  std::size_t in = 3;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const std::size_t out = config.blocks[i].channels;
    const std::string base = prefix + "conv" + std::to_string(i);
    params.set(base + ".w", he_uniform({out, in, 3, 3}, in * 9, rng));
    params.set(base + ".b", Tensor({out}));
    in = out;
  }
  const std::size_t half = config.branch_inputs();
  params.set(prefix + "fc_a.w", he_uniform({half, config.d_a}, half, rng));
  params.set(prefix + "fc_a.b", Tensor({config.d_a}));
  params.set(prefix + "fc_g.w", he_uniform({half, config.d_g}, half, rng));
  params.set(prefix + "fc_g.b", Tensor({config.d_g}));
  const std::size_t cat = config.d_a + config.d_g;
  params.set(prefix + "fc_f.w", he_uniform({cat, config.d_f}, cat, rng));
  params.set(prefix + "fc_f.b", Tensor({config.d_f}));
}

namespace {

void init_critic(ParamStore& params, const std::string& prefix, std::size_t d, std::size_t hidden, Rng& rng) {
  params.set(prefix + "fc1.w", he_uniform({d, hidden}, d, rng));
  params.set(prefix + "fc1.b", Tensor({hidden}));
  params.set(prefix + "fc2.w", he_uniform({2 * hidden, 1}, 2 * hidden, rng));
  params.set(prefix + "fc2.b", Tensor({1}));
}

}  // namespace

void normalize_head(ParamStore& params) {
  Tensor& w = params.at(kHeadWeights);
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  for (std::size_t j = 0; j < cols; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < rows; ++i) ss += w[i * cols + j] * w[i * cols + j];
    if (ss == 0.0) throw std::domain_error("class weight column has zero norm");
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t i = 0; i < rows; ++i) w[i * cols + j] *= inv;
  }
}

ParamStore init_model(const ModelConfig& config, std::uint64_t seed) {
  config.encoder.validate();
  config.margin.validate();
  config.weights.validate();
  if (config.critic_hidden == 0) throw std::invalid_argument("critic hidden size must be positive");
  ParamStore params(seed);
  Rng rng(seed);
  init_encoder(params, config.encoder, kEncoderPrefix, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor w({config.encoder.d_f, config.encoder.n_classes});
  for (auto& v : w.data()) v = normal(rng);
  params.set(kHeadWeights, std::move(w));
  normalize_head(params);
  init_critic(params, kCriticA, config.encoder.d_a, config.critic_hidden, rng);
  init_critic(params, kCriticG, config.encoder.d_g, config.critic_hidden, rng);
  return params;
}

EncoderVars build_encoder(Graph& g, Var image, const EncoderConfig& config, const std::string& prefix) {
  Var h = image;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const std::string base = prefix + "conv" + std::to_string(i);
    h = g.relu(g.conv2d(h, g.input(base + ".w"), g.input(base + ".b"), config.blocks[i].stride, 1));
  }
  const std::size_t depth = config.final_depth();
  const std::size_t half = config.branch_inputs();
  const Var app = g.reshape(g.slice(h, 0, depth / 2), {half});
  const Var geo = g.reshape(g.slice(h, depth / 2, depth), {half});
  EncoderVars out;
  out.z_a = g.add(g.matmul(app, g.input(prefix + "fc_a.w")), g.input(prefix + "fc_a.b"));
  out.z_g = g.add(g.matmul(geo, g.input(prefix + "fc_g.w")), g.input(prefix + "fc_g.b"));
  const Var both = g.concat(std::vector<Var>{out.z_a, out.z_g});
  out.z_f = g.add(g.matmul(both, g.input(prefix + "fc_f.w")), g.input(prefix + "fc_f.b"));
  return out;
}

Var build_critic(Graph& g, Var z_i, Var z_j, const std::string& prefix) {
  const Var w1 = g.input(prefix + "fc1.w"), b1 = g.input(prefix + "fc1.b");
  const Var h_i = g.relu(g.add(g.matmul(z_i, w1), b1));
  const Var h_j = g.relu(g.add(g.matmul(z_j, w1), b1));
  const Var cat = g.concat(std::vector<Var>{h_i, h_j});
  return g.sum(g.add(g.matmul(cat, g.input(prefix + "fc2.w")), g.input(prefix + "fc2.b")));
}

EmbeddingTriple encode(const ParamStore& params, const EncoderConfig& config, const FaceImage& image,
                       const std::string& prefix) {
  if (image.width() != config.input_size || image.height() != config.input_size) {
    throw ShapeError("encode: image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                     ", encoder expects " + std::to_string(config.input_size));
  }
  Graph g;
  const Var x = g.constant(image.to_tensor());
  const EncoderVars e = build_encoder(g, x, config, prefix);
  Bindings b;
  for (const auto& name : g.input_names()) b.emplace(name, params.at(name));
  const std::vector<Var> outs{e.z_a, e.z_g, e.z_f};
  const auto vals = g.evaluate(b, outs);
  return {vals[0].values(), vals[1].values(), vals[2].values()};
}

double critic_score(const ParamStore& params, const std::string& prefix, const std::vector<double>& z_i,
                    const std::vector<double>& z_j) {
  const std::size_t d = params.at(prefix + "fc1.w").dim(0);
  if (z_i.size() != d || z_j.size() != d) throw ShapeError("critic_score: embedding size mismatch");
  Graph g;
  const Var out = build_critic(g, g.constant(Tensor::vector(z_i)), g.constant(Tensor::vector(z_j)), prefix);
  g.set_output(out);
  Bindings b;
  for (const auto& name : g.input_names()) b.emplace(name, params.at(name));
  return g.evaluate(b).item();
}

}  // namespace morphkit
