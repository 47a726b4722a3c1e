#include "morphkit/embednet/losses.hpp"

#include <map>
#include <numbers>
#include <stdexcept>

namespace morphkit {

Var appearance_loss(Graph& g, std::span<const Var> za_x, std::span<const Var> za_hat) {
  if (za_x.empty() || za_x.size() != za_hat.size()) throw std::invalid_argument("appearance_loss: bad batch");
  std::vector<Var> cos;
  for (std::size_t i = 0; i < za_x.size(); ++i) cos.push_back(g.cosine(za_x[i], za_hat[i]));
  return g.neg(g.mean(g.concat(cos)));
}

Var landmark_loss(Graph& g, std::span<const Var> zg_prime, std::span<const Var> zg_hat,
                  std::span<const Var> zg_x, std::span<const double> phi, double alpha_g) {
  const std::size_t n = zg_prime.size();
  if (n == 0 || zg_hat.size() != n || zg_x.size() != n || phi.size() != n) {
    throw std::invalid_argument("landmark_loss: bad batch");
  }
  std::vector<Var> terms;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(phi[i] >= 0.0)) throw std::invalid_argument("landmark_loss: phi_g must be >= 0");
    const Var keep = g.cosine(zg_prime[i], zg_hat[i]);
    const Var hinge = g.hinge(g.add_scalar(g.cosine(zg_prime[i], zg_x[i]), -alpha_g * phi[i]));
    terms.push_back(g.sub(hinge, keep));
  }
  return g.mean(g.concat(terms));
}

Var id_loss(Graph& g, Var z_f, Var W, std::size_t label, std::size_t n_classes, const MarginConfig& m) {
  if (label >= n_classes) throw std::invalid_argument("id_loss: label out of range");
  const Var c = g.cosine_columns(z_f, W);
  const Var c_y = g.slice(c, label, label + 1);
  const Var angle = g.clamp(g.add_scalar(g.scale(g.acos(c_y), m.m1), m.m2), 0.0, std::numbers::pi);
  const Var target = g.add_scalar(g.cos(angle), -m.m3);
  std::vector<Var> parts;
  if (label > 0) parts.push_back(g.slice(c, 0, label));
  parts.push_back(target);
  if (label + 1 < n_classes) parts.push_back(g.slice(c, label + 1, n_classes));
  return g.softmax_cross_entropy(g.scale(g.concat(parts), m.s), label);
}

Var mi_loss(Graph& g, std::span<const Var> genuine, std::span<const Var> imposter) {
  if (genuine.empty() || imposter.empty()) throw std::invalid_argument("mi_loss needs genuine and imposter scores");
  return g.sub(g.log_mean_exp(g.concat(imposter)), g.mean(g.concat(genuine)));
}

namespace {

std::vector<Var> constants(Graph& g, std::span<const Embedding> v) {
  std::vector<Var> out;
  for (const auto& e : v) out.push_back(g.constant(Tensor::vector(e)));
  return out;
}

double value_of(Graph& g, Var out) {
  g.set_output(out);
  return g.evaluate(Bindings{}).item();
}

}  // namespace

double loss_appearance(std::span<const Embedding> za_x, std::span<const Embedding> za_hat) {
  Graph g;
  const auto a = constants(g, za_x), b = constants(g, za_hat);
  return value_of(g, appearance_loss(g, a, b));
}

double loss_landmark(std::span<const Embedding> zg_prime, std::span<const Embedding> zg_hat,
                     std::span<const Embedding> zg_x, std::span<const double> phi, double alpha_g) {
  Graph g;
  const auto p = constants(g, zg_prime), h = constants(g, zg_hat), x = constants(g, zg_x);
  return value_of(g, landmark_loss(g, p, h, x, phi, alpha_g));
}

double loss_id(const Embedding& z_f, std::size_t label, const std::vector<double>& W, std::size_t n_classes,
               const MarginConfig& m) {
  if (n_classes == 0 || W.size() != z_f.size() * n_classes) throw ShapeError("loss_id: W must be [d_f, n_classes]");
  Graph g;
  const Var z = g.constant(Tensor::vector(z_f));
  const Var w = g.constant(Tensor::matrix(z_f.size(), n_classes, W));
  return value_of(g, id_loss(g, z, w, label, n_classes, m));
}

double loss_mi(std::span<const double> genuine, std::span<const double> imposter) {
  Graph g;
  std::vector<Var> gv, iv;
  for (double s : genuine) gv.push_back(g.constant(Tensor::scalar(s)));
  for (double s : imposter) iv.push_back(g.constant(Tensor::scalar(s)));
  return value_of(g, mi_loss(g, gv, iv));
}

Stage1Terms build_stage1_loss(Graph& g, std::span<const TripletItem> batch, const ModelConfig& config) {
  if (batch.empty()) throw std::invalid_argument("stage-1 batch is empty");
  const auto& enc = config.encoder;
  const Var W = g.input(kHeadWeights);
  std::vector<Var> za_x, za_hat, zg_x, zg_prime, zg_hat, ids_x, ids_prime;
  std::vector<double> phi;
  for (const auto& t : batch) {
    const EncoderVars ex = build_encoder(g, g.constant(t.x->to_tensor()), enc);
    const EncoderVars ep = build_encoder(g, g.constant(t.x_prime->to_tensor()), enc);
    const EncoderVars eh = build_encoder(g, g.constant(t.x_hat->to_tensor()), enc);
    za_x.push_back(ex.z_a);
    za_hat.push_back(eh.z_a);
    zg_x.push_back(ex.z_g);
    zg_prime.push_back(ep.z_g);
    zg_hat.push_back(eh.z_g);
    phi.push_back(t.phi);
    ids_x.push_back(id_loss(g, ex.z_f, W, t.y, enc.n_classes, config.margin));
    ids_prime.push_back(id_loss(g, ep.z_f, W, t.y_prime, enc.n_classes, config.margin));
  }
  Stage1Terms out;
  out.l_a = appearance_loss(g, za_x, za_hat);
  out.l_g = landmark_loss(g, zg_prime, zg_hat, zg_x, phi, config.weights.alpha_g);
  out.l_id = g.add(g.mean(g.concat(ids_x)), g.mean(g.concat(ids_prime)));
  out.total = g.add(out.l_id, g.add(g.scale(out.l_a, config.weights.lambda1_a),
                                    g.scale(out.l_g, config.weights.lambda1_g)));
  g.set_output(out.total);
  return out;
}

Stage2Terms build_stage2_loss(Graph& g, std::span<const PairItem> batch, const ModelConfig& config,
                              bool dual_encoder) {
  if (batch.empty()) throw std::invalid_argument("stage-2 batch is empty");
  const auto& enc = config.encoder;
  const Var W = g.input(kHeadWeights);
  // Each distinct image is encoded once per encoder.
  std::map<std::pair<const FaceImage*, bool>, EncoderVars> cache;
  auto embed = [&](const FaceImage* img, bool trusted) {
    const auto key = std::make_pair(img, trusted);
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, build_encoder(g, g.constant(img->to_tensor()), enc,
                                            trusted ? kTrustedPrefix : kEncoderPrefix))
               .first;
    }
    return it->second;
  };
  std::vector<Var> gen_a, gen_g, imp_a, imp_g;
  std::map<const FaceImage*, std::size_t> reals;
  for (const auto& p : batch) {
    const EncoderVars a = embed(p.first, dual_encoder);
    const EncoderVars b = embed(p.second, false);
    const Var ta = build_critic(g, a.z_a, b.z_a, kCriticA);
    const Var tg = build_critic(g, a.z_g, b.z_g, kCriticG);
    (p.genuine ? gen_a : imp_a).push_back(ta);
    (p.genuine ? gen_g : imp_g).push_back(tg);
    if (p.first_real && !dual_encoder) reals.emplace(p.first, p.first_class);
    if (p.second_real) reals.emplace(p.second, p.second_class);
  }
  if (gen_a.empty() || imp_a.empty()) throw std::invalid_argument("stage-2 batch needs genuine and imposter pairs");
  Stage2Terms out;
  out.l_a = mi_loss(g, gen_a, imp_a);
  out.l_g = mi_loss(g, gen_g, imp_g);
  if (reals.empty()) throw std::invalid_argument("stage-2 batch has no real image for the ID loss");
  std::vector<Var> ids;
  for (const auto& [img, cls] : reals) ids.push_back(id_loss(g, embed(img, false).z_f, W, cls, enc.n_classes, config.margin));
  out.l_id = g.mean(g.concat(ids));
  out.total = g.add(out.l_id, g.add(g.scale(out.l_a, config.weights.lambda2_a),
                                    g.scale(out.l_g, config.weights.lambda2_g)));
  g.set_output(out.total);
  return out;
}

}  // namespace morphkit
