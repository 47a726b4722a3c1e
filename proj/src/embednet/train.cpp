#include "morphkit/embednet/train.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "morphkit/embednet/losses.hpp"

namespace morphkit {

ClassMap::ClassMap(std::span<const Sample> samples) {
  for (const auto& s : samples) {
    if (s.real()) subjects_.push_back(s.subject);
  }
  std::sort(subjects_.begin(), subjects_.end());
  subjects_.erase(std::unique(subjects_.begin(), subjects_.end()), subjects_.end());
}

bool ClassMap::contains(int subject) const {
  return std::binary_search(subjects_.begin(), subjects_.end(), subject);
}

std::size_t ClassMap::index(int subject) const {
  const auto it = std::lower_bound(subjects_.begin(), subjects_.end(), subject);
  if (it == subjects_.end() || *it != subject) {
    throw std::out_of_range("subject " + std::to_string(subject) + " has no class");
  }
  return static_cast<std::size_t>(it - subjects_.begin());
}

namespace {

void check_classes(const ClassMap& classes, const ModelConfig& config) {
  if (classes.size() < 2) throw std::invalid_argument("training needs at least 2 subjects with real images");
  if (classes.size() != config.encoder.n_classes) {
    throw std::invalid_argument("model has " + std::to_string(config.encoder.n_classes) + " classes but the data has " +
                                std::to_string(classes.size()) + " subjects");
  }
}

// One SGD step on the listed parameters; returns the loss.
double step(const Graph& g, ParamStore& params, const std::vector<std::string>& trainable, double lr) {
  Bindings b;
  params.bind(b);
  double value = 0.0;
  const Gradients grads = g.gradient(b, trainable, &value);
  if (lr != 0.0) {
    sgd_update_subset(params, grads, lr, trainable);
    normalize_head(params);
  }
  return value;
}

std::vector<std::string> with_prefixes(const ParamStore& p, std::initializer_list<std::string> prefixes) {
  std::vector<std::string> out;
  for (const auto& pre : prefixes) {
    for (auto& n : p.names_with_prefix(pre)) out.push_back(std::move(n));
  }
  return out;
}

}  // namespace

TrainResult train_stage1(std::span<const Sample> samples, const ModelConfig& config, ParamStore init,
                         const TrainConfig& train, const EpochCallback& on_epoch) {
  if (train.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const ClassMap classes(samples);
  check_classes(classes, config);

  std::vector<const Sample*> reals;
  std::vector<LabeledLandmarks> pool;
  std::vector<FaceImage> pool_images;
  for (const auto& s : samples) {
    if (!s.real()) continue;
    reals.push_back(&s);
    pool.push_back({s.landmarks, static_cast<int>(classes.index(s.subject))});
    pool_images.push_back(s.image);
  }

  TrainResult result{std::move(init), {}};
  ParamStore& params = result.params;
  const std::vector<std::string> trainable = with_prefixes(params, {kEncoderPrefix, kHeadWeights});

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    Rng rng(mix_seed(train.seed, 0x51000 + static_cast<std::uint64_t>(epoch)));
    std::vector<Triplet> triplets;
    triplets.reserve(reals.size());
    for (std::size_t i = 0; i < reals.size(); ++i) {
      triplets.push_back(
          build_triplet(reals[i]->image, reals[i]->landmarks, pool[i].label, pool, pool_images, rng, train.triplet));
    }
    std::vector<std::size_t> order(triplets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    const double lr = train.lr.at(epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
      const std::size_t end = std::min(order.size(), start + train.batch_size);
      std::vector<TripletItem> batch;
      for (std::size_t k = start; k < end; ++k) {
        const Triplet& t = triplets[order[k]];
        batch.push_back({&t.appearance, &t.landmark_image, &t.intermediate, static_cast<std::size_t>(t.y),
                         static_cast<std::size_t>(t.y_prime), phi_g(t.l, t.l_prime)});
      }
      Graph g;
      build_stage1_loss(g, batch, config);
      total += step(g, params, trainable, lr) * static_cast<double>(batch.size());
    }
    result.log.push_back({epoch, total / static_cast<double>(order.size()), lr});
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

TrainResult train_stage2(std::span<const Sample> samples, const ModelConfig& config, ParamStore stage1,
                         const TrainConfig& train, const EpochCallback& on_epoch) {
  if (train.batch_size < 4) throw std::invalid_argument("stage-2 batch size must be at least 4");
  const ClassMap classes(samples);
  check_classes(classes, config);

  std::map<int, std::vector<const Sample*>> reals_by_subject;
  std::vector<const Sample*> reals, morphs;
  for (const auto& s : samples) {
    if (s.real()) {
      reals_by_subject[s.subject].push_back(&s);
      reals.push_back(&s);
    }
  }
  for (const auto& s : samples) {
    if (!s.real() && reals_by_subject.count(s.subject)) morphs.push_back(&s);
  }
  if (morphs.empty()) throw std::invalid_argument("stage 2 needs morph images of training subjects");
  std::vector<std::pair<const Sample*, const Sample*>> genuine;
  for (const auto& [subject, list] : reals_by_subject) {
    for (std::size_t i = 0; i < list.size(); ++i)
      for (std::size_t j = i + 1; j < list.size(); ++j) genuine.emplace_back(list[i], list[j]);
  }
  if (genuine.empty()) throw std::invalid_argument("stage 2 needs a subject with two real captures");

  TrainResult result{std::move(stage1), {}};
  ParamStore& params = result.params;
  if (train.dual_encoder) {
    for (const auto& name : params.names_with_prefix(kEncoderPrefix)) {
      params.set(kTrustedPrefix + name.substr(kEncoderPrefix.size()), params.at(name));
    }
  }
  const std::vector<std::string> trainable = with_prefixes(params, {kEncoderPrefix, kHeadWeights, kCriticA, kCriticG});
  const std::vector<std::string> critics = with_prefixes(params, {kCriticA, kCriticG});
  const std::vector<std::string> encoder = with_prefixes(params, {kEncoderPrefix, kHeadWeights});

  const std::size_t n_gen = train.batch_size / 2;
  const std::size_t n_imp = std::max<std::size_t>(1, train.batch_size / 4);
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    Rng rng(mix_seed(train.seed, 0x52000 + static_cast<std::uint64_t>(epoch)));
    auto pairs = genuine;
    std::bernoulli_distribution flip(0.5);
    for (auto& p : pairs) {
      if (flip(rng)) std::swap(p.first, p.second);
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    std::uniform_int_distribution<std::size_t> pick_real(0, reals.size() - 1), pick_morph(0, morphs.size() - 1);

    const double lr = train.lr.at(epoch);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < pairs.size(); start += n_gen) {
      const std::size_t end = std::min(pairs.size(), start + n_gen);
      std::vector<PairItem> batch;
      auto item = [&](const Sample* a, const Sample* b, bool gen) {
        PairItem p;
        p.first = &a->image;
        p.second = &b->image;
        p.genuine = gen;
        p.first_real = a->real();
        p.second_real = b->real();
        p.first_class = a->real() ? classes.index(a->subject) : 0;
        p.second_class = b->real() ? classes.index(b->subject) : 0;
        return p;
      };
      for (std::size_t k = start; k < end; ++k) batch.push_back(item(pairs[k].first, pairs[k].second, true));
      for (std::size_t k = 0; k < n_imp; ++k) {
        const Sample* a = reals[pick_real(rng)];
        const Sample* b = a;
        while (b->subject == a->subject) b = reals[pick_real(rng)];
        batch.push_back(item(a, b, false));
      }
      for (std::size_t k = 0; k < n_imp; ++k) {
        const Sample* m = morphs[pick_morph(rng)];
        const auto& own = reals_by_subject.at(m->subject);
        std::uniform_int_distribution<std::size_t> pick_own(0, own.size() - 1);
        batch.push_back(item(own[pick_own(rng)], m, false));
      }
      Graph g;
      build_stage2_loss(g, batch, config, train.dual_encoder);
      if (train.alternate_updates) {
        // Critics first, then the encoder against the updated critics.
        total += step(g, params, critics, lr);
        step(g, params, encoder, lr);
      } else {
        total += step(g, params, trainable, lr);
      }
      ++batches;
    }
    result.log.push_back({epoch, total / static_cast<double>(batches), lr});
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

namespace {

std::string join_blocks(const std::vector<ConvBlock>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(blocks[i].channels) + ':' + std::to_string(blocks[i].stride);
  }
  return s;
}

std::vector<ConvBlock> parse_blocks(const std::string& s) {
  std::vector<ConvBlock> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::runtime_error("bad conv block '" + item + "'");
    out.push_back({std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1))});
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const CheckpointInfo& info) {
  params.save(path);
  std::ofstream os(path.string() + ".meta", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint sidecar for '" + path.string() + "'");
  const auto& e = info.model.encoder;
  const auto& m = info.model.margin;
  const auto& w = info.model.weights;
  os << "format=morphkit-checkpoint-1\n"
     << "stage=" << info.stage << '\n'
     << "seed=" << info.seed << '\n'
     << "dual_encoder=" << (info.dual_encoder ? 1 : 0) << '\n'
     << "input_size=" << e.input_size << '\n'
     << "conv_blocks=" << join_blocks(e.blocks) << '\n'
     << "d_a=" << e.d_a << '\n'
     << "d_g=" << e.d_g << '\n'
     << "d_f=" << e.d_f << '\n'
     << "n_classes=" << e.n_classes << '\n'
     << "critic_hidden=" << info.model.critic_hidden << '\n'
     << "m1=" << fmt(m.m1) << "\nm2=" << fmt(m.m2) << "\nm3=" << fmt(m.m3) << "\ns=" << fmt(m.s) << '\n'
     << "alpha_g=" << fmt(w.alpha_g) << "\nlambda1_a=" << fmt(w.lambda1_a) << "\nlambda1_g=" << fmt(w.lambda1_g)
     << "\nlambda2_a=" << fmt(w.lambda2_a) << "\nlambda2_g=" << fmt(w.lambda2_g) << '\n';
  if (!os) throw std::runtime_error("write failed for checkpoint sidecar");
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const std::string meta = path.string() + ".meta";
  std::ifstream is(meta);
  if (!is) throw std::runtime_error("missing checkpoint sidecar '" + meta + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed sidecar line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error("checkpoint sidecar lacks '" + k + "'");
    return it->second;
  };
  if (get("format") != "morphkit-checkpoint-1") throw std::runtime_error("unsupported checkpoint format");
  CheckpointInfo info;
  info.stage = std::stoi(get("stage"));
  info.seed = std::stoull(get("seed"));
  info.dual_encoder = get("dual_encoder") == "1";
  auto& e = info.model.encoder;
  e.input_size = std::stoul(get("input_size"));
  e.blocks = parse_blocks(get("conv_blocks"));
  e.d_a = std::stoul(get("d_a"));
  e.d_g = std::stoul(get("d_g"));
  e.d_f = std::stoul(get("d_f"));
  e.n_classes = std::stoul(get("n_classes"));
  info.model.critic_hidden = std::stoul(get("critic_hidden"));
  auto& m = info.model.margin;
  m.m1 = std::stod(get("m1"));
  m.m2 = std::stod(get("m2"));
  m.m3 = std::stod(get("m3"));
  m.s = std::stod(get("s"));
  auto& w = info.model.weights;
  w.alpha_g = std::stod(get("alpha_g"));
  w.lambda1_a = std::stod(get("lambda1_a"));
  w.lambda1_g = std::stod(get("lambda1_g"));
  w.lambda2_a = std::stod(get("lambda2_a"));
  w.lambda2_g = std::stod(get("lambda2_g"));
  return info;
}

ParamStore load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  const CheckpointInfo meta = read_checkpoint_info(path);
  ParamStore params = ParamStore::load(path);
  const ParamStore reference = init_model(meta.model, 0);
  for (const auto& [name, t] : reference.tensors()) {
    if (!params.contains(name) || params.at(name).shape() != t.shape()) {
      throw std::runtime_error("checkpoint '" + path.string() + "' does not match its recorded architecture at '" +
                               name + "'");
    }
  }
  if (info) *info = meta;
  return params;
}

}  // namespace morphkit
