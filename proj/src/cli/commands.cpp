#include "morphkit/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "morphkit/common/parallel.hpp"
#include "morphkit/common/random.hpp"
#include "morphkit/embednet/losses.hpp"
#include "morphkit/evalkit/metrics.hpp"
#include "morphkit/features/descriptors.hpp"
#include "morphkit/gradcore/gradcheck.hpp"
#include "morphkit/imaging/morph.hpp"

namespace morphkit {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void prepare(const fs::path& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return os;
}

// "key value" lines.
class Report {
 public:
  void add(const std::string& key, const std::string& value) { text_ += key + ' ' + value + '\n'; }
  void add(const std::string& key, double value) { add(key, fmt(value)); }
  void raw(const std::string& block) { text_ += block; }
  void write(const fs::path& path) const {
    auto os = open_out(path);
    os << text_;
    if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

Report header(const std::string& command, const RunConfig& config) {
  Report r;
  r.add("command", command);
  r.add("config_hash", config_hash(config));
  r.add("seed", std::to_string(config.seed));
  return r;
}

Manifest training_manifest(const RunConfig& config) {
  if (config.manifest.empty()) throw UsageError("config key 'manifest' is not set");
  return read_manifest(config.manifest);
}

SubjectSplit split_for(const RunConfig& config, const Manifest& m) {
  return split_subjects(manifest_subjects(m), config.train_fraction, config.validation_fraction, config.seed);
}

Manifest restrict(const Manifest& m, const std::vector<int>& subjects) {
  Manifest out{m.root, {}};
  for (const auto& row : m.rows) {
    if (std::find(subjects.begin(), subjects.end(), row.subject_id) != subjects.end()) out.rows.push_back(row);
  }
  return out;
}

std::map<std::string, const Sample*> by_path(const std::vector<Sample>& samples) {
  std::map<std::string, const Sample*> out;
  for (const auto& s : samples) out[s.path] = &s;
  return out;
}

const Sample& lookup(const std::map<std::string, const Sample*>& index, const std::string& path) {
  const auto it = index.find(path);
  if (it == index.end()) throw std::runtime_error("pair references '" + path + "', which is not in the manifest");
  return *it->second;
}

std::string label_name(PairLabel l) { return l == PairLabel::Genuine ? "genuine" : "attack"; }

void write_scores(const fs::path& path, const std::vector<PairRecord>& pairs, const std::vector<double>& scores) {
  auto os = open_out(path);
  os << "pair_index,label,score\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) os << i << ',' << label_name(pairs[i].label) << ',' << fmt(scores[i]) << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

ScoreSet to_score_set(const std::vector<PairRecord>& pairs, const std::vector<double>& scores, Polarity polarity) {
  ScoreSet s;
  s.polarity = polarity;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    (pairs[i].label == PairLabel::Genuine ? s.genuine : s.attack).push_back(scores[i]);
  }
  if (s.genuine.empty() || s.attack.empty()) {
    throw std::runtime_error("evaluation pairs need both genuine and attack pairs");
  }
  return s;
}

// Embeddings of every distinct image in the pairs, per encoder prefix.
class EmbeddingCache {
 public:
  EmbeddingCache(const ParamStore& params, const EncoderConfig& enc, const std::vector<Sample>& samples)
      : params_(params), enc_(enc), samples_(samples), index_(by_path(samples)) {}

  void fill(const std::string& prefix) {
    std::vector<EmbeddingTriple> out(samples_.size());
    parallel_for(samples_.size(), [&](std::size_t i) { out[i] = encode(params_, enc_, samples_[i].image, prefix); });
    auto& table = tables_[prefix];
    for (std::size_t i = 0; i < samples_.size(); ++i) table[samples_[i].path] = std::move(out[i]);
  }

  const EmbeddingTriple& get(const std::string& prefix, const std::string& path) const {
    const auto& table = tables_.at(prefix);
    const auto it = table.find(path);
    if (it == table.end()) throw std::runtime_error("no embedding for '" + path + "'");
    return it->second;
  }

 private:
  const ParamStore& params_;
  EncoderConfig enc_;
  const std::vector<Sample>& samples_;
  std::map<std::string, const Sample*> index_;
  std::map<std::string, std::map<std::string, EmbeddingTriple>> tables_;
};

struct Scorer {
  ParamStore params;
  CheckpointInfo info;
  bool dual = false;
  bool trusted_known = true;

  std::vector<double> score(const std::vector<Sample>& samples, const std::vector<PairRecord>& pairs,
                            const BetaConfig& beta) const {
    EmbeddingCache cache(params, info.model.encoder, samples);
    cache.fill(kEncoderPrefix);
    if (dual) cache.fill(kTrustedPrefix);
    const std::string& tp = dual ? kTrustedPrefix : kEncoderPrefix;
    std::vector<double> out;
    for (const auto& p : pairs) {
      double s = pair_score(cache.get(tp, p.trusted_path), cache.get(kEncoderPrefix, p.questioned_path), beta);
      if (dual && !trusted_known) {
        // Unknown roles: average both assignments.
        s = 0.5 * (s + pair_score(cache.get(tp, p.questioned_path), cache.get(kEncoderPrefix, p.trusted_path), beta));
      }
      out.push_back(s);
    }
    return out;
  }
};

Scorer load_scorer(const RunConfig& config, const fs::path& checkpoint) {
  if (checkpoint.empty()) throw UsageError("--checkpoint is required");
  Scorer s;
  s.params = load_checkpoint(checkpoint, &s.info);
  s.dual = s.info.dual_encoder;
  s.trusted_known = config.trusted_known;
  return s;
}

struct BetaChoice {
  BetaConfig beta;
  std::string source;
  BetaSweepResult sweep;
};

BetaChoice choose_beta(const RunConfig& config, const Scorer& scorer) {
  if (!config.beta_fixed.empty()) return {config.beta_fixed.front(), "fixed", {}};
  const Manifest m = training_manifest(config);
  const SubjectSplit split = split_for(config, m);
  if (split.validation.empty()) {
    throw std::runtime_error("beta=auto needs a validation split (validation_fraction > 0)");
  }
  const Manifest vm = restrict(m, split.validation);
  const auto pairs = build_pairs(vm, PairPhase::Test);
  const auto samples = load_samples(vm, scorer.info.model.encoder.input_size);
  // Score once per grid entry from cached embeddings.
  EmbeddingCache cache(scorer.params, scorer.info.model.encoder, samples);
  cache.fill(kEncoderPrefix);
  if (scorer.dual) cache.fill(kTrustedPrefix);
  const std::string& tp = scorer.dual ? kTrustedPrefix : kEncoderPrefix;
  std::vector<ScoredPair> scored;
  for (const auto& p : pairs) {
    scored.push_back({cache.get(tp, p.trusted_path), cache.get(kEncoderPrefix, p.questioned_path), p.label});
  }
  BetaChoice c;
  c.sweep = beta_sweep(scored, config.beta_grid, config.polarity);
  c.beta = c.sweep.best;
  c.source = "validation";
  return c;
}

std::string beta_text(const BetaConfig& b) { return fmt(b.beta_a) + ":" + fmt(b.beta_g); }

void finish_scores(Report& r, const fs::path& out, const std::vector<PairRecord>& pairs,
                   const std::vector<double>& scores, Polarity polarity) {
  const ScoreSet set = to_score_set(pairs, scores, polarity);
  const DetCurve curve = det_curve(set);
  r.add("genuine_pairs", std::to_string(set.genuine.size()));
  r.add("attack_pairs", std::to_string(set.attack.size()));
  r.raw(summary_text(summarize(curve)));
  write_scores(out / "scores.csv", pairs, scores);
  write_det_csv(out / "det.csv", curve);
  r.write(out / "report.txt");
}

}  // namespace

void cmd_synth(const SynthConfig& synth, const fs::path& out) {
  if (out.empty()) throw UsageError("--out is required");
  if (synth.subjects < 2) throw std::invalid_argument("need >= 2 subjects");
  synth_dataset(synth, out);
}

void cmd_morph(const MorphRequest& req, const fs::path& out) {
  prepare(out);
  const RawImage ra = read_ppm(req.image_a), rb = read_ppm(req.image_b);
  if (ra.width != ra.height || rb.width != ra.width || rb.height != ra.height) {
    throw std::invalid_argument("morph expects two square images of the same size");
  }
  const FaceImage a = normalize_image(ra, ra.width), b = normalize_image(rb, rb.width);
  const LandmarkSet la = read_landmarks(req.landmarks_a), lb = read_landmarks(req.landmarks_b, la.size());
  const MorphRecord m = generate_morph(a, la, b, lb, req.options);
  save_face(out / "morph.ppm", m.image);
  write_landmarks(out / "morph.txt", m.landmarks);
}

void cmd_triplets(const RunConfig& config, std::size_t count, const fs::path& out) {
  prepare(out);
  const Manifest m = training_manifest(config);
  const SubjectSplit split = split_for(config, m);
  const auto samples = load_samples(restrict(m, split.train), config.model.encoder.input_size);
  const ClassMap classes(samples);
  std::vector<const Sample*> reals;
  std::vector<LabeledLandmarks> pool;
  std::vector<FaceImage> images;
  for (const auto& s : samples) {
    if (!s.real()) continue;
    reals.push_back(&s);
    pool.push_back({s.landmarks, static_cast<int>(classes.index(s.subject))});
    images.push_back(s.image);
  }
  Rng rng(mix_seed(config.seed, 0x7219));
  auto os = open_out(out / "triplets.csv");
  os << "index,path,y,y_prime,neighbor_path,phi_g\n";
  for (std::size_t i = 0; i < std::min(count, reals.size()); ++i) {
    const Triplet t = build_triplet(reals[i]->image, reals[i]->landmarks, pool[i].label, pool, images, rng, config.triplet);
    std::ostringstream stem;
    stem << "triplet_" << std::setw(3) << std::setfill('0') << i;
    save_face(out / (stem.str() + "_x.ppm"), t.appearance);
    save_face(out / (stem.str() + "_landmark.ppm"), t.landmark_image);
    save_face(out / (stem.str() + "_intermediate.ppm"), t.intermediate);
    os << i << ',' << reals[i]->path << ',' << classes.subjects()[t.y] << ',' << classes.subjects()[t.y_prime] << ','
       << reals[t.neighbor_index]->path << ',' << fmt(phi_g(t.l, t.l_prime)) << '\n';
  }
  if (!os) throw std::runtime_error("write failed for triplets.csv");
}

void cmd_train(const RunConfig& config, int stage, const fs::path& init, const fs::path& out) {
  if (stage != 1 && stage != 2) throw UsageError("--stage must be 1 or 2");
  if (stage == 2 && init.empty()) throw UsageError("stage 2 requires --init <stage-1 checkpoint>");
  prepare(out);
  const Manifest m = training_manifest(config);
  const SubjectSplit split = split_for(config, m);
  const auto samples = load_samples(restrict(m, split.train), config.model.encoder.input_size);
  const ClassMap classes(samples);

  CheckpointInfo info;
  ParamStore params;
  if (init.empty()) {
    info.model = config.model;
    info.model.encoder.n_classes = classes.size();
    params = init_model(info.model, config.seed);
  } else {
    params = load_checkpoint(init, &info);
    if (info.model.encoder.n_classes != classes.size()) {
      throw std::runtime_error("checkpoint has " + std::to_string(info.model.encoder.n_classes) +
                               " classes but the training split has " + std::to_string(classes.size()) + " subjects");
    }
  }
  const TrainConfig tc = stage_train_config(config, stage);
  auto log_line = [](const EpochLog& l) {
    std::cerr << "epoch " << l.epoch << " loss " << l.loss << " lr " << l.lr << '\n';
  };
  TrainResult result = stage == 1 ? train_stage1(samples, info.model, std::move(params), tc, log_line)
                                  : train_stage2(samples, info.model, std::move(params), tc, log_line);
  info.stage = stage;
  info.seed = config.seed;
  info.dual_encoder = info.dual_encoder || tc.dual_encoder;
  save_checkpoint(out / "checkpoint.mkpt", result.params, info);

  auto log = open_out(out / "train_log.csv");
  log << "epoch,loss,lr\n";
  for (const auto& e : result.log) log << e.epoch << ',' << fmt(e.loss) << ',' << fmt(e.lr) << '\n';
  if (!log) throw std::runtime_error("write failed for train_log.csv");

  Report r = header("train", config);
  r.add("stage", std::to_string(stage));
  r.add("dataset", config.manifest);
  r.add("train_subjects", std::to_string(split.train.size()));
  r.add("validation_subjects", std::to_string(split.validation.size()));
  r.add("test_subjects", std::to_string(split.test.size()));
  r.add("epochs", std::to_string(result.log.size()));
  if (!result.log.empty()) r.add("final_loss", result.log.back().loss);
  r.write(out / "report.txt");
}

void cmd_eval(const RunConfig& config, const fs::path& checkpoint, const fs::path& out) {
  prepare(out);
  const Scorer scorer = load_scorer(config, checkpoint);
  const BetaChoice beta = choose_beta(config, scorer);

  Manifest target;
  std::string eval_id;
  if (!config.eval_manifest.empty()) {
    target = read_manifest(config.eval_manifest);
    eval_id = config.eval_manifest;
  } else {
    const Manifest m = training_manifest(config);
    target = restrict(m, split_for(config, m).test);
    eval_id = config.manifest + " (test split)";
  }
  const auto pairs = build_pairs(target, PairPhase::Test);
  const auto samples = load_samples(target, scorer.info.model.encoder.input_size);
  const auto scores = scorer.score(samples, pairs, beta.beta);

  Report r = header("eval", config);
  r.add("checkpoint_stage", std::to_string(scorer.info.stage));
  r.add("dual_encoder", scorer.dual ? "true" : "false");
  r.add("trusted_known", config.trusted_known ? "true" : "false");
  r.add("train_dataset", config.manifest);
  r.add("eval_dataset", eval_id);
  r.add("beta", beta_text(beta.beta));
  r.add("beta_source", beta.source);
  finish_scores(r, out, pairs, scores, config.polarity);
}

void cmd_sweep_beta(const RunConfig& config, const fs::path& checkpoint, const fs::path& out) {
  prepare(out);
  const Scorer scorer = load_scorer(config, checkpoint);
  RunConfig sweep = config;
  sweep.beta_fixed.clear();
  const BetaChoice c = choose_beta(sweep, scorer);
  Report r = header("sweep-beta", config);
  for (std::size_t k = 0; k < config.beta_grid.size(); ++k) {
    r.add("D-EER[" + beta_text(config.beta_grid[k]) + "]", c.sweep.d_eers[k]);
  }
  r.add("selected_beta", beta_text(c.beta));
  r.write(out / "report.txt");
}

FeatureVector baseline_features(const std::string& descriptor, const Sample& trusted, const Sample& questioned,
                                bool trusted_known, const FilterBank* bank) {
  if (descriptor == "landmark") return landmark_displacement_feature(trusted.landmarks, questioned.landmarks);
  if (descriptor == "lbp") {
    return baseline_pair_feature(lbp_histogram(trusted.image), lbp_histogram(questioned.image), trusted_known);
  }
  if (descriptor == "bsif") {
    if (!bank) throw std::invalid_argument("bsif features need a filter bank");
    return baseline_pair_feature(bsif_code(trusted.image, *bank), bsif_code(questioned.image, *bank), trusted_known);
  }
  throw UsageError("unknown descriptor '" + descriptor + "' (expected lbp, bsif or landmark)");
}

namespace {

// Per-dimension z-scoring fitted on the training features. Raw histogram
// differences are tiny, which makes every RBF kernel value close to one.
struct Standardizer {
  std::vector<double> mean, inv_std;
  void apply(std::vector<FeatureVector>& xs) const {
    for (auto& x : xs) {
      for (std::size_t j = 0; j < x.values.size(); ++j) x.values[j] = (x.values[j] - mean[j]) * inv_std[j];
    }
  }
};

Standardizer fit_standardizer(const std::vector<FeatureVector>& xs) {
  Standardizer s;
  const std::size_t dim = xs.empty() ? 0 : xs.front().values.size();
  s.mean.assign(dim, 0.0);
  s.inv_std.assign(dim, 1.0);
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  for (const auto& x : xs) {
    for (std::size_t j = 0; j < dim; ++j) s.mean[j] += x.values[j] / n;
  }
  for (std::size_t j = 0; j < dim; ++j) {
    double var = 0.0;
    for (const auto& x : xs) var += (x.values[j] - s.mean[j]) * (x.values[j] - s.mean[j]) / n;
    if (var > 1e-24) s.inv_std[j] = 1.0 / std::sqrt(var);
  }
  return s;
}

}  // namespace

void cmd_baseline(const RunConfig& config, const std::string& descriptor, const fs::path& out) {
  if (descriptor != "lbp" && descriptor != "bsif" && descriptor != "landmark") {
    throw UsageError("unknown descriptor '" + descriptor + "' (expected lbp, bsif or landmark)");
  }
  prepare(out);
  const Manifest m = training_manifest(config);
  const SubjectSplit split = split_for(config, m);
  const Manifest train_m = restrict(m, split.train);
  const Manifest test_m =
      config.eval_manifest.empty() ? restrict(m, split.test) : read_manifest(config.eval_manifest);
  const std::size_t size = config.model.encoder.input_size;
  const auto train_samples = load_samples(train_m, size);
  const auto test_samples = load_samples(test_m, size);

  auto train_pairs = build_pairs(train_m, PairPhase::Train);
  {
    // Keep every genuine pair; subsample imposters beyond the cap.
    std::vector<PairRecord> genuine, imposter;
    for (auto& p : train_pairs) (p.label == PairLabel::Genuine ? genuine : imposter).push_back(std::move(p));
    if (genuine.size() + imposter.size() > config.baseline_max_train_pairs) {
      Rng rng(mix_seed(config.seed, 0xBA5E));
      std::shuffle(imposter.begin(), imposter.end(), rng);
      const std::size_t keep =
          config.baseline_max_train_pairs > genuine.size() ? config.baseline_max_train_pairs - genuine.size() : 1;
      imposter.resize(std::min(imposter.size(), keep));
    }
    train_pairs = genuine;
    train_pairs.insert(train_pairs.end(), imposter.begin(), imposter.end());
  }
  const auto test_pairs = build_pairs(test_m, PairPhase::Test);

  FilterBank bank;
  if (descriptor == "bsif") {
    if (!config.bsif_file.empty()) {
      bank = read_filterbank(config.bsif_file);
    } else {
      std::vector<FaceImage> images;
      for (const auto& s : train_samples) images.push_back(s.image);
      Rng rng(mix_seed(config.seed, 0xB51F));
      const auto patches = sample_patches(images, config.bsif_size, config.bsif_patches, rng);
      bank = train_filterbank(patches, config.bsif_size, config.bsif_filters, config.seed);
    }
  }
  auto features = [&](const std::vector<Sample>& samples, const std::vector<PairRecord>& pairs) {
    const auto index = by_path(samples);
    std::vector<FeatureVector> f(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
      f[i] = baseline_features(descriptor, lookup(index, pairs[i].trusted_path),
                               lookup(index, pairs[i].questioned_path), config.trusted_known, &bank);
    });
    return f;
  };
  auto train_x = features(train_samples, train_pairs);
  const Standardizer scale = fit_standardizer(train_x);
  scale.apply(train_x);
  std::vector<int> train_y;
  for (const auto& p : train_pairs) train_y.push_back(p.label == PairLabel::Attack ? 1 : -1);
  const SvmTrainResult svm = svm_train(train_x, train_y, config.svm);

  auto test_x = features(test_samples, test_pairs);
  scale.apply(test_x);
  std::vector<double> scores;
  for (const auto& f : test_x) scores.push_back(svm_score(svm.model, f.values));

  Report r = header("baseline", config);
  r.add("descriptor", descriptor);
  r.add("trusted_known", config.trusted_known ? "true" : "false");
  r.add("train_dataset", config.manifest);
  r.add("eval_dataset", config.eval_manifest.empty() ? config.manifest + " (test split)" : config.eval_manifest);
  r.add("train_pairs", std::to_string(train_pairs.size()));
  r.add("support_vectors", std::to_string(svm.model.support_vectors.size()));
  finish_scores(r, out, test_pairs, scores, Polarity::HighIsAttack);
}

std::vector<GradcheckLine> run_gradcheck(const RunConfig& config, bool inject_fault) {
  ModelConfig mc = config.model;
  mc.encoder.n_classes = 3;
  const std::size_t size = mc.encoder.input_size;
  const std::vector<std::string> names{"L1_a", "L1_g", "L1_id", "L1_t", "L2_a", "L2_g", "L2_t"};
  std::vector<GradcheckLine> lines;
  for (const auto& n : names) lines.push_back({n, 0.0, 0, 0});

  FdCheckOptions opts;
  opts.max_coords_per_tensor = config.gradcheck_coords;
  opts.corrupt_analytic = inject_fault;
  for (std::uint64_t seed : config.gradcheck_seeds) {
    Rng rng(mix_seed(seed, 0x6C));
    std::uniform_real_distribution<double> pixel(-1.0, 1.0), phi(0.0, 0.1);
    std::vector<FaceImage> images(12, FaceImage(size, size));
    for (auto& img : images)
      for (auto& v : img.values()) v = pixel(rng);
    const ParamStore params = init_model(mc, seed);
    Bindings b;
    params.bind(b);

    // Two triplets.
    std::vector<TripletItem> triplets{{&images[0], &images[1], &images[2], 0, 1, phi(rng)},
                                      {&images[3], &images[4], &images[5], 1, 2, phi(rng)}};
    // Two genuine pairs, one cross-subject imposter and one (real, morph).
    std::vector<PairItem> pairs{{&images[6], &images[7], true, true, true, 0, 0},
                                {&images[8], &images[9], true, true, true, 1, 1},
                                {&images[6], &images[8], false, true, true, 0, 1},
                                {&images[10], &images[11], false, true, false, 2, 0}};

    auto check = [&](Graph& g, const std::vector<Var>& outputs, std::size_t first_line) {
      std::vector<std::string> wrt;
      for (const auto& n : params.names())
        if (g.has_input(n)) wrt.push_back(n);
      const auto reports = finite_difference_check(g, b, outputs, wrt, config.gradcheck_eps, opts);
      for (std::size_t k = 0; k < reports.size(); ++k) {
        GradcheckLine& line = lines[first_line + k];
        line.max_rel_error = std::max(line.max_rel_error, reports[k].max_rel_error);
        line.checked += reports[k].checked;
        line.skipped += reports[k].skipped;
      }
    };
    Graph g1;
    const Stage1Terms s1 = build_stage1_loss(g1, triplets, mc);
    check(g1, {s1.l_a, s1.l_g, s1.l_id, s1.total}, 0);
    Graph g2;
    const Stage2Terms s2 = build_stage2_loss(g2, pairs, mc);
    check(g2, {s2.l_a, s2.l_g, s2.total}, 4);
  }
  return lines;
}

bool cmd_gradcheck(const RunConfig& config, bool inject_fault, const fs::path& out) {
  const auto lines = run_gradcheck(config, inject_fault);
  Report r = header("gradcheck", config);
  bool ok = true;
  for (const auto& l : lines) {
    const bool pass = l.max_rel_error <= config.gradcheck_tolerance && l.checked > 0;
    ok = ok && pass;
    std::ostringstream os;
    os << std::setprecision(3) << std::scientific << l.max_rel_error << " checked " << l.checked << " skipped "
       << l.skipped << (pass ? " PASS" : " FAIL");
    r.add(l.loss, os.str());
  }
  r.add("result", ok ? "PASS" : "FAIL");
  std::cout << r.text();
  if (!out.empty()) {
    fs::create_directories(out);
    r.write(out / "report.txt");
  }
  return ok;
}

}  // namespace morphkit
