#include <CLI11.hpp>
#include <iostream>

#include "morphkit/cli/commands.hpp"

using namespace morphkit;

int main(int argc, char** argv) {
  CLI::App app{"morphkit: differential face-morph detection toolkit"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* cmd, bool with_config = true) {
    if (with_config) cmd->add_option("--config", config_path, "key=value run configuration");
    cmd->add_option("--seed", seed, "override the configured seed");
    cmd->add_option("--out", out, "output directory")->required();
  };
  auto config = [&](CLI::App* cmd) {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (cmd->count("--seed")) c.seed = seed;
    c.validate();
    return c;
  };

  SynthConfig synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic face dataset with morphs");
  c_synth->add_option("--subjects", synth.subjects, "number of identities");
  c_synth->add_option("--captures", synth.captures, "real captures per identity");
  c_synth->add_option("--morphs", synth.morphs_per_subject, "morphs targeting each identity");
  c_synth->add_option("--size", synth.image_size, "image side in pixels");
  common(c_synth, false);

  MorphRequest morph;
  double alpha = 0.5, alpha_blend = -1.0;
  bool single_warp = false;
  auto* c_morph = app.add_subcommand("morph", "landmark-based morph of two face images");
  c_morph->add_option("--a", morph.image_a, "first face image (PPM)")->required();
  c_morph->add_option("--a-landmarks", morph.landmarks_a, "landmarks of the first image")->required();
  c_morph->add_option("--b", morph.image_b, "second face image (PPM)")->required();
  c_morph->add_option("--b-landmarks", morph.landmarks_b, "landmarks of the second image")->required();
  c_morph->add_option("--alpha", alpha, "warp (and default blend) factor");
  c_morph->add_option("--alpha-blend", alpha_blend, "blend factor when different from --alpha");
  c_morph->add_flag("--single-warp", single_warp, "warp only the first image");
  c_morph->add_flag("--splice", morph.options.splice, "keep the first image outside the face hull");
  c_morph->add_option("--tps-lambda", morph.options.lambda, "TPS regularization");
  common(c_morph, false);

  std::size_t triplet_count = 8;
  auto* c_triplets = app.add_subcommand("triplets", "write training triplets for inspection");
  c_triplets->add_option("--count", triplet_count, "number of triplets to write");
  common(c_triplets);

  int stage = 1;
  std::string init;
  auto* c_train = app.add_subcommand("train", "train the encoder (stage 1 or 2)");
  c_train->add_option("--stage", stage, "1: embedding pre-training, 2: differential training")->required()->check(CLI::IsMember({1, 2}));
  c_train->add_option("--init", init, "checkpoint to start from (required for stage 2)");
  common(c_train);

  std::string checkpoint;
  auto* c_eval = app.add_subcommand("eval", "score test pairs with a trained checkpoint");
  c_eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  common(c_eval);

  auto* c_sweep = app.add_subcommand("sweep-beta", "D-EER of each beta weighting on the validation split");
  c_sweep->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  common(c_sweep);

  std::string descriptor;
  auto* c_base = app.add_subcommand("baseline", "texture/landmark descriptor + SVM baseline");
  c_base->add_option("--descriptor", descriptor, "lbp, bsif or landmark")->required();
  common(c_base);

  bool inject = false;
  std::string gc_out;
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference check of every loss graph");
  c_grad->add_option("--config", config_path, "key=value run configuration");
  c_grad->add_option("--seed", seed, "override the configured seed");
  c_grad->add_option("--out", gc_out, "optional output directory for report.txt");
  c_grad->add_flag("--inject-fault", inject, "perturb analytic gradients (self-test)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) {
      if (c_synth->count("--seed")) synth.seed = seed;
      cmd_synth(synth, out);
    } else if (c_morph->parsed()) {
      morph.options.alpha_warp = alpha;
      morph.options.alpha_blend = alpha_blend >= 0.0 ? alpha_blend : alpha;
      morph.options.warp_both = !single_warp;
      cmd_morph(morph, out);
    } else if (c_triplets->parsed()) {
      cmd_triplets(config(c_triplets), triplet_count, out);
    } else if (c_train->parsed()) {
      cmd_train(config(c_train), stage, init, out);
    } else if (c_eval->parsed()) {
      cmd_eval(config(c_eval), checkpoint, out);
    } else if (c_sweep->parsed()) {
      cmd_sweep_beta(config(c_sweep), checkpoint, out);
    } else if (c_base->parsed()) {
      cmd_baseline(config(c_base), descriptor, out);
    } else if (c_grad->parsed()) {
      return cmd_gradcheck(config(c_grad), inject, gc_out) ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
