#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "morphkit/common/random.hpp"
#include "morphkit/gradcore/graph.hpp"
#include "morphkit/gradcore/param_store.hpp"
#include "morphkit/imaging/face_image.hpp"

namespace morphkit {

struct ConvBlock {
  std::size_t channels = 8;
  std::size_t stride = 2;
  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

// Conv trunk (3x3 kernels, zero padding 1, relu) whose final feature map is
// split in half along depth: the first half feeds the appearance branch,
// the second half the landmark branch.
struct EncoderConfig {
  std::size_t input_size = 112;
  std::vector<ConvBlock> blocks = {{8, 2}, {16, 2}, {16, 2}, {32, 2}};
  std::size_t d_a = 32;
  std::size_t d_g = 32;
  std::size_t d_f = 64;
  std::size_t n_classes = 2;

  std::size_t final_size() const;
  std::size_t final_depth() const { return blocks.empty() ? 3 : blocks.back().channels; }
  std::size_t branch_inputs() const { return final_size() * final_size() * final_depth() / 2; }
  // Throws std::invalid_argument when the configuration cannot be built.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct MarginConfig {
  double m1 = 0.9;
  double m2 = 0.4;
  double m3 = 0.15;
  double s = 64.0;
  void validate() const;
  friend bool operator==(const MarginConfig&, const MarginConfig&) = default;
};

struct LossWeights {
  double alpha_g = 9.4;
  double lambda1_a = 1.3;
  double lambda1_g = 0.75;
  double lambda2_a = 1.0;
  double lambda2_g = 1.0;
  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  MarginConfig margin;
  LossWeights weights;
  std::size_t critic_hidden = 64;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct EmbeddingTriple {
  std::vector<double> z_a;
  std::vector<double> z_g;
  std::vector<double> z_f;
  friend bool operator==(const EmbeddingTriple&, const EmbeddingTriple&) = default;
};

// Parameter names.
inline const std::string kEncoderPrefix = "enc.";
inline const std::string kTrustedPrefix = "trusted.";
inline const std::string kHeadWeights = "head.W";
inline const std::string kCriticA = "critic_a.";
inline const std::string kCriticG = "critic_g.";

// He-uniform weights, zero biases, head columns normalized to unit length.
ParamStore init_model(const ModelConfig& config, std::uint64_t seed);

// Adds encoder parameters under the given prefix (used for the frozen
// trusted copy in the two-encoder variant).
void init_encoder(ParamStore& params, const EncoderConfig& config, const std::string& prefix, Rng& rng);

struct EncoderVars {
  Var z_a;
  Var z_g;
  Var z_f;
};

// image: [3, S, S] node. Parameters are graph inputs named prefix + "...".
EncoderVars build_encoder(Graph& g, Var image, const EncoderConfig& config,
                          const std::string& prefix = kEncoderPrefix);

// relu(FC(z_i)) and relu(FC(z_j)) with shared weights, concatenated, then a
// single linear unit. Returns a scalar node.
Var build_critic(Graph& g, Var z_i, Var z_j, const std::string& prefix);

EmbeddingTriple encode(const ParamStore& params, const EncoderConfig& config, const FaceImage& image,
                       const std::string& prefix = kEncoderPrefix);

double critic_score(const ParamStore& params, const std::string& prefix, const std::vector<double>& z_i,
                    const std::vector<double>& z_j);

// Rescales every column of the [d_f, n_classes] head to unit length.
void normalize_head(ParamStore& params);

}  // namespace morphkit
