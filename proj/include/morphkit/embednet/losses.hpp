#pragma once

#include <span>
#include <vector>

#include "morphkit/embednet/model.hpp"
#include "morphkit/gradcore/graph.hpp"

namespace morphkit {

// Graph builders. Each returns a scalar node.

// -(1/N) sum cos(z_a(x_i), z_a(x_hat_i))
Var appearance_loss(Graph& g, std::span<const Var> za_x, std::span<const Var> za_hat);

// (1/N) sum [ -cos(zg_prime, zg_hat) + max(0, cos(zg_prime, zg_x) - alpha_g * phi) ]
Var landmark_loss(Graph& g, std::span<const Var> zg_prime, std::span<const Var> zg_hat,
                  std::span<const Var> zg_x, std::span<const double> phi, double alpha_g);

// Angular-margin softmax cross-entropy for one sample. W is [d_f, n_classes].
Var id_loss(Graph& g, Var z_f, Var W, std::size_t label, std::size_t n_classes, const MarginConfig& m);

// -[ mean(genuine) - log mean exp(imposter) ]
Var mi_loss(Graph& g, std::span<const Var> genuine, std::span<const Var> imposter);

// Numeric counterparts, evaluated through the same graph code.
using Embedding = std::vector<double>;
double loss_appearance(std::span<const Embedding> za_x, std::span<const Embedding> za_hat);
double loss_landmark(std::span<const Embedding> zg_prime, std::span<const Embedding> zg_hat,
                     std::span<const Embedding> zg_x, std::span<const double> phi, double alpha_g);
// W given row-major [d_f, n_classes].
double loss_id(const Embedding& z_f, std::size_t label, const std::vector<double>& W, std::size_t n_classes,
               const MarginConfig& m);
double loss_mi(std::span<const double> genuine, std::span<const double> imposter);

// Stage-1 batch item: images plus their class indices and phi_g(l, l').
struct TripletItem {
  const FaceImage* x = nullptr;
  const FaceImage* x_prime = nullptr;
  const FaceImage* x_hat = nullptr;
  std::size_t y = 0;
  std::size_t y_prime = 0;
  double phi = 0.0;
};

struct Stage1Terms {
  Var total;
  Var l_a;
  Var l_g;
  Var l_id;
};

// L_id(x) and L_id(x') are averaged over the batch; the total is
// mean L_id(x) + mean L_id(x') + lambda1_a L_a + lambda1_g L_g.
Stage1Terms build_stage1_loss(Graph& g, std::span<const TripletItem> batch, const ModelConfig& config);

// Stage-2 pair: trusted image first, questioned second. Class index is only
// used for real images (ID loss); morph images carry no class.
struct PairItem {
  const FaceImage* first = nullptr;
  const FaceImage* second = nullptr;
  bool genuine = false;
  bool first_real = true;
  bool second_real = true;
  std::size_t first_class = 0;
  std::size_t second_class = 0;
};

struct Stage2Terms {
  Var total;
  Var l_a;
  Var l_g;
  Var l_id;
};

// lambda2_a L2_a + lambda2_g L2_g + L1_id, where L1_id averages the ID loss
// over the distinct real images of the batch. With dual_encoder the first
// image of every pair goes through the frozen "trusted." copy and takes no
// part in the ID loss.
Stage2Terms build_stage2_loss(Graph& g, std::span<const PairItem> batch, const ModelConfig& config,
                              bool dual_encoder = false);

}  // namespace morphkit
