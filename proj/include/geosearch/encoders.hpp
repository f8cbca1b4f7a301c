#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geosearch/geodesy.hpp"

namespace geosearch {

enum class Activation { kRelu, kIdentity };

/// Fully connected stack. weights[l] is (dims[l+1] x dims[l]); the activation
/// applies to hidden layers only, the output layer is linear.
struct Mlp {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::kRelu;

  Eigen::Index input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.empty() ? 0 : weights.back().rows(); }
  std::size_t layer_count() const { return weights.size(); }
  void validate() const;
};

/// Per-layer activations kept around for the backward pass.
struct MlpCache {
  std::vector<Eigen::MatrixXd> activations;  // a0 (input) .. aL (output)
  std::vector<Eigen::MatrixXd> preacts;      // z1 .. zL
};

/// Rows of x are samples. Returns the output batch; fills `cache` if given.
Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x, MlpCache* cache = nullptr);

struct MlpGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

MlpGrads mlp_grads_like(const Mlp& mlp);

/// Reverse-mode gradients for one batch. d_output has the shape of the
/// forward output; returns parameter grads, optionally the input grad.
MlpGrads mlp_backward(const Mlp& mlp, const MlpCache& cache, const Eigen::MatrixXd& d_output,
                      Eigen::MatrixXd* d_input = nullptr);

/// Random Fourier feature layer. `frequencies` (F x 3) is drawn once at init
/// with entries ~ N(0, sigma^2) and stays frozen through training.
struct RffLayer {
  double sigma = 1.0;
  Eigen::MatrixXd frequencies;
  Eigen::Index feature_count() const { return frequencies.rows(); }
};

/// gamma(p) = [cos(2 pi W p), sin(2 pi W p)], length 2F.
Eigen::VectorXd rff_map(const Eigen::Vector3d& p_scaled, const RffLayer& layer);
Eigen::MatrixXd rff_map_batch(const Eigen::MatrixXd& p_scaled, const RffLayer& layer);

/// Multi-scale location encoder: K (RFF, MLP) branches summed into one
/// embedding, l2-normalized at the end.
struct LocationEncoder {
  struct Branch {
    RffLayer rff;
    Mlp mlp;
  };
  std::vector<Branch> branches;
  Eigen::Index embedding_dim() const {
    return branches.empty() ? 0 : branches.front().mlp.output_dim();
  }
};

/// Trainable heads over frozen backbone features: f_txt / f_loc consume
/// visual features, g_txt consumes text features.
struct ProjectionHeads {
  Mlp f_txt;
  Mlp f_loc;
  Mlp g_txt;
};

struct EncoderModel {
  LocationEncoder location;
  ProjectionHeads heads;
};

struct EncoderConfig {
  int visual_dim = 768;                       // backbone feature width D_v
  int embed_dim = 512;                        // shared embedding width D_e
  int rff_features = 256;                     // F per branch (gamma width 2F)
  std::vector<double> sigmas = {1.0, 16.0, 256.0};  // one per branch
  int location_hidden = 1024;
  int head_hidden = 0;                        // 0 means visual_dim

  int branch_count() const { return static_cast<int>(sigmas.size()); }
  void validate() const;
};

/// Seeded parameter init: Kaiming-uniform MLP weights, zero biases, frozen
/// RFF frequencies ~ N(0, sigma_i^2). Same seed gives bit-identical params.
EncoderModel init_parameters(const EncoderConfig& config, std::uint64_t seed);

/// l2 normalization; a (near-)zero vector is an error, never returned silently.
Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v);

/// ECEF projection scaled by 1/a onto the unit ball, the encoder's input.
Eigen::Vector3d scaled_ecef(const GpsCoordinate& coord);

/// Sum of branch outputs before normalization (training and oracle seam).
Eigen::VectorXd encode_location_prenorm(const GpsCoordinate& coord, const LocationEncoder& enc);

/// Unit-norm location embedding e_loc.
Eigen::VectorXd encode_location(const GpsCoordinate& coord, const LocationEncoder& enc);

/// (e_img_txt, e_img_loc), both unit norm.
std::pair<Eigen::VectorXd, Eigen::VectorXd> project_image(const Eigen::VectorXd& visual_feature,
                                                          const ProjectionHeads& heads);

/// Unit-norm e_txt from a backbone text feature.
Eigen::VectorXd encode_text(const Eigen::VectorXd& text_feature, const ProjectionHeads& heads);

/// One unit-norm location embedding per row; batched over all branches.
Eigen::MatrixXd encode_locations_batch(const std::vector<GpsCoordinate>& coords,
                                       const LocationEncoder& enc);

/// Flat view over a parameter tensor; `data` aliases the owning Eigen object.
struct TensorRef {
  std::string name;
  double* data;
  std::ptrdiff_t size;
};

/// Trainable tensors (MLP weights and biases; RFF frequencies excluded),
/// in a fixed order shared with grad_tensors().
std::vector<TensorRef> trainable_tensors(EncoderModel& model);

struct ModelGrads {
  std::vector<MlpGrads> location_branches;
  MlpGrads f_txt;
  MlpGrads f_loc;
  MlpGrads g_txt;
};

ModelGrads grads_like(const EncoderModel& model);
std::vector<TensorRef> grad_tensors(ModelGrads& grads);

/// GSWT weight file: magic "GSWT", version u32, then per tensor a u32-length
/// name, u32 rank, u64 dims and row-major f64 little-endian payload.
void save_weights(const EncoderModel& model, const std::string& path);
EncoderModel load_weights(const std::string& path);

}  // namespace geosearch
