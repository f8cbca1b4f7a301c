#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geosearch/encoders.hpp"
#include "geosearch/features.hpp"

namespace geosearch {

struct TrainConfig {
  double beta = 3.99;          // softmax temperature, fixed (not learned)
  double learning_rate = 3e-5;
  double weight_decay = 1e-6;
  int batch_size = 32;
  int epochs = 2;
  std::uint64_t seed = 0;
  void validate() const;
};

struct LossReport {
  double img_txt = 0.0;
  double txt_img = 0.0;
  double img_loc = 0.0;
  double loc_img = 0.0;
  double total = 0.0;
};

/// Contrastive loss from a to b: rows are unit embeddings, positives on the
/// diagonal. Optionally emits dL/dS for S = A Bᵀ (the 1/β factor included).
double info_nce(const Eigen::MatrixXd& e_a, const Eigen::MatrixXd& e_b, double beta,
                Eigen::MatrixXd* d_similarity = nullptr);

struct BatchEmbeddings {
  Eigen::MatrixXd img_txt;  // N x D_e, unit rows
  Eigen::MatrixXd txt;
  Eigen::MatrixXd img_loc;
  Eigen::MatrixXd loc;
};

/// Halved sum of the four directional terms.
LossReport total_loss(const BatchEmbeddings& e, double beta);

/// One training batch in matrix form; rows align across members.
struct TrainBatch {
  Eigen::MatrixXd visual;  // N x D_v
  Eigen::MatrixXd text;    // N x D_v
  Eigen::MatrixXd points;  // N x 3, scaled ECEF
};

TrainBatch make_batch(const FeatureStore& store, const std::vector<std::size_t>& indices);

/// Everything the backward pass needs from the forward pass.
struct L2Cache {
  Eigen::MatrixXd pre;    // rows before normalization
  Eigen::VectorXd norms;  // row norms
};

struct ForwardCache {
  std::vector<MlpCache> loc_branches;
  MlpCache f_txt;
  MlpCache f_loc;
  MlpCache g_txt;
  L2Cache n_img_txt;
  L2Cache n_txt;
  L2Cache n_img_loc;
  L2Cache n_loc;
  BatchEmbeddings embeddings;
};

BatchEmbeddings batch_forward(const EncoderModel& model, const TrainBatch& batch,
                              ForwardCache* cache = nullptr);

/// Loss plus analytic gradients for every trainable tensor. Frozen RFF
/// frequencies get none by construction.
LossReport batch_backward(const EncoderModel& model, const TrainBatch& batch,
                          const ForwardCache& cache, double beta, ModelGrads& grads);

struct AdamWState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Eigen::VectorXd> m;
  std::vector<Eigen::VectorXd> v;

  static AdamWState like(const std::vector<TensorRef>& params);
};

/// Decoupled update: p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + eps).
void adamw_step(std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                AdamWState& state, const TrainConfig& config);

struct TrainResult {
  EncoderModel model;
  std::vector<std::pair<std::uint64_t, LossReport>> history;  // (optimizer step, report)
};

/// Seeded init + epochs of shuffled full batches (incomplete tails dropped).
TrainResult train(const FeatureStore& dataset, const EncoderConfig& enc_config,
                  const TrainConfig& config);

/// CSV with header step,loss_img_txt,loss_txt_img,loss_img_loc,loss_loc_img,total.
void write_loss_csv(const std::vector<std::pair<std::uint64_t, LossReport>>& history,
                    const std::string& path);

}  // namespace geosearch
