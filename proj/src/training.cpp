#include "geosearch/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "geosearch/io.hpp"
#include "geosearch/rng.hpp"

namespace geosearch {

void TrainConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("TrainConfig: beta must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight decay must be >= 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
}

double info_nce(const Eigen::MatrixXd& e_a, const Eigen::MatrixXd& e_b, double beta,
                Eigen::MatrixXd* d_similarity) {
  if (e_a.rows() != e_b.rows() || e_a.cols() != e_b.cols())
    throw std::invalid_argument("info_nce: embedding batches must have equal shapes");
  if (e_a.rows() < 1) throw std::invalid_argument("info_nce: empty batch");
  if (!e_a.allFinite() || !e_b.allFinite())
    throw std::invalid_argument("info_nce: non-finite embeddings");
  if (!(beta > 0.0)) throw std::invalid_argument("info_nce: beta must be > 0");

  const Eigen::Index n = e_a.rows();
  const Eigen::MatrixXd logits = (e_a * e_b.transpose()) / beta;
  const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
  const Eigen::MatrixXd shifted = logits.colwise() - row_max;
  const Eigen::MatrixXd exp_shifted = shifted.array().exp();
  const Eigen::VectorXd denom = exp_shifted.rowwise().sum();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    loss -= shifted(i, i) - std::log(denom[i]);
  loss /= static_cast<double>(n);
  if (d_similarity) {
    Eigen::MatrixXd probs = exp_shifted.array().colwise() / denom.array();
    probs.diagonal().array() -= 1.0;
    *d_similarity = probs / (static_cast<double>(n) * beta);
  }
  return loss;
}

LossReport total_loss(const BatchEmbeddings& e, double beta) {
  LossReport r;
  r.img_txt = info_nce(e.img_txt, e.txt, beta);
  r.txt_img = info_nce(e.txt, e.img_txt, beta);
  r.img_loc = info_nce(e.img_loc, e.loc, beta);
  r.loc_img = info_nce(e.loc, e.img_loc, beta);
  r.total = 0.5 * (r.img_txt + r.txt_img + r.img_loc + r.loc_img);
  return r;
}

TrainBatch make_batch(const FeatureStore& store, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  const Eigen::Index n = static_cast<Eigen::Index>(indices.size());
  TrainBatch batch;
  batch.visual.resize(n, store.visual_dim);
  batch.text.resize(n, store.visual_dim);
  batch.points.resize(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    const FeatureEntry& e = store.entries.at(indices[static_cast<std::size_t>(r)]);
    if (!e.gps) throw std::invalid_argument("make_batch: record '" + e.id + "' has no gps");
    if (e.text_feature.size() != store.visual_dim)
      throw std::invalid_argument("make_batch: record '" + e.id + "' has no text feature");
    batch.visual.row(r) = e.visual_feature.transpose();
    batch.text.row(r) = e.text_feature.transpose();
    batch.points.row(r) = scaled_ecef(*e.gps).transpose();
  }
  return batch;
}

namespace {

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& pre, L2Cache* cache, const char* what) {
  Eigen::VectorXd norms = pre.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] > 1e-12))
      throw std::domain_error(std::string(what) + ": degenerate zero-norm row " +
                              std::to_string(i));
  Eigen::MatrixXd out = pre.array().colwise() / norms.array();
  if (cache) {
    cache->pre = pre;
    cache->norms = std::move(norms);
  }
  return out;
}

/// Backprop through row-wise l2 normalization: g_pre = (g − (g·e)e)/r.
Eigen::MatrixXd l2_backward(const Eigen::MatrixXd& d_out, const L2Cache& cache) {
  Eigen::MatrixXd unit = cache.pre.array().colwise() / cache.norms.array();
  const Eigen::VectorXd dots = (d_out.array() * unit.array()).rowwise().sum();
  Eigen::MatrixXd g = d_out - (unit.array().colwise() * dots.array()).matrix();
  return (g.array().colwise() / cache.norms.array()).matrix();
}

}  // namespace

BatchEmbeddings batch_forward(const EncoderModel& model, const TrainBatch& batch,
                              ForwardCache* cache) {
  if (batch.visual.rows() != batch.text.rows() || batch.visual.rows() != batch.points.rows())
    throw std::invalid_argument("batch_forward: row count mismatch across batch members");
  BatchEmbeddings out;
  MlpCache* c_f_txt = cache ? &cache->f_txt : nullptr;
  MlpCache* c_f_loc = cache ? &cache->f_loc : nullptr;
  MlpCache* c_g_txt = cache ? &cache->g_txt : nullptr;
  out.img_txt = normalize_rows(mlp_forward(model.heads.f_txt, batch.visual, c_f_txt),
                               cache ? &cache->n_img_txt : nullptr, "image-text embedding");
  out.img_loc = normalize_rows(mlp_forward(model.heads.f_loc, batch.visual, c_f_loc),
                               cache ? &cache->n_img_loc : nullptr, "image-location embedding");
  out.txt = normalize_rows(mlp_forward(model.heads.g_txt, batch.text, c_g_txt),
                           cache ? &cache->n_txt : nullptr, "text embedding");

  const auto& branches = model.location.branches;
  if (branches.empty()) throw std::invalid_argument("batch_forward: encoder has no branches");
  if (cache) cache->loc_branches.assign(branches.size(), MlpCache{});
  Eigen::MatrixXd loc_pre =
      Eigen::MatrixXd::Zero(batch.points.rows(), branches.front().mlp.output_dim());
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const Eigen::MatrixXd gamma = rff_map_batch(batch.points, branches[b].rff);
    loc_pre += mlp_forward(branches[b].mlp, gamma, cache ? &cache->loc_branches[b] : nullptr);
  }
  out.loc = normalize_rows(loc_pre, cache ? &cache->n_loc : nullptr, "location embedding");
  if (cache) cache->embeddings = out;
  return out;
}

LossReport batch_backward(const EncoderModel& model, const TrainBatch& batch,
                          const ForwardCache& cache, double beta, ModelGrads& grads) {
  const BatchEmbeddings& e = cache.embeddings;
  LossReport report;
  Eigen::MatrixXd ds_it, ds_ti, ds_il, ds_li;
  report.img_txt = info_nce(e.img_txt, e.txt, beta, &ds_it);
  report.txt_img = info_nce(e.txt, e.img_txt, beta, &ds_ti);
  report.img_loc = info_nce(e.img_loc, e.loc, beta, &ds_il);
  report.loc_img = info_nce(e.loc, e.img_loc, beta, &ds_li);
  report.total = 0.5 * (report.img_txt + report.txt_img + report.img_loc + report.loc_img);

  // d total / d embeddings; each directional term contributes through both operands.
  Eigen::MatrixXd d_img_txt = 0.5 * (ds_it * e.txt + ds_ti.transpose() * e.txt);
  Eigen::MatrixXd d_txt = 0.5 * (ds_ti * e.img_txt + ds_it.transpose() * e.img_txt);
  Eigen::MatrixXd d_img_loc = 0.5 * (ds_il * e.loc + ds_li.transpose() * e.loc);
  Eigen::MatrixXd d_loc = 0.5 * (ds_li * e.img_loc + ds_il.transpose() * e.img_loc);

  grads.f_txt = mlp_backward(model.heads.f_txt, cache.f_txt, l2_backward(d_img_txt, cache.n_img_txt));
  grads.f_loc = mlp_backward(model.heads.f_loc, cache.f_loc, l2_backward(d_img_loc, cache.n_img_loc));
  grads.g_txt = mlp_backward(model.heads.g_txt, cache.g_txt, l2_backward(d_txt, cache.n_txt));

  const Eigen::MatrixXd d_loc_pre = l2_backward(d_loc, cache.n_loc);
  grads.location_branches.resize(model.location.branches.size());
  for (std::size_t b = 0; b < model.location.branches.size(); ++b)
    grads.location_branches[b] =
        mlp_backward(model.location.branches[b].mlp, cache.loc_branches[b], d_loc_pre);

  for (auto& t : grad_tensors(grads))
    for (std::ptrdiff_t k = 0; k < t.size; ++k)
      if (!std::isfinite(t.data[k]))
        throw std::runtime_error("batch_backward: non-finite gradient in " + t.name);
  (void)batch;
  return report;
}

AdamWState AdamWState::like(const std::vector<TensorRef>& params) {
  AdamWState s;
  for (const auto& p : params) {
    s.m.push_back(Eigen::VectorXd::Zero(p.size));
    s.v.push_back(Eigen::VectorXd::Zero(p.size));
  }
  return s;
}

void adamw_step(std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                AdamWState& state, const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adamw_step: tensor list size mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const double decay = 1.0 - config.learning_rate * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size || params[i].size != state.m[i].size())
      throw std::invalid_argument("adamw_step: shape mismatch in " + params[i].name);
    double* p = params[i].data;
    const double* g = grads[i].data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::ptrdiff_t k = 0; k < params[i].size; ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] = p[k] * decay - config.learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

TrainResult train(const FeatureStore& dataset, const EncoderConfig& enc_config,
                  const TrainConfig& config) {
  config.validate();
  require_training_fields(dataset);
  if (dataset.entries.empty()) throw std::invalid_argument("train: empty dataset");
  if (static_cast<std::size_t>(config.batch_size) > dataset.entries.size())
    throw std::invalid_argument("train: batch size exceeds dataset size");
  if (enc_config.visual_dim != dataset.visual_dim)
    throw std::invalid_argument("train: encoder visual_dim does not match feature store");

  TrainResult result;
  result.model = init_parameters(enc_config, config.seed);
  auto params = trainable_tensors(result.model);
  AdamWState state = AdamWState::like(params);
  DetRng shuffle_rng(config.seed + 0x517cc1b727220a95ULL);

  std::vector<std::size_t> order(dataset.entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches_per_epoch = dataset.entries.size() / config.batch_size;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(b * config.batch_size),
          order.begin() + static_cast<std::ptrdiff_t>((b + 1) * config.batch_size));
      const TrainBatch batch = make_batch(dataset, idx);
      ForwardCache cache;
      batch_forward(result.model, batch, &cache);
      ModelGrads grads = grads_like(result.model);
      const LossReport report = batch_backward(result.model, batch, cache, config.beta, grads);
      auto grad_refs = grad_tensors(grads);
      adamw_step(params, grad_refs, state, config);
      result.history.emplace_back(state.step, report);
    }
  }
  return result;
}

void write_loss_csv(const std::vector<std::pair<std::uint64_t, LossReport>>& history,
                    const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_loss_csv: cannot open '" + path + "'");
  os << "step,loss_img_txt,loss_txt_img,loss_img_loc,loss_loc_img,total\n";
  for (const auto& [step, r] : history) {
    os << step << ',' << format_double(r.img_txt) << ',' << format_double(r.txt_img) << ','
       << format_double(r.img_loc) << ',' << format_double(r.loc_img) << ','
       << format_double(r.total) << '\n';
  }
  if (!os) throw std::runtime_error("write_loss_csv: write failed for '" + path + "'");
}

}  // namespace geosearch
