#include "geosearch/encoders.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

#include "geosearch/io.hpp"
#include "geosearch/rng.hpp"

namespace geosearch {

namespace {

constexpr double kDegenerateNormEps = 1e-12;

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& z, Activation act) {
  if (act == Activation::kIdentity) return z;
  return z.cwiseMax(0.0);
}

}  // namespace

void Mlp::validate() const {
  if (weights.empty()) throw std::invalid_argument("Mlp: no layers");
  if (weights.size() != biases.size())
    throw std::invalid_argument("Mlp: weight/bias layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != biases[l].size())
      throw std::invalid_argument("Mlp: bias size mismatch at layer " + std::to_string(l));
    if (l > 0 && weights[l].cols() != weights[l - 1].rows())
      throw std::invalid_argument("Mlp: dim chain broken at layer " + std::to_string(l));
  }
}

Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x, MlpCache* cache) {
  mlp.validate();
  if (x.cols() != mlp.input_dim())
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(mlp.input_dim()));
  if (cache) {
    cache->activations.clear();
    cache->preacts.clear();
    cache->activations.push_back(x);
  }
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    Eigen::MatrixXd z = a * mlp.weights[l].transpose();
    z.rowwise() += mlp.biases[l].transpose();
    const bool hidden = l + 1 < mlp.weights.size();
    a = hidden ? apply_activation(z, mlp.activation) : z;
    if (cache) {
      cache->preacts.push_back(std::move(z));
      cache->activations.push_back(a);
    }
  }
  return a;
}

MlpGrads mlp_grads_like(const Mlp& mlp) {
  MlpGrads g;
  g.weights.reserve(mlp.weights.size());
  g.biases.reserve(mlp.biases.size());
  for (const auto& w : mlp.weights) g.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : mlp.biases) g.biases.push_back(Eigen::VectorXd::Zero(b.size()));
  return g;
}

MlpGrads mlp_backward(const Mlp& mlp, const MlpCache& cache, const Eigen::MatrixXd& d_output,
                      Eigen::MatrixXd* d_input) {
  const std::size_t layers = mlp.weights.size();
  if (cache.activations.size() != layers + 1 || cache.preacts.size() != layers)
    throw std::invalid_argument("mlp_backward: cache does not match network");
  MlpGrads grads = mlp_grads_like(mlp);
  Eigen::MatrixXd delta = d_output;  // grad wrt preact of the layer being processed
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers && mlp.activation == Activation::kRelu) {
      delta = delta.cwiseProduct(
          (cache.preacts[l].array() > 0.0).cast<double>().matrix());
    }
    grads.weights[l] = delta.transpose() * cache.activations[l];
    grads.biases[l] = delta.colwise().sum().transpose();
    if (l > 0 || d_input) {
      Eigen::MatrixXd prev = delta * mlp.weights[l];
      if (l == 0) {
        if (d_input) *d_input = std::move(prev);
      } else {
        delta = std::move(prev);
      }
    }
  }
  return grads;
}

Eigen::VectorXd rff_map(const Eigen::Vector3d& p_scaled, const RffLayer& layer) {
  if (layer.frequencies.cols() != 3)
    throw std::invalid_argument("rff_map: frequency matrix must have 3 columns");
  const Eigen::VectorXd arg = 2.0 * std::numbers::pi * (layer.frequencies * p_scaled);
  Eigen::VectorXd out(2 * arg.size());
  out.head(arg.size()) = arg.array().cos();
  out.tail(arg.size()) = arg.array().sin();
  return out;
}

Eigen::MatrixXd rff_map_batch(const Eigen::MatrixXd& p_scaled, const RffLayer& layer) {
  if (p_scaled.cols() != 3)
    throw std::invalid_argument("rff_map_batch: points must be N x 3");
  const Eigen::MatrixXd arg =
      2.0 * std::numbers::pi * (p_scaled * layer.frequencies.transpose());
  Eigen::MatrixXd out(p_scaled.rows(), 2 * arg.cols());
  out.leftCols(arg.cols()) = arg.array().cos();
  out.rightCols(arg.cols()) = arg.array().sin();
  return out;
}

void EncoderConfig::validate() const {
  if (visual_dim <= 0 || embed_dim <= 0 || rff_features <= 0 || location_hidden <= 0)
    throw std::invalid_argument("EncoderConfig: dimensions must be positive");
  if (head_hidden < 0) throw std::invalid_argument("EncoderConfig: head_hidden must be >= 0");
  if (sigmas.empty()) throw std::invalid_argument("EncoderConfig: need at least one sigma");
  for (double s : sigmas)
    if (!(s > 0.0)) throw std::invalid_argument("EncoderConfig: sigmas must be positive");
}

namespace {

Eigen::MatrixXd kaiming_uniform(Eigen::Index rows, Eigen::Index cols, DetRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cols));
  Eigen::MatrixXd w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
  return w;
}

Mlp make_mlp(const std::vector<Eigen::Index>& dims, DetRng& rng) {
  Mlp mlp;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    mlp.weights.push_back(kaiming_uniform(dims[l + 1], dims[l], rng));
    mlp.biases.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
  }
  return mlp;
}

}  // namespace

EncoderModel init_parameters(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  DetRng rng(seed);
  EncoderModel model;
  const Eigen::Index gamma_dim = 2 * static_cast<Eigen::Index>(config.rff_features);
  for (double sigma : config.sigmas) {
    LocationEncoder::Branch branch;
    branch.rff.sigma = sigma;
    branch.rff.frequencies.resize(config.rff_features, 3);
    for (Eigen::Index i = 0; i < branch.rff.frequencies.rows(); ++i)
      for (Eigen::Index j = 0; j < 3; ++j)
        branch.rff.frequencies(i, j) = sigma * rng.normal();
    branch.mlp = make_mlp({gamma_dim, config.location_hidden, config.embed_dim}, rng);
    model.location.branches.push_back(std::move(branch));
  }
  const Eigen::Index head_hidden =
      config.head_hidden > 0 ? config.head_hidden : config.visual_dim;
  model.heads.f_txt = make_mlp({config.visual_dim, head_hidden, config.embed_dim}, rng);
  model.heads.f_loc = make_mlp({config.visual_dim, head_hidden, config.embed_dim}, rng);
  model.heads.g_txt = make_mlp({config.visual_dim, head_hidden, config.embed_dim}, rng);
  return model;
}

Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > kDegenerateNormEps))
    throw std::domain_error("l2_normalized: degenerate zero-norm vector");
  return v / n;
}

Eigen::Vector3d scaled_ecef(const GpsCoordinate& coord) {
  const EcefVector p = ecef_project(coord);
  return Eigen::Vector3d(p.x, p.y, p.z) / Wgs84::semi_major_a;
}

Eigen::VectorXd encode_location_prenorm(const GpsCoordinate& coord, const LocationEncoder& enc) {
  if (enc.branches.empty())
    throw std::invalid_argument("encode_location: encoder has no branches");
  const Eigen::Vector3d p = scaled_ecef(coord);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(enc.embedding_dim());
  for (const auto& branch : enc.branches) {
    const Eigen::VectorXd gamma = rff_map(p, branch.rff);
    sum += mlp_forward(branch.mlp, gamma.transpose()).transpose();
  }
  return sum;
}

Eigen::VectorXd encode_location(const GpsCoordinate& coord, const LocationEncoder& enc) {
  return l2_normalized(encode_location_prenorm(coord, enc));
}

Eigen::MatrixXd encode_locations_batch(const std::vector<GpsCoordinate>& coords,
                                       const LocationEncoder& enc) {
  if (enc.branches.empty())
    throw std::invalid_argument("encode_locations_batch: encoder has no branches");
  Eigen::MatrixXd points(static_cast<Eigen::Index>(coords.size()), 3);
  for (std::size_t i = 0; i < coords.size(); ++i)
    points.row(static_cast<Eigen::Index>(i)) = scaled_ecef(coords[i]).transpose();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(points.rows(), enc.embedding_dim());
  for (const auto& branch : enc.branches)
    sum += mlp_forward(branch.mlp, rff_map_batch(points, branch.rff));
  for (Eigen::Index r = 0; r < sum.rows(); ++r) {
    const double norm = sum.row(r).norm();
    if (norm < 1e-12)
      throw std::domain_error("encode_locations_batch: zero-norm embedding at row " +
                              std::to_string(r));
    sum.row(r) /= norm;
  }
  return sum;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> project_image(const Eigen::VectorXd& visual_feature,
                                                          const ProjectionHeads& heads) {
  if (visual_feature.size() != heads.f_txt.input_dim())
    throw std::invalid_argument("project_image: visual feature has " +
                                std::to_string(visual_feature.size()) + " dims, expected " +
                                std::to_string(heads.f_txt.input_dim()));
  const Eigen::MatrixXd row = visual_feature.transpose();
  Eigen::VectorXd e_txt = mlp_forward(heads.f_txt, row).transpose();
  Eigen::VectorXd e_loc = mlp_forward(heads.f_loc, row).transpose();
  return {l2_normalized(e_txt), l2_normalized(e_loc)};
}

Eigen::VectorXd encode_text(const Eigen::VectorXd& text_feature, const ProjectionHeads& heads) {
  if (text_feature.size() != heads.g_txt.input_dim())
    throw std::invalid_argument("encode_text: text feature has " +
                                std::to_string(text_feature.size()) + " dims, expected " +
                                std::to_string(heads.g_txt.input_dim()));
  return l2_normalized(mlp_forward(heads.g_txt, text_feature.transpose()).transpose());
}

namespace {

void collect_mlp_tensors(const std::string& prefix, Mlp& mlp, std::vector<TensorRef>& out) {
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    out.push_back({prefix + "." + std::to_string(l) + ".weight", mlp.weights[l].data(),
                   mlp.weights[l].size()});
    out.push_back({prefix + "." + std::to_string(l) + ".bias", mlp.biases[l].data(),
                   mlp.biases[l].size()});
  }
}

void collect_mlp_grad_tensors(const std::string& prefix, MlpGrads& g,
                              std::vector<TensorRef>& out) {
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.push_back({prefix + "." + std::to_string(l) + ".weight", g.weights[l].data(),
                   g.weights[l].size()});
    out.push_back(
        {prefix + "." + std::to_string(l) + ".bias", g.biases[l].data(), g.biases[l].size()});
  }
}

}  // namespace

std::vector<TensorRef> trainable_tensors(EncoderModel& model) {
  std::vector<TensorRef> out;
  for (std::size_t i = 0; i < model.location.branches.size(); ++i)
    collect_mlp_tensors("loc." + std::to_string(i) + ".mlp", model.location.branches[i].mlp, out);
  collect_mlp_tensors("heads.f_txt", model.heads.f_txt, out);
  collect_mlp_tensors("heads.f_loc", model.heads.f_loc, out);
  collect_mlp_tensors("heads.g_txt", model.heads.g_txt, out);
  return out;
}

ModelGrads grads_like(const EncoderModel& model) {
  ModelGrads g;
  for (const auto& branch : model.location.branches)
    g.location_branches.push_back(mlp_grads_like(branch.mlp));
  g.f_txt = mlp_grads_like(model.heads.f_txt);
  g.f_loc = mlp_grads_like(model.heads.f_loc);
  g.g_txt = mlp_grads_like(model.heads.g_txt);
  return g;
}

std::vector<TensorRef> grad_tensors(ModelGrads& grads) {
  std::vector<TensorRef> out;
  for (std::size_t i = 0; i < grads.location_branches.size(); ++i)
    collect_mlp_grad_tensors("loc." + std::to_string(i) + ".mlp", grads.location_branches[i], out);
  collect_mlp_grad_tensors("heads.f_txt", grads.f_txt, out);
  collect_mlp_grad_tensors("heads.f_loc", grads.f_loc, out);
  collect_mlp_grad_tensors("heads.g_txt", grads.g_txt, out);
  return out;
}

namespace {

constexpr char kWeightsMagic[4] = {'G', 'S', 'W', 'T'};
constexpr std::uint32_t kWeightsVersion = 1;

void write_tensor(std::ostream& os, const std::string& name,
                  const std::vector<std::uint64_t>& dims, const double* data,
                  bool row_major_source) {
  write_string_u32(os, name);
  write_u32(os, static_cast<std::uint32_t>(dims.size()));
  std::uint64_t total = 1;
  for (std::uint64_t d : dims) {
    write_u64(os, d);
    total *= d;
  }
  if (dims.size() == 2 && !row_major_source) {
    // Eigen stores column-major; the file is row-major.
    const std::uint64_t rows = dims[0], cols = dims[1];
    for (std::uint64_t i = 0; i < rows; ++i)
      for (std::uint64_t j = 0; j < cols; ++j) write_f64(os, data[j * rows + i]);
  } else {
    for (std::uint64_t k = 0; k < total; ++k) write_f64(os, data[k]);
  }
}

void write_mlp(std::ostream& os, const std::string& prefix, const Mlp& mlp) {
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    const auto& w = mlp.weights[l];
    write_tensor(os, prefix + "." + std::to_string(l) + ".weight",
                 {static_cast<std::uint64_t>(w.rows()), static_cast<std::uint64_t>(w.cols())},
                 w.data(), false);
    const auto& b = mlp.biases[l];
    write_tensor(os, prefix + "." + std::to_string(l) + ".bias",
                 {static_cast<std::uint64_t>(b.size())}, b.data(), true);
  }
}

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // row-major
};

Eigen::MatrixXd to_matrix(const RawTensor& t, const std::string& name) {
  if (t.dims.size() != 2)
    throw std::runtime_error("weights: tensor '" + name + "' is not rank 2");
  Eigen::MatrixXd m(t.dims[0], t.dims[1]);
  for (std::uint64_t i = 0; i < t.dims[0]; ++i)
    for (std::uint64_t j = 0; j < t.dims[1]; ++j) m(i, j) = t.values[i * t.dims[1] + j];
  return m;
}

Eigen::VectorXd to_vector(const RawTensor& t, const std::string& name) {
  if (t.dims.size() != 1)
    throw std::runtime_error("weights: tensor '" + name + "' is not rank 1");
  return Eigen::Map<const Eigen::VectorXd>(t.values.data(),
                                           static_cast<Eigen::Index>(t.values.size()));
}

Mlp read_mlp(std::map<std::string, RawTensor>& tensors, const std::string& prefix) {
  Mlp mlp;
  for (std::size_t l = 0;; ++l) {
    const std::string wname = prefix + "." + std::to_string(l) + ".weight";
    const std::string bname = prefix + "." + std::to_string(l) + ".bias";
    auto wit = tensors.find(wname);
    if (wit == tensors.end()) break;
    auto bit = tensors.find(bname);
    if (bit == tensors.end()) throw std::runtime_error("weights: missing tensor '" + bname + "'");
    mlp.weights.push_back(to_matrix(wit->second, wname));
    mlp.biases.push_back(to_vector(bit->second, bname));
    tensors.erase(wit);
    tensors.erase(bit);
  }
  if (mlp.weights.empty())
    throw std::runtime_error("weights: no layers found under '" + prefix + "'");
  mlp.validate();
  return mlp;
}

}  // namespace

void save_weights(const EncoderModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_weights: cannot open '" + path + "'");
  os.write(kWeightsMagic, 4);
  write_u32(os, kWeightsVersion);
  for (std::size_t i = 0; i < model.location.branches.size(); ++i) {
    const auto& branch = model.location.branches[i];
    const std::string prefix = "loc." + std::to_string(i);
    write_tensor(os, prefix + ".rff.sigma", {1}, &branch.rff.sigma, true);
    write_tensor(os, prefix + ".rff.W",
                 {static_cast<std::uint64_t>(branch.rff.frequencies.rows()),
                  static_cast<std::uint64_t>(branch.rff.frequencies.cols())},
                 branch.rff.frequencies.data(), false);
    write_mlp(os, prefix + ".mlp", branch.mlp);
  }
  write_mlp(os, "heads.f_txt", model.heads.f_txt);
  write_mlp(os, "heads.f_loc", model.heads.f_loc);
  write_mlp(os, "heads.g_txt", model.heads.g_txt);
  if (!os) throw std::runtime_error("save_weights: write failed for '" + path + "'");
}

EncoderModel load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_weights: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0)
    throw std::runtime_error("load_weights: bad magic in '" + path + "'");
  const std::uint32_t version = read_u32(is, "weights version");
  if (version != kWeightsVersion)
    throw std::runtime_error("load_weights: unsupported version " + std::to_string(version));

  std::map<std::string, RawTensor> tensors;
  while (true) {
    if (is.peek() == std::char_traits<char>::eof()) break;
    const std::string name = read_string_u32(is, "tensor name");
    const std::uint32_t rank = read_u32(is, "tensor rank");
    if (rank == 0 || rank > 2)
      throw std::runtime_error("load_weights: tensor '" + name + "' has rank " +
                               std::to_string(rank));
    RawTensor t;
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(read_u64(is, "tensor dim"));
      total *= t.dims.back();
    }
    t.values.resize(total);
    for (std::uint64_t k = 0; k < total; ++k) t.values[k] = read_f64(is, "tensor payload");
    if (!tensors.emplace(name, std::move(t)).second)
      throw std::runtime_error("load_weights: duplicate tensor '" + name + "'");
  }

  EncoderModel model;
  for (std::size_t i = 0;; ++i) {
    const std::string prefix = "loc." + std::to_string(i);
    auto sig = tensors.find(prefix + ".rff.sigma");
    if (sig == tensors.end()) break;
    LocationEncoder::Branch branch;
    if (sig->second.values.size() != 1)
      throw std::runtime_error("weights: malformed tensor '" + prefix + ".rff.sigma'");
    branch.rff.sigma = sig->second.values[0];
    tensors.erase(sig);
    auto freq = tensors.find(prefix + ".rff.W");
    if (freq == tensors.end())
      throw std::runtime_error("weights: missing tensor '" + prefix + ".rff.W'");
    branch.rff.frequencies = to_matrix(freq->second, prefix + ".rff.W");
    tensors.erase(freq);
    branch.mlp = read_mlp(tensors, prefix + ".mlp");
    model.location.branches.push_back(std::move(branch));
  }
  if (model.location.branches.empty())
    throw std::runtime_error("load_weights: no location branches in '" + path + "'");
  model.heads.f_txt = read_mlp(tensors, "heads.f_txt");
  model.heads.f_loc = read_mlp(tensors, "heads.f_loc");
  model.heads.g_txt = read_mlp(tensors, "heads.g_txt");
  if (!tensors.empty())
    throw std::runtime_error("load_weights: unrecognized tensor '" + tensors.begin()->first +
                             "'");
  return model;
}

}  // namespace geosearch
