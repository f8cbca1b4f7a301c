#include <doctest.h>

#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "geosearch/encoders.hpp"
#include "geosearch/io.hpp"
#include "geosearch/rng.hpp"

using namespace geosearch;
using doctest::Approx;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.visual_dim = 12;
  cfg.embed_dim = 8;
  cfg.rff_features = 6;
  cfg.sigmas = {1.0, 16.0};
  cfg.location_hidden = 10;
  cfg.head_hidden = 0;
  return cfg;
}

Eigen::VectorXd random_vector(DetRng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("rff map with zero frequencies collapses to [1..1, 0..0]") {
  RffLayer layer;
  layer.sigma = 1.0;
  layer.frequencies = Eigen::MatrixXd::Zero(5, 3);
  const Eigen::VectorXd g = rff_map(Eigen::Vector3d(0.3, -0.7, 0.2), layer);
  REQUIRE(g.size() == 10);
  for (int i = 0; i < 5; ++i) CHECK(g[i] == 1.0);
  for (int i = 5; i < 10; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("rff map matches the element-wise formula and stays in [-1, 1]") {
  DetRng rng(17);
  RffLayer layer;
  layer.frequencies = Eigen::MatrixXd(4, 3);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) layer.frequencies(r, c) = rng.normal();
  const Eigen::Vector3d p(rng.uniform(), rng.uniform(), rng.uniform());
  const Eigen::VectorXd g = rff_map(p, layer);
  REQUIRE(g.size() == 8);
  for (int r = 0; r < 4; ++r) {
    const double phase = 2.0 * std::numbers::pi * layer.frequencies.row(r).dot(p);
    CHECK(g[r] == Approx(std::cos(phase)).epsilon(1e-12));
    CHECK(g[r + 4] == Approx(std::sin(phase)).epsilon(1e-12));
  }
  for (int i = 0; i < g.size(); ++i) {
    CHECK(g[i] >= -1.0);
    CHECK(g[i] <= 1.0);
  }
}

TEST_CASE("rff map is periodic along integer frequency steps") {
  RffLayer layer;
  layer.frequencies = Eigen::MatrixXd(1, 3);
  layer.frequencies << 2.0, 3.0, 5.0;
  // W delta = 2*0.5 = 1, an integer, so gamma repeats.
  const Eigen::Vector3d p(0.123, 0.456, -0.789);
  const Eigen::Vector3d delta(0.5, 0.0, 0.0);
  const Eigen::VectorXd a = rff_map(p, layer);
  const Eigen::VectorXd b = rff_map(p + delta, layer);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
}

TEST_CASE("batched rff map agrees with the single-point map") {
  DetRng rng(23);
  RffLayer layer;
  layer.frequencies = Eigen::MatrixXd(6, 3);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 3; ++c) layer.frequencies(r, c) = rng.normal();
  Eigen::MatrixXd pts(4, 3);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) pts(r, c) = rng.uniform(-1.0, 1.0);
  const Eigen::MatrixXd batch = rff_map_batch(pts, layer);
  REQUIRE(batch.rows() == 4);
  REQUIRE(batch.cols() == 12);
  for (int r = 0; r < 4; ++r) {
    const Eigen::VectorXd single = rff_map(pts.row(r).transpose(), layer);
    for (int c = 0; c < 12; ++c) CHECK(batch(r, c) == Approx(single[c]).epsilon(1e-12));
  }
}

TEST_CASE("scaled ecef lands on the unit ball") {
  const Eigen::Vector3d p = scaled_ecef(GpsCoordinate(0.0, 0.0));
  CHECK(p.x() == 1.0);
  CHECK(p.y() == 0.0);
  CHECK(p.z() == 0.0);
  DetRng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d q =
        scaled_ecef(GpsCoordinate(rng.uniform(-90.0, 90.0), rng.uniform(-180.0, 180.0)));
    CHECK(q.norm() <= 1.0 + 1e-12);
    CHECK(q.norm() >= Wgs84::semi_minor_b() / Wgs84::semi_major_a - 1e-12);
  }
}

TEST_CASE("l2_normalized rejects near-zero vectors") {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(4);
  CHECK_THROWS_AS(l2_normalized(v), std::domain_error);
  v[2] = 3.0;
  CHECK(l2_normalized(v)[2] == 1.0);
}

TEST_CASE("encode_location is unit norm, repeatable, and wrap-invariant") {
  const EncoderModel model = init_parameters(small_config(), 91);
  // A dyadic longitude keeps lon + 360 exactly representable, so the wrapped
  // coordinate normalizes back to identical bits.
  const GpsCoordinate p(48.85, 2.5);
  const Eigen::VectorXd a = encode_location(p, model.location);
  const Eigen::VectorXd b = encode_location(p, model.location);
  CHECK(a.norm() == Approx(1.0).epsilon(1e-6));
  CHECK(same_bits(a, b));  // bit-identical on repeat

  const Eigen::VectorXd wrapped =
      encode_location(GpsCoordinate(48.85, 2.5 + 360.0), model.location);
  CHECK(same_bits(a, wrapped));

  DetRng rng(8);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd e = encode_location(
        GpsCoordinate(rng.uniform(-90.0, 90.0), rng.uniform(-180.0, 180.0)), model.location);
    CHECK(e.norm() == Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("a zero-weight single-branch encoder is degenerate") {
  EncoderConfig cfg = small_config();
  cfg.sigmas = {1.0};
  EncoderModel model = init_parameters(cfg, 5);
  for (auto& w : model.location.branches[0].mlp.weights) w.setZero();
  for (auto& b : model.location.branches[0].mlp.biases) b.setZero();
  CHECK_THROWS_AS(encode_location(GpsCoordinate(10.0, 20.0), model.location), std::domain_error);
}

TEST_CASE("branch outputs add linearly before normalization") {
  EncoderModel model = init_parameters(small_config(), 44);
  const GpsCoordinate p(-33.9, 18.4);
  const Eigen::VectorXd sum = encode_location_prenorm(p, model.location);

  LocationEncoder first{{model.location.branches[0]}};
  LocationEncoder second{{model.location.branches[1]}};
  const Eigen::VectorXd split =
      encode_location_prenorm(p, first) + encode_location_prenorm(p, second);
  for (int i = 0; i < sum.size(); ++i) CHECK(sum[i] == Approx(split[i]).epsilon(1e-12));
}

TEST_CASE("batched location encoding matches the per-point path") {
  const EncoderModel model = init_parameters(small_config(), 12);
  std::vector<GpsCoordinate> coords;
  DetRng rng(9);
  for (int i = 0; i < 7; ++i)
    coords.emplace_back(rng.uniform(-90.0, 90.0), rng.uniform(-180.0, 180.0));
  const Eigen::MatrixXd batch = encode_locations_batch(coords, model.location);
  REQUIRE(batch.rows() == 7);
  for (int r = 0; r < 7; ++r) {
    const Eigen::VectorXd single = encode_location(coords[static_cast<std::size_t>(r)], model.location);
    for (int c = 0; c < batch.cols(); ++c) CHECK(batch(r, c) == Approx(single[c]).epsilon(1e-12));
  }
}

TEST_CASE("project_image and encode_text produce unit embeddings reproducibly") {
  const EncoderConfig cfg = small_config();
  const EncoderModel model = init_parameters(cfg, 77);
  DetRng rng(6);
  const Eigen::VectorXd visual = random_vector(rng, cfg.visual_dim);
  const Eigen::VectorXd text = random_vector(rng, cfg.visual_dim);

  const auto [e_txt, e_loc] = project_image(visual, model.heads);
  CHECK(e_txt.norm() == Approx(1.0).epsilon(1e-6));
  CHECK(e_loc.norm() == Approx(1.0).epsilon(1e-6));
  const auto again = project_image(visual, model.heads);
  CHECK(same_bits(e_txt, again.first));
  CHECK(same_bits(e_loc, again.second));
  CHECK_FALSE(same_bits(e_txt, e_loc));  // distinct heads

  const Eigen::VectorXd t = encode_text(text, model.heads);
  CHECK(t.norm() == Approx(1.0).epsilon(1e-6));
  CHECK(same_bits(t, encode_text(text, model.heads)));

  EncoderModel zeroed = model;
  for (auto& w : zeroed.heads.f_txt.weights) w.setZero();
  for (auto& b : zeroed.heads.f_txt.biases) b.setZero();
  CHECK_THROWS_AS(project_image(visual, zeroed.heads), std::domain_error);
}

TEST_CASE("init_parameters is seed-deterministic") {
  EncoderModel a = init_parameters(small_config(), 123);
  EncoderModel b = init_parameters(small_config(), 123);
  EncoderModel c = init_parameters(small_config(), 124);
  auto ta = trainable_tensors(a), tb = trainable_tensors(b), tc = trainable_tensors(c);
  REQUIRE(ta.size() == tb.size());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].name == tb[i].name);
    REQUIRE(ta[i].size == tb[i].size);
    for (std::ptrdiff_t j = 0; j < ta[i].size; ++j) {
      same &= ta[i].data[j] == tb[i].data[j];
      differs |= ta[i].data[j] != tc[i].data[j];
    }
  }
  CHECK(same);
  CHECK(differs);
  // Frozen frequencies are reproduced too.
  CHECK(same_bits(a.location.branches[0].rff.frequencies, b.location.branches[0].rff.frequencies));
  CHECK_FALSE(same_bits(a.location.branches[0].rff.frequencies, c.location.branches[0].rff.frequencies));
}

TEST_CASE("rff frequency sample variance tracks sigma^2") {
  EncoderConfig cfg = small_config();
  cfg.rff_features = 4096;
  cfg.sigmas = {16.0};
  const EncoderModel model = init_parameters(cfg, 2024);
  const Eigen::MatrixXd& w = model.location.branches[0].rff.frequencies;
  REQUIRE(w.rows() == 4096);
  const double n = static_cast<double>(w.size());
  const double mean = w.sum() / n;
  const double var = (w.array() - mean).square().sum() / (n - 1.0);
  CHECK(var == Approx(256.0).epsilon(0.10));
}

TEST_CASE("weight files round-trip bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "gs_encoders_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.gswt").string();

  EncoderModel model = init_parameters(small_config(), 55);
  save_weights(model, path);
  EncoderModel loaded = load_weights(path);

  auto orig = trainable_tensors(model), back = trainable_tensors(loaded);
  REQUIRE(orig.size() == back.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].name == back[i].name);
    REQUIRE(orig[i].size == back[i].size);
    for (std::ptrdiff_t j = 0; j < orig[i].size; ++j)
      CHECK(orig[i].data[j] == back[i].data[j]);
  }
  for (std::size_t k = 0; k < model.location.branches.size(); ++k) {
    CHECK(same_bits(model.location.branches[k].rff.frequencies,
                    loaded.location.branches[k].rff.frequencies));
    CHECK(model.location.branches[k].rff.sigma == loaded.location.branches[k].rff.sigma);
  }
  // Same location embedding after the round trip.
  const GpsCoordinate p(1.0, 2.0);
  CHECK(same_bits(encode_location(p, model.location), encode_location(p, loaded.location)));

  SUBCASE("wrong magic is rejected") {
    std::string bytes = read_text_file(path);
    bytes[0] = 'X';
    write_text_file(path, bytes);
    CHECK_THROWS_AS(load_weights(path), std::runtime_error);
  }

  SUBCASE("truncation is rejected") {
    std::string bytes = read_text_file(path);
    bytes.resize(bytes.size() / 2);
    write_text_file(path, bytes);
    CHECK_THROWS_AS(load_weights(path), std::runtime_error);
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("trainable tensor ordering is stable and excludes frequencies") {
  EncoderModel model = init_parameters(small_config(), 2);
  const auto tensors = trainable_tensors(model);
  REQUIRE(!tensors.empty());
  CHECK(tensors.front().name == "loc.0.mlp.0.weight");
  for (const auto& t : tensors) {
    CHECK(t.name.find("rff") == std::string::npos);
    CHECK(t.size > 0);
  }
  ModelGrads grads = grads_like(model);
  const auto gt = grad_tensors(grads);
  REQUIRE(gt.size() == tensors.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK(gt[i].name == tensors[i].name);
    CHECK(gt[i].size == tensors[i].size);
  }
}

TEST_CASE("config validation rejects inconsistent shapes") {
  EncoderConfig cfg = small_config();
  cfg.sigmas = {};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.sigmas = {1.0, -2.0};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
