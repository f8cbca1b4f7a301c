#pragma once

// Synthetic data generation: a deterministic toy world for training-level
// checks and a fully fixtured demo suite that exercises the whole pipeline
// offline. Everything here is a pure function of its seeds.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "geosearch/clients.hpp"
#include "geosearch/features.hpp"
#include "geosearch/geodesy.hpp"
#include "geosearch/refine_filter.hpp"

namespace geosearch::demo {

struct ToyWorldConfig {
  int clusters = 64;
  int samples_per_cluster = 8;
  int visual_dim = 32;
  double feature_noise = 0.05;
  double coord_jitter_deg = 0.5;
  std::uint64_t seed = 1234;
};

struct ToyWorld {
  std::vector<GpsCoordinate> cluster_centers;
  std::vector<int> cluster_of;  // parallel to store.entries
  FeatureStore store;
};

/// Cluster centers on a Fibonacci lattice; visual and text features are noisy
/// copies of per-cluster signatures, so image, text and location agree per
/// cluster and contrastive training has something to find.
ToyWorld make_toy_world(const ToyWorldConfig& cfg);

struct DemoPlace {
  std::string query_id;
  GpsCoordinate gps;
  std::string name;        // gazetteer entry, e.g. "Plaza 3, Meltingrove"
  bool geocodable = true;  // false exercises the text-only fallback path
  bool has_web_text = true;
};

/// Rule-based stand-ins for the external services, driven entirely by the
/// gazetteer. Wrapped in the recording clients they author the fixture set.
class SimLmmClient : public LmmClient {
 public:
  explicit SimLmmClient(std::vector<DemoPlace> places) : places_(std::move(places)) {}
  LmmResponse generate(const LmmRequest& request) override;

 private:
  std::vector<DemoPlace> places_;
};

class SimSearchClient : public ReverseSearchClient {
 public:
  explicit SimSearchClient(std::vector<DemoPlace> places) : places_(std::move(places)) {}
  std::vector<SearchHit> search(const std::string& image_ref) override;

 private:
  std::vector<DemoPlace> places_;
};

class SimGeocoderClient : public GeocoderClient {
 public:
  explicit SimGeocoderClient(std::vector<DemoPlace> places) : places_(std::move(places)) {}
  std::vector<GeocoderHit> search(const std::string& query) override;

 private:
  std::vector<DemoPlace> places_;
};

/// Planted correspondences: `inlier_count` points mapped through `h` (plus
/// pixel noise) and `outlier_count` random mismatches, shuffled together.
/// The returned mask marks which rows are the planted inliers.
struct PlantedMatches {
  MatchInput input;
  std::vector<bool> planted_inlier;
};

PlantedMatches make_planted_matches(const std::string& query_id, const Eigen::Matrix3d& h,
                                    int inlier_count, int outlier_count, double noise_px,
                                    std::uint64_t seed, int image_w = 640, int image_h = 480);

struct DemoSuiteConfig {
  int query_count = 10;
  int db_size = 48;
  int visual_dim = 24;
  int embed_dim = 16;
  std::uint64_t seed = 7;
  std::string dir;  // created if missing
};

struct DemoSuite {
  std::string dir;
  std::string config_path;
  std::vector<DemoPlace> places;
};

/// Writes feature stores, weights, database, matches, gallery, fixtures and a
/// ready-to-run config.json under cfg.dir. Fixtures are captured by running
/// the pipeline against the simulated services once per ablation variant, so
/// replay covers the plain run and every single-flag run.
DemoSuite write_demo_suite(const DemoSuiteConfig& cfg);

}  // namespace geosearch::demo
