#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "geosearch/encoders.hpp"
#include "geosearch/geocoding.hpp"
#include "geosearch/geodesy.hpp"

namespace geosearch {

struct ScoredCandidate {
  Candidate candidate;
  double score = 0.0;  // cosine against the query's image-location embedding
};

struct Correspondence {
  double x = 0.0;
  double y = 0.0;
  double xp = 0.0;
  double yp = 0.0;
  double confidence = 1.0;
};

/// Keypoint correspondences between the query image and a matched web image,
/// produced by an external matcher and ingested as data.
struct MatchInput {
  std::string query_id;
  std::string link_image_ref;
  std::vector<Correspondence> matches;
  int image_w = 0;
  int image_h = 0;
  void validate() const;
};

struct MatchReport {
  int match_count = 0;           // M
  Eigen::Matrix3d homography;    // normalized so h33 = 1
  std::vector<bool> inlier_mask;
  double inlier_ratio = 0.0;     // rho
};

struct GateThresholds {
  double reproj_px = 4.0;         // tau_r
  int min_matches = 50;           // tau_m
  double min_inlier_ratio = 0.5;  // tau_in
  double alpha = 0.21;
  void validate() const;
};

enum class Chosen { kSearch, kBaseline };
enum class DecidingLayer { kLayer1, kLayer2 };

std::string chosen_name(Chosen c);
std::string layer_name(DecidingLayer l);

struct Decision {
  Chosen chosen = Chosen::kBaseline;
  DecidingLayer layer = DecidingLayer::kLayer2;
  GpsCoordinate final_gps;
};

class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NoModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Embed every candidate and return the argmax by cosine; ties keep the
/// earliest candidate.
ScoredCandidate rank_candidates(const Eigen::VectorXd& e_img_loc_query,
                                const CandidateSet& candidates, const LocationEncoder& encoder);

/// Seeded RANSAC over 4-point samples with a Hartley-normalized DLT fit,
/// symmetric transfer error, adaptive early exit and a final refit on the
/// best inlier set.
MatchReport estimate_homography_ransac(const MatchInput& input, double tau_r, int max_iters,
                                       std::uint64_t seed);

/// Pass iff a report exists, M >= tau_m and rho >= tau_in. No linked image
/// (hence no report) fails and defers to Layer 2.
bool layer1_verify(const std::optional<MatchReport>& report, const GateThresholds& t);

Decision layer2_gate(double sigma, double alpha, const GpsCoordinate& p_search,
                     const GpsCoordinate& p_base);

/// Layer-1 pass short-circuits to Search; otherwise Layer 2 gates on sigma.
Decision decide(const std::optional<MatchReport>& report, double sigma,
                const GpsCoordinate& p_search, const GpsCoordinate& p_base,
                const GateThresholds& t);

enum class Preference { kSearchPreferred, kBaselinePreferred };

/// SearchPreferred iff the search prediction strictly wins the accuracy
/// threshold vector lexicographically, or ties it with strictly smaller
/// geodesic error. Everything else — including exact ties — prefers Baseline.
Preference label_preference(const GpsCoordinate& p_search, const GpsCoordinate& p_base,
                            const GpsCoordinate& truth,
                            const DistanceThresholds& thresholds = DistanceThresholds());

struct TuningCase {
  std::optional<MatchReport> report;
  double sigma = 0.0;
  Preference preference = Preference::kBaselinePreferred;
};

struct AlphaSweepPoint {
  double alpha = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct Layer1GridPoint {
  int min_matches = 0;
  double min_inlier_ratio = 0.0;
  double accuracy = 0.0;
};

struct TuningResult {
  GateThresholds tuned;
  std::vector<Layer1GridPoint> layer1_grid;
  std::vector<AlphaSweepPoint> alpha_sweep;
};

/// Treats choosing Search as the positive class. Grid-search (tau_m, tau_in)
/// by accuracy over all cases (ties: stricter gate, larger thresholds); the
/// cases failing the tuned Layer 1 then drive an alpha sweep over [0,1] in
/// 0.01 steps maximizing F1 (ties: smaller alpha). tau_r is not tuned here.
TuningResult tune_thresholds(const std::vector<TuningCase>& cases,
                             const GateThresholds& base = GateThresholds());

void write_alpha_sweep_csv(const std::vector<AlphaSweepPoint>& sweep, const std::string& path);
void write_layer1_grid_csv(const std::vector<Layer1GridPoint>& grid, const std::string& path);

/// NDJSON, one object per image pair:
/// {query_id, link_image_ref, matches: [[x,y,x',y',confidence],...], image_w, image_h}
std::vector<MatchInput> load_match_file(const std::string& path);
void save_match_file(const std::vector<MatchInput>& inputs, const std::string& path);

}  // namespace geosearch
