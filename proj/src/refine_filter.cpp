#include "geosearch/refine_filter.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <set>

#include "geosearch/io.hpp"
#include "geosearch/rng.hpp"

namespace geosearch {

using nlohmann::json;

void MatchInput::validate() const {
  for (const auto& m : matches)
    if (!std::isfinite(m.x) || !std::isfinite(m.y) || !std::isfinite(m.xp) ||
        !std::isfinite(m.yp))
      throw std::invalid_argument("MatchInput: non-finite correspondence");
  if (image_w < 0 || image_h < 0)
    throw std::invalid_argument("MatchInput: negative image dimensions");
}

void GateThresholds::validate() const {
  if (reproj_px < 0.0 || min_matches < 0 || min_inlier_ratio < 0.0)
    throw std::invalid_argument("GateThresholds: thresholds must be non-negative");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("GateThresholds: alpha must lie in [0,1]");
}

std::string chosen_name(Chosen c) { return c == Chosen::kSearch ? "search" : "baseline"; }
std::string layer_name(DecidingLayer l) { return l == DecidingLayer::kLayer1 ? "layer1" : "layer2"; }

ScoredCandidate rank_candidates(const Eigen::VectorXd& e_img_loc_query,
                                const CandidateSet& candidates, const LocationEncoder& encoder) {
  if (candidates.candidates.empty())
    throw std::invalid_argument("rank_candidates: empty candidate set");
  const Eigen::VectorXd q = l2_normalized(e_img_loc_query);
  ScoredCandidate best;
  bool first = true;
  for (const auto& cand : candidates.candidates) {
    const Eigen::VectorXd e_loc = encode_location(cand.gps, encoder);
    const double score = q.dot(e_loc);
    if (first || score > best.score) {
      best.candidate = cand;
      best.score = score;
      first = false;
    }
  }
  return best;
}

namespace {

struct Normalization {
  Eigen::Matrix3d transform;  // maps raw pixels to centered, sqrt(2)-mean-norm points
};

Normalization hartley_normalize(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double scale = mean_dist > 1e-12 ? std::numbers::sqrt2 / mean_dist : 1.0;
  Normalization n;
  n.transform << scale, 0, -scale * centroid.x(), 0, scale, -scale * centroid.y(), 0, 0, 1;
  return n;
}

/// Direct linear transform on >= 4 correspondences; nullopt when the system
/// is degenerate.
std::optional<Eigen::Matrix3d> fit_homography_dlt(const std::vector<Eigen::Vector2d>& src,
                                                  const std::vector<Eigen::Vector2d>& dst) {
  const std::size_t n = src.size();
  const Normalization ns = hartley_normalize(src);
  const Normalization nd = hartley_normalize(dst);
  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ns.transform * src[i].homogeneous();
    const Eigen::Vector3d q = nd.transform * dst[i].homogeneous();
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  if (svd.rank() < 8) return std::nullopt;
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  Eigen::Matrix3d model = nd.transform.inverse() * hn * ns.transform;
  if (std::abs(model(2, 2)) < 1e-12) return std::nullopt;
  model /= model(2, 2);
  if (!model.allFinite()) return std::nullopt;
  return model;
}

bool three_collinear(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                     const Eigen::Vector2d& c) {
  const double area2 = std::abs((b.x() - a.x()) * (c.y() - a.y()) -
                                (b.y() - a.y()) * (c.x() - a.x()));
  return area2 < 1e-9;
}

bool sample_degenerate(const std::vector<Eigen::Vector2d>& pts) {
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k)
        if (three_collinear(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(j)],
                            pts[static_cast<std::size_t>(k)]))
          return true;
  return false;
}

std::optional<Eigen::Vector2d> apply_homography(const Eigen::Matrix3d& h,
                                                const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h * p.homogeneous();
  if (std::abs(q.z()) < 1e-12) return std::nullopt;
  return Eigen::Vector2d(q.x() / q.z(), q.y() / q.z());
}

/// max(forward, backward) transfer distance; infinite when either projection
/// degenerates.
double symmetric_transfer_error(const Eigen::Matrix3d& h, const Eigen::Matrix3d& h_inv,
                                const Correspondence& m) {
  const auto fwd = apply_homography(h, {m.x, m.y});
  const auto bwd = apply_homography(h_inv, {m.xp, m.yp});
  if (!fwd || !bwd) return std::numeric_limits<double>::infinity();
  const double ef = (*fwd - Eigen::Vector2d(m.xp, m.yp)).norm();
  const double eb = (*bwd - Eigen::Vector2d(m.x, m.y)).norm();
  return std::max(ef, eb);
}

std::vector<bool> inlier_mask_for(const Eigen::Matrix3d& h, const std::vector<Correspondence>& ms,
                                  double tau_r, int* count) {
  std::vector<bool> mask(ms.size(), false);
  int inliers = 0;
  const double det = h.determinant();
  if (std::abs(det) < 1e-12 || !h.allFinite()) {
    if (count) *count = 0;
    return mask;
  }
  const Eigen::Matrix3d h_inv = h.inverse();
  for (std::size_t i = 0; i < ms.size(); ++i) {
    if (symmetric_transfer_error(h, h_inv, ms[i]) <= tau_r) {
      mask[i] = true;
      ++inliers;
    }
  }
  if (count) *count = inliers;
  return mask;
}

}  // namespace

MatchReport estimate_homography_ransac(const MatchInput& input, double tau_r, int max_iters,
                                       std::uint64_t seed) {
  input.validate();
  if (tau_r < 0.0) throw std::invalid_argument("estimate_homography_ransac: negative tau_r");
  if (max_iters < 1) throw std::invalid_argument("estimate_homography_ransac: max_iters < 1");
  const auto& ms = input.matches;
  const std::size_t m = ms.size();
  if (m < 4)
    throw DegenerateInputError("estimate_homography_ransac: degenerate input, " +
                               std::to_string(m) + " correspondences (need 4)");

  DetRng rng(seed);
  Eigen::Matrix3d best_h = Eigen::Matrix3d::Identity();
  int best_inliers = -1;
  std::vector<bool> best_mask;
  double required_iters = static_cast<double>(max_iters);

  for (int iter = 0; iter < max_iters && static_cast<double>(iter) < required_iters; ++iter) {
    // Four distinct indices.
    std::size_t idx[4];
    for (int k = 0; k < 4;) {
      const std::size_t cand = static_cast<std::size_t>(rng.below(m));
      bool dup = false;
      for (int j = 0; j < k; ++j) dup |= idx[j] == cand;
      if (!dup) idx[k++] = cand;
    }
    std::vector<Eigen::Vector2d> src, dst;
    for (std::size_t i : idx) {
      src.emplace_back(ms[i].x, ms[i].y);
      dst.emplace_back(ms[i].xp, ms[i].yp);
    }
    if (sample_degenerate(src) || sample_degenerate(dst)) continue;
    const auto model = fit_homography_dlt(src, dst);
    if (!model) continue;
    int inliers = 0;
    std::vector<bool> mask = inlier_mask_for(*model, ms, tau_r, &inliers);
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_h = *model;
      best_mask = std::move(mask);
      // 99%-confidence adaptive bound on remaining iterations.
      const double w = static_cast<double>(inliers) / static_cast<double>(m);
      const double denom = std::log(std::max(1.0 - std::pow(w, 4), 1e-12));
      required_iters = denom < 0.0 ? std::log(0.01) / denom : static_cast<double>(max_iters);
    }
  }
  if (best_inliers < 0)
    throw NoModelError("estimate_homography_ransac: no non-degenerate sample produced a model");

  // Refit on the consensus set when it can constrain a homography.
  if (best_inliers >= 4) {
    std::vector<Eigen::Vector2d> src, dst;
    for (std::size_t i = 0; i < m; ++i) {
      if (!best_mask[i]) continue;
      src.emplace_back(ms[i].x, ms[i].y);
      dst.emplace_back(ms[i].xp, ms[i].yp);
    }
    if (const auto refit = fit_homography_dlt(src, dst)) {
      int refit_inliers = 0;
      std::vector<bool> refit_mask = inlier_mask_for(*refit, ms, tau_r, &refit_inliers);
      if (refit_inliers >= best_inliers) {
        best_h = *refit;
        best_inliers = refit_inliers;
        best_mask = std::move(refit_mask);
      }
    }
  }

  MatchReport report;
  report.match_count = static_cast<int>(m);
  report.homography = best_h;
  report.inlier_mask = std::move(best_mask);
  report.inlier_ratio = static_cast<double>(best_inliers) / static_cast<double>(m);
  return report;
}

bool layer1_verify(const std::optional<MatchReport>& report, const GateThresholds& t) {
  t.validate();
  if (!report) return false;
  return report->match_count >= t.min_matches && report->inlier_ratio >= t.min_inlier_ratio;
}

Decision layer2_gate(double sigma, double alpha, const GpsCoordinate& p_search,
                     const GpsCoordinate& p_base) {
  if (!(sigma >= -1.0 - 1e-9 && sigma <= 1.0 + 1e-9))
    throw std::invalid_argument("layer2_gate: sigma outside [-1, 1]");
  Decision d;
  d.layer = DecidingLayer::kLayer2;
  if (sigma >= alpha) {
    d.chosen = Chosen::kSearch;
    d.final_gps = p_search;
  } else {
    d.chosen = Chosen::kBaseline;
    d.final_gps = p_base;
  }
  return d;
}

Decision decide(const std::optional<MatchReport>& report, double sigma,
                const GpsCoordinate& p_search, const GpsCoordinate& p_base,
                const GateThresholds& t) {
  if (layer1_verify(report, t))
    return Decision{Chosen::kSearch, DecidingLayer::kLayer1, p_search};
  return layer2_gate(sigma, t.alpha, p_search, p_base);
}

Preference label_preference(const GpsCoordinate& p_search, const GpsCoordinate& p_base,
                            const GpsCoordinate& truth, const DistanceThresholds& thresholds) {
  const double err_s = geodesic_distance_km(p_search, truth);
  const double err_b = geodesic_distance_km(p_base, truth);
  for (double t : thresholds.values()) {
    const bool hit_s = err_s <= t;
    const bool hit_b = err_b <= t;
    if (hit_s != hit_b)
      return hit_s ? Preference::kSearchPreferred : Preference::kBaselinePreferred;
  }
  return err_s < err_b ? Preference::kSearchPreferred : Preference::kBaselinePreferred;
}

namespace {

struct Counts {
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy() const {
    const int total = tp + fp + tn + fn;
    return total == 0 ? 0.0 : static_cast<double>(tp + tn) / total;
  }
  double f1() const {
    const double denom = 2.0 * tp + fp + fn;
    return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
  }
  void add(bool predicted_search, bool search_preferred) {
    if (predicted_search)
      (search_preferred ? tp : fp) += 1;
    else
      (search_preferred ? fn : tn) += 1;
  }
};

}  // namespace

TuningResult tune_thresholds(const std::vector<TuningCase>& cases, const GateThresholds& base) {
  if (cases.empty()) throw std::invalid_argument("tune_thresholds: no labeled cases");
  TuningResult result;
  result.tuned = base;

  std::set<int> m_values{0};
  std::set<double> rho_values{0.0};
  int max_m = 0;
  for (const auto& c : cases) {
    if (!c.report) continue;
    m_values.insert(c.report->match_count);
    rho_values.insert(c.report->inlier_ratio);
    max_m = std::max(max_m, c.report->match_count);
  }
  m_values.insert(max_m + 1);  // the "never pass" point

  double best_acc = -1.0;
  for (int tau_m : m_values) {
    for (double tau_in : rho_values) {
      Counts counts;
      for (const auto& c : cases) {
        const bool pass =
            c.report && c.report->match_count >= tau_m && c.report->inlier_ratio >= tau_in;
        counts.add(pass, c.preference == Preference::kSearchPreferred);
      }
      const double acc = counts.accuracy();
      result.layer1_grid.push_back({tau_m, tau_in, acc});
      // Ties go to the stricter gate (iteration ascends, >= keeps the last).
      if (acc >= best_acc) {
        best_acc = acc;
        result.tuned.min_matches = tau_m;
        result.tuned.min_inlier_ratio = tau_in;
      }
    }
  }

  std::vector<const TuningCase*> layer2_cases;
  for (const auto& c : cases) {
    const bool pass = c.report && c.report->match_count >= result.tuned.min_matches &&
                      c.report->inlier_ratio >= result.tuned.min_inlier_ratio;
    if (!pass) layer2_cases.push_back(&c);
  }

  if (!layer2_cases.empty()) {
    double best_f1 = -1.0;
    for (int step = 0; step <= 100; ++step) {
      const double alpha = static_cast<double>(step) / 100.0;
      Counts counts;
      for (const auto* c : layer2_cases)
        counts.add(c->sigma >= alpha, c->preference == Preference::kSearchPreferred);
      const double f1 = counts.f1();
      result.alpha_sweep.push_back({alpha, counts.accuracy(), f1});
      if (f1 > best_f1) {
        best_f1 = f1;
        result.tuned.alpha = alpha;
      }
    }
  }
  return result;
}

void write_alpha_sweep_csv(const std::vector<AlphaSweepPoint>& sweep, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_alpha_sweep_csv: cannot open '" + path + "'");
  os << "alpha,accuracy,f1\n";
  for (const auto& p : sweep)
    os << format_double(p.alpha) << ',' << format_double(p.accuracy) << ','
       << format_double(p.f1) << '\n';
  if (!os) throw std::runtime_error("write_alpha_sweep_csv: write failed for '" + path + "'");
}

void write_layer1_grid_csv(const std::vector<Layer1GridPoint>& grid, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_layer1_grid_csv: cannot open '" + path + "'");
  os << "tau_m,tau_in,accuracy\n";
  for (const auto& p : grid)
    os << p.min_matches << ',' << format_double(p.min_inlier_ratio) << ','
       << format_double(p.accuracy) << '\n';
  if (!os) throw std::runtime_error("write_layer1_grid_csv: write failed for '" + path + "'");
}

std::vector<MatchInput> load_match_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_match_file: cannot open '" + path + "'");
  std::vector<MatchInput> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("load_match_file: bad json on line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    MatchInput input;
    input.query_id = j.at("query_id").get<std::string>();
    input.link_image_ref = j.value("link_image_ref", std::string{});
    input.image_w = j.value("image_w", 0);
    input.image_h = j.value("image_h", 0);
    for (const auto& row : j.at("matches")) {
      if (!row.is_array() || (row.size() != 4 && row.size() != 5))
        throw std::runtime_error("load_match_file: line " + std::to_string(line_no) +
                                 " has a malformed correspondence");
      Correspondence c;
      c.x = row[0].get<double>();
      c.y = row[1].get<double>();
      c.xp = row[2].get<double>();
      c.yp = row[3].get<double>();
      c.confidence = row.size() == 5 ? row[4].get<double>() : 1.0;
      input.matches.push_back(c);
    }
    input.validate();
    out.push_back(std::move(input));
  }
  return out;
}

void save_match_file(const std::vector<MatchInput>& inputs, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_match_file: cannot open '" + path + "'");
  for (const auto& input : inputs) {
    json j;
    j["query_id"] = input.query_id;
    j["link_image_ref"] = input.link_image_ref;
    j["image_w"] = input.image_w;
    j["image_h"] = input.image_h;
    json rows = json::array();
    for (const auto& c : input.matches)
      rows.push_back(json::array({c.x, c.y, c.xp, c.yp, c.confidence}));
    j["matches"] = std::move(rows);
    os << j.dump() << "\n";
  }
  if (!os) throw std::runtime_error("save_match_file: write failed for '" + path + "'");
}

}  // namespace geosearch
