#include "geosearch/geodesy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "geosearch/rng.hpp"

namespace geosearch {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

double Wgs84::semi_minor_b() {
  return semi_major_a * std::sqrt(1.0 - eccentricity_sq);
}

double Wgs84::prime_vertical_radius(double phi_rad) {
  double s = std::sin(phi_rad);
  return semi_major_a / std::sqrt(1.0 - eccentricity_sq * s * s);
}

double GpsCoordinate::normalize_lon_deg(double lon_deg) {
  if (!std::isfinite(lon_deg)) {
    throw std::invalid_argument("longitude must be finite");
  }
  double lon = std::fmod(lon_deg, 360.0);
  if (lon <= -180.0) lon += 360.0;
  else if (lon > 180.0) lon -= 360.0;
  return lon;
}

GpsCoordinate::GpsCoordinate(double lat_deg, double lon_deg) {
  if (!std::isfinite(lat_deg) || lat_deg < -90.0 || lat_deg > 90.0) {
    throw std::invalid_argument("latitude out of range [-90, 90]: " + std::to_string(lat_deg));
  }
  lat_deg_ = lat_deg;
  lon_deg_ = normalize_lon_deg(lon_deg);
}

double EcefVector::norm() const { return std::sqrt(x * x + y * y + z * z); }

DistanceThresholds::DistanceThresholds(std::vector<double> km) : km_(std::move(km)) {
  if (km_.empty()) throw std::invalid_argument("thresholds must be non-empty");
  double prev = 0.0;
  for (double t : km_) {
    if (!(t > prev)) throw std::invalid_argument("thresholds must be positive and strictly increasing");
    prev = t;
  }
}

EcefVector ecef_project(const GpsCoordinate& coord, double altitude_m) {
  double phi = coord.latitude() * kDegToRad;
  double lam = coord.longitude() * kDegToRad;
  double n = Wgs84::prime_vertical_radius(phi);
  double cphi = std::cos(phi);
  double sphi = std::sin(phi);
  EcefVector p;
  p.x = (n + altitude_m) * cphi * std::cos(lam);
  p.y = (n + altitude_m) * cphi * std::sin(lam);
  p.z = ((1.0 - Wgs84::eccentricity_sq) * n + altitude_m) * sphi;
  return p;
}

double geodesic_distance_km(const GpsCoordinate& a, const GpsCoordinate& b) {
  double phi1 = a.latitude() * kDegToRad;
  double phi2 = b.latitude() * kDegToRad;
  double dphi = (b.latitude() - a.latitude()) * kDegToRad;
  double dlam = (b.longitude() - a.longitude()) * kDegToRad;
  double sp = std::sin(dphi / 2.0);
  double sl = std::sin(dlam / 2.0);
  double h = sp * sp + std::cos(phi1) * std::cos(phi2) * sl * sl;
  // Rounding can push h a hair outside [0, 1] for antipodal pairs.
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthMeanRadiusKm * std::asin(std::sqrt(h));
}

std::vector<double> accuracy_at_thresholds(const std::vector<GpsCoordinate>& predictions,
                                           const std::vector<GpsCoordinate>& truths,
                                           const DistanceThresholds& thresholds) {
  if (predictions.empty()) throw std::invalid_argument("accuracy_at_thresholds: empty input");
  if (predictions.size() != truths.size()) {
    throw std::invalid_argument("accuracy_at_thresholds: length mismatch");
  }
  std::vector<std::size_t> hits(thresholds.size(), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double d = geodesic_distance_km(predictions[i], truths[i]);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (d <= thresholds.values()[t]) ++hits[t];
    }
  }
  std::vector<double> out(thresholds.size());
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    out[t] = static_cast<double>(hits[t]) / static_cast<double>(predictions.size());
  }
  return out;
}

std::vector<GpsCoordinate> generate_uniform_gallery(std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("gallery count must be >= 1");

  // Random rotation from a seeded unit quaternion.
  DetRng rng(seed);
  double qw = rng.normal(), qx = rng.normal(), qy = rng.normal(), qz = rng.normal();
  double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
  if (qn < 1e-12) { qw = 1.0; qx = qy = qz = 0.0; qn = 1.0; }
  qw /= qn; qx /= qn; qy /= qn; qz /= qn;
  double r[3][3] = {
      {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)},
      {2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)},
      {2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)}};

  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<GpsCoordinate> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(count);
    double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    double theta = golden_angle * static_cast<double>(i);
    double v[3] = {rho * std::cos(theta), rho * std::sin(theta), z};
    double w[3] = {0, 0, 0};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) w[a] += r[a][b] * v[b];
    }
    double lat = std::asin(std::clamp(w[2], -1.0, 1.0)) * kRadToDeg;
    double lon = std::atan2(w[1], w[0]) * kRadToDeg;
    lat = std::clamp(lat, -90.0, 90.0);
    out.emplace_back(lat, lon);
  }
  return out;
}

}  // namespace geosearch
