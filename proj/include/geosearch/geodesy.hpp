#pragma once

#include <cstdint>
#include <vector>

namespace geosearch {

/// WGS-84 ellipsoid constants. eccentricity_sq is the first eccentricity
/// squared; semi_minor_b is derived, a*sqrt(1 - e^2).
struct Wgs84 {
  static constexpr double semi_major_a = 6378137.0;
  static constexpr double eccentricity_sq = 6.69437999014e-3;
  static double semi_minor_b();
  /// Prime vertical radius of curvature at geodetic latitude phi (radians).
  static double prime_vertical_radius(double phi_rad);
};

/// Mean Earth radius used for great-circle distances, in kilometers.
inline constexpr double kEarthMeanRadiusKm = 6371.0088;

/// Geodetic position in degrees. Latitude is validated into [-90, 90];
/// longitude is normalized into (-180, 180] on construction.
class GpsCoordinate {
 public:
  GpsCoordinate() = default;
  GpsCoordinate(double lat_deg, double lon_deg);

  double latitude() const { return lat_deg_; }
  double longitude() const { return lon_deg_; }

  static double normalize_lon_deg(double lon_deg);

 private:
  double lat_deg_ = 0.0;
  double lon_deg_ = 0.0;
};

struct EcefVector {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double norm() const;
};

/// Distance thresholds in kilometers, strictly increasing and positive.
/// Defaults to the street/city/region/country/continent scale.
class DistanceThresholds {
 public:
  DistanceThresholds() : km_{1.0, 25.0, 200.0, 750.0, 2500.0} {}
  explicit DistanceThresholds(std::vector<double> km);
  const std::vector<double>& values() const { return km_; }
  std::size_t size() const { return km_.size(); }

 private:
  std::vector<double> km_;
};

/// ECEF projection at geodetic altitude h (meters, default 0).
EcefVector ecef_project(const GpsCoordinate& coord, double altitude_m = 0.0);

/// Haversine great-circle distance on the mean-radius sphere, kilometers.
double geodesic_distance_km(const GpsCoordinate& a, const GpsCoordinate& b);

/// Per-threshold fraction of prediction/truth pairs within the threshold.
/// Throws on empty input or length mismatch.
std::vector<double> accuracy_at_thresholds(const std::vector<GpsCoordinate>& predictions,
                                           const std::vector<GpsCoordinate>& truths,
                                           const DistanceThresholds& thresholds = DistanceThresholds{});

/// Area-uniform deterministic global gallery: Fibonacci spherical lattice
/// with a seeded random rotation. Same (count, seed) gives identical output.
std::vector<GpsCoordinate> generate_uniform_gallery(std::size_t count, std::uint64_t seed);

}  // namespace geosearch
