#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "geosearch/clients.hpp"
#include "geosearch/geodesy.hpp"
#include "geosearch/websearch.hpp"

namespace geosearch {

enum class GeocodeSource { kGeocoder, kLmmFallback };

std::string geocode_source_name(GeocodeSource source);

struct GeocodeResult {
  GpsCoordinate coordinate;
  GeocodeSource source = GeocodeSource::kGeocoder;
  std::string display_name;
};

struct Candidate {
  GpsCoordinate gps;
  GeocodeSource source = GeocodeSource::kGeocoder;
  int prompt_index = 0;  // which prompt variant produced the description
  std::string description;
  std::string display_name;
};

/// Ordered, deduplicated at 1e-4 degree resolution.
struct CandidateSet {
  std::vector<Candidate> candidates;
};

inline constexpr double kDedupResolutionDeg = 1e-4;

/// Token cost model for one text-only fallback geocoding call.
inline constexpr int kFallbackPromptTokenEstimate = 170;
inline constexpr int kFallbackResponseTokenEstimate = 35;

/// Every description that fails both paths lands here with a reason.
struct GeocodeAudit {
  int geocoder_calls = 0;
  int fallback_calls = 0;
  std::vector<std::string> diagnostics;
};

/// Raised when no description survives geocoding (pipeline falls back to
/// its baseline prompt path).
class EmptyCandidateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Whole-string decimal parse; anything trailing makes it fail.
std::optional<double> parse_strict_double(std::string_view s);

/// Strict "lat, lon" decimal degrees. Out-of-range latitude fails; nothing
/// is ever clamped or guessed.
std::optional<GpsCoordinate> parse_latlon(const std::string& text);

/// Deterministic text-only prompt used for the fallback path.
std::string fallback_geocode_prompt(const std::string& description);

/// First geocoder hit wins; an empty, failed, or malformed geocoder response
/// falls back to the LMM. Returns nullopt (with a diagnostic) when both
/// paths fail.
std::optional<GeocodeResult> geocode(const std::string& description, GeocoderClient& geocoder,
                                     LmmClient& lmm, const std::string& model,
                                     GeocodeAudit* audit = nullptr);

/// Geocode every description, keep first occurrence per 1e-4 degree cell,
/// preserve description order. Empty survivor set throws EmptyCandidateError.
CandidateSet assemble_candidates(const std::vector<GeneratedLocation>& descriptions,
                                 GeocoderClient& geocoder, LmmClient& lmm,
                                 const std::string& model, GeocodeAudit* audit = nullptr);

}  // namespace geosearch
