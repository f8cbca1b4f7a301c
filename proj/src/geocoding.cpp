#include "geosearch/geocoding.hpp"

#include <charconv>
#include <cmath>
#include <set>

namespace geosearch {

std::string geocode_source_name(GeocodeSource source) {
  return source == GeocodeSource::kGeocoder ? "geocoder" : "lmm_fallback";
}

std::optional<double> parse_strict_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

std::optional<GpsCoordinate> parse_latlon(const std::string& text) {
  std::string_view s(text);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\n' ||
                        s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\n' || s.back() == '\r'))
    s.remove_suffix(1);
  const std::size_t comma = s.find(',');
  if (comma == std::string_view::npos) return std::nullopt;
  if (s.find(',', comma + 1) != std::string_view::npos) return std::nullopt;
  const auto lat = parse_strict_double(s.substr(0, comma));
  const auto lon = parse_strict_double(s.substr(comma + 1));
  if (!lat || !lon) return std::nullopt;
  try {
    return GpsCoordinate(*lat, *lon);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

std::string fallback_geocode_prompt(const std::string& description) {
  return "Convert the following location description to GPS coordinates. Respond with "
         "only \"latitude, longitude\" in decimal degrees and nothing else.\nLocation: " +
         description + "\n";
}

std::optional<GeocodeResult> geocode(const std::string& description, GeocoderClient& geocoder,
                                     LmmClient& lmm, const std::string& model,
                                     GeocodeAudit* audit) {
  if (description.empty()) throw std::invalid_argument("geocode: empty description");

  std::string geocoder_problem;
  std::vector<GeocoderHit> hits;
  try {
    if (audit) audit->geocoder_calls += 1;
    hits = geocoder.search(description);
  } catch (const std::exception& e) {
    geocoder_problem = e.what();
  }
  if (!hits.empty()) {
    const GeocoderHit& first = hits.front();
    const auto lat = parse_strict_double(first.lat);
    const auto lon = parse_strict_double(first.lon);
    if (lat && lon) {
      try {
        return GeocodeResult{GpsCoordinate(*lat, *lon), GeocodeSource::kGeocoder,
                             first.display_name};
      } catch (const std::invalid_argument& e) {
        geocoder_problem = e.what();  // out of range: rejected, try the fallback
      }
    } else {
      geocoder_problem = "first hit has unparsable lat/lon ('" + first.lat + "', '" +
                         first.lon + "')";
    }
  } else if (geocoder_problem.empty()) {
    geocoder_problem = "no hits";
  }

  LmmRequest request;
  request.model = model;
  request.text = fallback_geocode_prompt(description);
  request.temperature = 1.0;
  std::string fallback_text;
  try {
    if (audit) audit->fallback_calls += 1;
    fallback_text = lmm.generate(request).text;
  } catch (const std::exception& e) {
    if (audit)
      audit->diagnostics.push_back("dropped '" + description + "': geocoder (" +
                                   geocoder_problem + "), fallback transport (" + e.what() +
                                   ")");
    return std::nullopt;
  }
  if (const auto coord = parse_latlon(fallback_text))
    return GeocodeResult{*coord, GeocodeSource::kLmmFallback, fallback_text};
  if (audit)
    audit->diagnostics.push_back("dropped '" + description + "': geocoder (" +
                                 geocoder_problem + "), fallback output unparsable ('" +
                                 fallback_text + "')");
  return std::nullopt;
}

CandidateSet assemble_candidates(const std::vector<GeneratedLocation>& descriptions,
                                 GeocoderClient& geocoder, LmmClient& lmm,
                                 const std::string& model, GeocodeAudit* audit) {
  if (descriptions.empty())
    throw std::invalid_argument("assemble_candidates: no descriptions to geocode");
  CandidateSet set;
  std::set<std::pair<long long, long long>> seen;
  for (const auto& d : descriptions) {
    const auto result = geocode(d.description, geocoder, lmm, model, audit);
    if (!result) continue;
    const auto cell = std::make_pair(
        static_cast<long long>(std::llround(result->coordinate.latitude() / kDedupResolutionDeg)),
        static_cast<long long>(
            std::llround(result->coordinate.longitude() / kDedupResolutionDeg)));
    if (!seen.insert(cell).second) continue;
    set.candidates.push_back({result->coordinate, result->source, d.prompt_index, d.description,
                              result->display_name});
  }
  if (set.candidates.empty())
    throw EmptyCandidateError("assemble_candidates: every description failed geocoding");
  return set;
}

}  // namespace geosearch
