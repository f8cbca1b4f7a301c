#pragma once

#include <chrono>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace geosearch {

struct LmmRequest {
  std::string model;
  std::string text;
  std::string image_ref;      // empty for text-only calls
  double temperature = 1.0;
};

struct LmmResponse {
  std::string text;
  int prompt_tokens = 0;
  int response_tokens = 0;
};

class LmmClient {
 public:
  virtual ~LmmClient() = default;
  virtual LmmResponse generate(const LmmRequest& request) = 0;
};

struct SearchHit {
  std::string page_url;
  std::string title;
  std::string raw_text;
  std::string link_image_ref;  // matched web image, empty when absent
  int source_index = 0;
};

class ReverseSearchClient {
 public:
  virtual ~ReverseSearchClient() = default;
  virtual std::vector<SearchHit> search(const std::string& image_ref) = 0;
};

struct GeocoderHit {
  std::string lat;  // decimal-degree strings, as the wire format carries them
  std::string lon;
  std::string display_name;
};

class GeocoderClient {
 public:
  virtual ~GeocoderClient() = default;
  virtual std::vector<GeocoderHit> search(const std::string& query) = 0;
};

/// Directory of recorded exchanges, one JSON file per request, named
/// `<kind>-<digest>.json` where the digest hashes the canonical request.
class FixtureStore {
 public:
  explicit FixtureStore(std::string dir);

  static std::string digest(const nlohmann::json& request);
  std::optional<nlohmann::json> lookup(const std::string& kind,
                                       const nlohmann::json& request) const;
  void record(const std::string& kind, const nlohmann::json& request,
              const nlohmann::json& response) const;
  const std::string& dir() const { return dir_; }

 private:
  std::string path_for(const std::string& kind, const nlohmann::json& request) const;
  std::string dir_;
};

/// Replay implementations: a request without a fixture is an error, never a
/// silent fabrication.
class ReplayLmmClient : public LmmClient {
 public:
  explicit ReplayLmmClient(FixtureStore store) : store_(std::move(store)) {}
  LmmResponse generate(const LmmRequest& request) override;

 private:
  FixtureStore store_;
};

class ReplaySearchClient : public ReverseSearchClient {
 public:
  explicit ReplaySearchClient(FixtureStore store) : store_(std::move(store)) {}
  std::vector<SearchHit> search(const std::string& image_ref) override;

 private:
  FixtureStore store_;
};

class ReplayGeocoderClient : public GeocoderClient {
 public:
  explicit ReplayGeocoderClient(FixtureStore store) : store_(std::move(store)) {}
  std::vector<GeocoderHit> search(const std::string& query) override;

 private:
  FixtureStore store_;
};

/// Pass-through wrappers that persist every (request, response) pair, used
/// to capture fixtures from any inner implementation.
class RecordingLmmClient : public LmmClient {
 public:
  RecordingLmmClient(LmmClient& inner, FixtureStore store)
      : inner_(inner), store_(std::move(store)) {}
  LmmResponse generate(const LmmRequest& request) override;

 private:
  LmmClient& inner_;
  FixtureStore store_;
};

class RecordingSearchClient : public ReverseSearchClient {
 public:
  RecordingSearchClient(ReverseSearchClient& inner, FixtureStore store)
      : inner_(inner), store_(std::move(store)) {}
  std::vector<SearchHit> search(const std::string& image_ref) override;

 private:
  ReverseSearchClient& inner_;
  FixtureStore store_;
};

class RecordingGeocoderClient : public GeocoderClient {
 public:
  RecordingGeocoderClient(GeocoderClient& inner, FixtureStore store)
      : inner_(inner), store_(std::move(store)) {}
  std::vector<GeocoderHit> search(const std::string& query) override;

 private:
  GeocoderClient& inner_;
  FixtureStore store_;
};

/// Enforces a minimum spacing between calls (geocoder usage policy).
class RateLimiter {
 public:
  explicit RateLimiter(std::chrono::milliseconds min_interval) : min_interval_(min_interval) {}
  void acquire();

 private:
  std::chrono::milliseconds min_interval_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point last_{};
  bool primed_ = false;
};

/// Live HTTP adapters (plain-text JSON endpoints). Tests drive these against
/// a loopback server; production wiring points them at real services.
class HttpGeocoderClient : public GeocoderClient {
 public:
  HttpGeocoderClient(std::string host, int port, std::string user_agent,
                     std::shared_ptr<RateLimiter> limiter);
  std::vector<GeocoderHit> search(const std::string& query) override;

 private:
  std::string host_;
  int port_;
  std::string user_agent_;
  std::shared_ptr<RateLimiter> limiter_;
};

class HttpLmmClient : public LmmClient {
 public:
  HttpLmmClient(std::string host, int port, std::string path, int max_retries = 2);
  LmmResponse generate(const LmmRequest& request) override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  int max_retries_;
};

class HttpSearchClient : public ReverseSearchClient {
 public:
  HttpSearchClient(std::string host, int port, std::string path);
  std::vector<SearchHit> search(const std::string& image_ref) override;

 private:
  std::string host_;
  int port_;
  std::string path_;
};

/// Canonical request encodings shared by fixtures and HTTP adapters.
nlohmann::json lmm_request_json(const LmmRequest& request);
nlohmann::json search_request_json(const std::string& image_ref);
nlohmann::json geocode_request_json(const std::string& query);

nlohmann::json search_hits_json(const std::vector<SearchHit>& hits);
std::vector<SearchHit> search_hits_from_json(const nlohmann::json& j);
nlohmann::json geocoder_hits_json(const std::vector<GeocoderHit>& hits);
std::vector<GeocoderHit> geocoder_hits_from_json(const nlohmann::json& j);
nlohmann::json lmm_response_json(const LmmResponse& response);
LmmResponse lmm_response_from_json(const nlohmann::json& j);

}  // namespace geosearch
