#include "geosearch/clients.hpp"

#include <filesystem>
#include <stdexcept>
#include <thread>

#include "geosearch/io.hpp"

namespace geosearch {

using nlohmann::json;

FixtureStore::FixtureStore(std::string dir) : dir_(std::move(dir)) {
  if (dir_.empty()) throw std::invalid_argument("FixtureStore: empty directory");
}

std::string FixtureStore::digest(const json& request) {
  // nlohmann objects iterate key-sorted, so dump() is canonical.
  return fnv1a64_hex(request.dump());
}

std::string FixtureStore::path_for(const std::string& kind, const json& request) const {
  return dir_ + "/" + kind + "-" + digest(request) + ".json";
}

std::optional<json> FixtureStore::lookup(const std::string& kind, const json& request) const {
  const std::string path = path_for(kind, request);
  if (!std::filesystem::exists(path)) return std::nullopt;
  json record;
  try {
    record = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("fixture '" + path + "' is not valid json: " + e.what());
  }
  if (!record.contains("response"))
    throw std::runtime_error("fixture '" + path + "' has no response field");
  // The digest is not collision-proof; the stored request settles identity.
  if (record.contains("request") && record.at("request") != request)
    throw std::runtime_error("fixture '" + path + "' was recorded for a different request");
  return record.at("response");
}

void FixtureStore::record(const std::string& kind, const json& request,
                          const json& response) const {
  std::filesystem::create_directories(dir_);
  json record;
  record["kind"] = kind;
  record["request"] = request;
  record["response"] = response;
  write_text_file(path_for(kind, request), record.dump(2) + "\n");
}

json lmm_request_json(const LmmRequest& request) {
  json j;
  j["model"] = request.model;
  j["text"] = request.text;
  j["image_ref"] = request.image_ref;
  j["temperature"] = request.temperature;
  return j;
}

json search_request_json(const std::string& image_ref) {
  json j;
  j["image_ref"] = image_ref;
  return j;
}

json geocode_request_json(const std::string& query) {
  json j;
  j["query"] = query;
  return j;
}

json search_hits_json(const std::vector<SearchHit>& hits) {
  json arr = json::array();
  for (const auto& h : hits) {
    json j;
    j["page_url"] = h.page_url;
    j["title"] = h.title;
    j["raw_text"] = h.raw_text;
    j["link_image_ref"] = h.link_image_ref;
    j["source_index"] = h.source_index;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<SearchHit> search_hits_from_json(const json& j) {
  if (!j.is_array()) throw std::runtime_error("search response: expected a json array");
  std::vector<SearchHit> hits;
  for (const auto& item : j) {
    SearchHit h;
    h.page_url = item.at("page_url").get<std::string>();
    h.title = item.value("title", std::string{});
    h.raw_text = item.value("raw_text", std::string{});
    h.link_image_ref = item.value("link_image_ref", std::string{});
    h.source_index = item.value("source_index", static_cast<int>(hits.size()));
    if (h.page_url.empty()) throw std::runtime_error("search response: hit with empty url");
    hits.push_back(std::move(h));
  }
  return hits;
}

json geocoder_hits_json(const std::vector<GeocoderHit>& hits) {
  json arr = json::array();
  for (const auto& h : hits) {
    json j;
    j["lat"] = h.lat;
    j["lon"] = h.lon;
    j["display_name"] = h.display_name;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<GeocoderHit> geocoder_hits_from_json(const json& j) {
  if (!j.is_array()) throw std::runtime_error("geocoder response: expected a json array");
  std::vector<GeocoderHit> hits;
  for (const auto& item : j) {
    GeocoderHit h;
    h.lat = item.at("lat").get<std::string>();
    h.lon = item.at("lon").get<std::string>();
    h.display_name = item.value("display_name", std::string{});
    hits.push_back(std::move(h));
  }
  return hits;
}

json lmm_response_json(const LmmResponse& response) {
  json j;
  j["text"] = response.text;
  j["prompt_tokens"] = response.prompt_tokens;
  j["response_tokens"] = response.response_tokens;
  return j;
}

LmmResponse lmm_response_from_json(const json& j) {
  LmmResponse r;
  r.text = j.at("text").get<std::string>();
  r.prompt_tokens = j.value("prompt_tokens", 0);
  r.response_tokens = j.value("response_tokens", 0);
  return r;
}

LmmResponse ReplayLmmClient::generate(const LmmRequest& request) {
  const json req = lmm_request_json(request);
  auto response = store_.lookup("lmm", req);
  if (!response)
    throw std::runtime_error("lmm fixture miss: no recording for digest " +
                             FixtureStore::digest(req) + " in " + store_.dir());
  return lmm_response_from_json(*response);
}

std::vector<SearchHit> ReplaySearchClient::search(const std::string& image_ref) {
  const json req = search_request_json(image_ref);
  auto response = store_.lookup("search", req);
  if (!response)
    throw std::runtime_error("search fixture miss: no recording for digest " +
                             FixtureStore::digest(req) + " in " + store_.dir());
  return search_hits_from_json(*response);
}

std::vector<GeocoderHit> ReplayGeocoderClient::search(const std::string& query) {
  const json req = geocode_request_json(query);
  auto response = store_.lookup("geocode", req);
  if (!response)
    throw std::runtime_error("geocode fixture miss: no recording for digest " +
                             FixtureStore::digest(req) + " in " + store_.dir());
  return geocoder_hits_from_json(*response);
}

LmmResponse RecordingLmmClient::generate(const LmmRequest& request) {
  const json req = lmm_request_json(request);
  if (auto cached = store_.lookup("lmm", req)) return lmm_response_from_json(*cached);
  const LmmResponse response = inner_.generate(request);
  store_.record("lmm", req, lmm_response_json(response));
  return response;
}

std::vector<SearchHit> RecordingSearchClient::search(const std::string& image_ref) {
  const json req = search_request_json(image_ref);
  if (auto cached = store_.lookup("search", req)) return search_hits_from_json(*cached);
  const auto hits = inner_.search(image_ref);
  store_.record("search", req, search_hits_json(hits));
  return hits;
}

std::vector<GeocoderHit> RecordingGeocoderClient::search(const std::string& query) {
  const json req = geocode_request_json(query);
  if (auto cached = store_.lookup("geocode", req)) return geocoder_hits_from_json(*cached);
  const auto hits = inner_.search(query);
  store_.record("geocode", req, geocoder_hits_json(hits));
  return hits;
}

void RateLimiter::acquire() {
  std::unique_lock lock(mutex_);
  const auto now = std::chrono::steady_clock::now();
  if (primed_) {
    const auto ready = last_ + min_interval_;
    if (now < ready) {
      lock.unlock();
      std::this_thread::sleep_until(ready);
      lock.lock();
    }
  }
  last_ = std::chrono::steady_clock::now();
  primed_ = true;
}

}  // namespace geosearch
