#include <httplib.h>

#include <stdexcept>

#include "geosearch/clients.hpp"

namespace geosearch {

using nlohmann::json;

HttpGeocoderClient::HttpGeocoderClient(std::string host, int port, std::string user_agent,
                                       std::shared_ptr<RateLimiter> limiter)
    : host_(std::move(host)), port_(port), user_agent_(std::move(user_agent)),
      limiter_(std::move(limiter)) {
  if (user_agent_.empty())
    throw std::invalid_argument("HttpGeocoderClient: an identifying user agent is required");
}

std::vector<GeocoderHit> HttpGeocoderClient::search(const std::string& query) {
  if (limiter_) limiter_->acquire();
  httplib::Client client(host_, port_);
  httplib::Params params{{"q", query}, {"format", "json"}};
  httplib::Headers headers{{"User-Agent", user_agent_}};
  auto res = client.Get("/search", params, headers);
  if (!res)
    throw std::runtime_error("geocoder transport failure: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw std::runtime_error("geocoder returned status " + std::to_string(res->status));
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("geocoder returned invalid json: " + std::string(e.what()));
  }
  return geocoder_hits_from_json(body);
}

HttpLmmClient::HttpLmmClient(std::string host, int port, std::string path, int max_retries)
    : host_(std::move(host)), port_(port), path_(std::move(path)), max_retries_(max_retries) {}

LmmResponse HttpLmmClient::generate(const LmmRequest& request) {
  const std::string payload = lmm_request_json(request).dump();
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries_; ++attempt) {
    httplib::Client client(host_, port_);
    auto res = client.Post(path_, payload, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    try {
      return lmm_response_from_json(json::parse(res->body));
    } catch (const std::exception& e) {
      last_error = std::string("invalid response body: ") + e.what();
    }
  }
  throw std::runtime_error("lmm call failed after " + std::to_string(max_retries_ + 1) +
                           " attempts: " + last_error);
}

HttpSearchClient::HttpSearchClient(std::string host, int port, std::string path)
    : host_(std::move(host)), port_(port), path_(std::move(path)) {}

std::vector<SearchHit> HttpSearchClient::search(const std::string& image_ref) {
  httplib::Client client(host_, port_);
  httplib::Params params{{"image_ref", image_ref}};
  auto res = client.Get(path_, params, httplib::Headers{});
  if (!res)
    throw std::runtime_error("reverse search transport failure: " +
                             httplib::to_string(res.error()));
  if (res->status != 200)
    throw std::runtime_error("reverse search returned status " + std::to_string(res->status));
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("reverse search returned invalid json: " + std::string(e.what()));
  }
  return search_hits_from_json(body);
}

}  // namespace geosearch
