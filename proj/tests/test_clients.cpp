#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <thread>

#include "geosearch/clients.hpp"
#include "geosearch/io.hpp"

using namespace geosearch;
using nlohmann::json;

namespace {

std::string fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

LmmRequest sample_request() {
  LmmRequest req;
  req.model = "demo-lmm";
  req.text = "where is this?";
  req.image_ref = "img-001";
  req.temperature = 0.5;
  return req;
}

// Loopback httplib server driven from a worker thread; port picked by the OS.
struct LoopbackServer {
  httplib::Server server;
  int port = 0;
  std::thread worker;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    worker = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~LoopbackServer() {
    server.stop();
    if (worker.joinable()) worker.join();
  }
};

struct StubLmm : LmmClient {
  int calls = 0;
  LmmResponse generate(const LmmRequest& request) override {
    ++calls;
    return {"echo: " + request.text, 11, 4};
  }
};

struct StubSearch : ReverseSearchClient {
  int calls = 0;
  std::vector<SearchHit> search(const std::string& image_ref) override {
    ++calls;
    return {{"https://example.org/" + image_ref, "title", "text body", "", 0}};
  }
};

struct StubGeocoder : GeocoderClient {
  int calls = 0;
  std::vector<GeocoderHit> search(const std::string& query) override {
    ++calls;
    return {{"48.8583", "2.2944", query}};
  }
};

}  // namespace

TEST_CASE("canonical request encodings cover every field") {
  const LmmRequest req = sample_request();
  const json j = lmm_request_json(req);
  CHECK(j.at("model") == "demo-lmm");
  CHECK(j.at("text") == "where is this?");
  CHECK(j.at("image_ref") == "img-001");
  CHECK(j.at("temperature") == 0.5);

  CHECK(search_request_json("ref-9") == json{{"image_ref", "ref-9"}});
  CHECK(geocode_request_json("Paris") == json{{"query", "Paris"}});
}

TEST_CASE("response serializers round-trip") {
  SUBCASE("search hits") {
    std::vector<SearchHit> hits{{"https://a.example", "A", "alpha", "img-a", 0},
                                {"https://b.example", "", "", "", 1}};
    const auto back = search_hits_from_json(search_hits_json(hits));
    REQUIRE(back.size() == 2);
    CHECK(back[0].page_url == hits[0].page_url);
    CHECK(back[0].title == hits[0].title);
    CHECK(back[0].raw_text == hits[0].raw_text);
    CHECK(back[0].link_image_ref == hits[0].link_image_ref);
    CHECK(back[1].source_index == 1);
  }
  SUBCASE("geocoder hits keep coordinates as strings") {
    std::vector<GeocoderHit> hits{{"48.8583", "2.2944", "Eiffel Tower"}};
    const auto back = geocoder_hits_from_json(geocoder_hits_json(hits));
    REQUIRE(back.size() == 1);
    CHECK(back[0].lat == "48.8583");
    CHECK(back[0].lon == "2.2944");
    CHECK(back[0].display_name == "Eiffel Tower");
  }
  SUBCASE("lmm responses") {
    const LmmResponse r{"42.0, -71.0", 120, 8};
    const LmmResponse back = lmm_response_from_json(lmm_response_json(r));
    CHECK(back.text == r.text);
    CHECK(back.prompt_tokens == 120);
    CHECK(back.response_tokens == 8);
  }
  SUBCASE("malformed payloads are rejected") {
    CHECK_THROWS_WITH_AS(search_hits_from_json(json::object()),
                         doctest::Contains("expected a json array"), std::runtime_error);
    CHECK_THROWS_WITH_AS(search_hits_from_json(json::parse(R"([{"page_url": ""}])")),
                         doctest::Contains("empty url"), std::runtime_error);
    CHECK_THROWS_AS(geocoder_hits_from_json(json::parse(R"([{"lat": "1.0"}])")), std::exception);
  }
}

TEST_CASE("fixture digests are canonical and stable") {
  json a;
  a["model"] = "m";
  a["text"] = "t";
  json b;
  b["text"] = "t";
  b["model"] = "m";
  CHECK(FixtureStore::digest(a) == FixtureStore::digest(b));  // key order is canonicalized
  CHECK(FixtureStore::digest(a).size() == 16);
  for (char c : FixtureStore::digest(a)) CHECK(std::isxdigit(static_cast<unsigned char>(c)));

  json c = a;
  c["text"] = "u";
  CHECK(FixtureStore::digest(a) != FixtureStore::digest(c));
}

TEST_CASE("fixture store records and looks up exchanges") {
  const std::string dir = fresh_dir("gs_fixture_store");
  FixtureStore store(dir);
  const json req = lmm_request_json(sample_request());
  const json resp = lmm_response_json({"hello", 3, 1});

  CHECK(!store.lookup("lmm", req).has_value());
  store.record("lmm", req, resp);

  const std::string expected_path = dir + "/lmm-" + FixtureStore::digest(req) + ".json";
  CHECK(std::filesystem::exists(expected_path));

  auto found = store.lookup("lmm", req);
  REQUIRE(found.has_value());
  CHECK(*found == resp);

  SUBCASE("stored file carries kind, request, and response") {
    const json record = json::parse(read_text_file(expected_path));
    CHECK(record.at("kind") == "lmm");
    CHECK(record.at("request") == req);
    CHECK(record.at("response") == resp);
  }
  SUBCASE("a hash collision with a different stored request is an error") {
    json record = json::parse(read_text_file(expected_path));
    record["request"]["text"] = "something else";
    write_text_file(expected_path, record.dump());
    CHECK_THROWS_WITH_AS(store.lookup("lmm", req),
                         doctest::Contains("recorded for a different request"),
                         std::runtime_error);
  }
  SUBCASE("a fixture without a response field is an error") {
    write_text_file(expected_path, R"({"kind": "lmm"})");
    CHECK_THROWS_WITH_AS(store.lookup("lmm", req), doctest::Contains("no response field"),
                         std::runtime_error);
  }
  SUBCASE("a corrupt fixture file is an error") {
    write_text_file(expected_path, "{not json");
    CHECK_THROWS_WITH_AS(store.lookup("lmm", req), doctest::Contains("not valid json"),
                         std::runtime_error);
  }
  CHECK_THROWS_AS(FixtureStore(""), std::invalid_argument);
}

TEST_CASE("replay clients serve recorded exchanges and refuse unknown requests") {
  const std::string dir = fresh_dir("gs_replay_clients");
  FixtureStore store(dir);

  const LmmRequest req = sample_request();
  store.record("lmm", lmm_request_json(req), lmm_response_json({"a reply", 9, 2}));
  store.record("search", search_request_json("img-7"),
               search_hits_json({{"https://example.org/7", "t", "body", "", 0}}));
  store.record("geocode", geocode_request_json("Paris"),
               geocoder_hits_json({{"48.85", "2.35", "Paris"}}));

  ReplayLmmClient lmm(store);
  CHECK(lmm.generate(req).text == "a reply");
  LmmRequest other = req;
  other.text = "never recorded";
  CHECK_THROWS_WITH_AS(lmm.generate(other), doctest::Contains("lmm fixture miss"),
                       std::runtime_error);

  ReplaySearchClient search(store);
  CHECK(search.search("img-7").at(0).page_url == "https://example.org/7");
  CHECK_THROWS_WITH_AS(search.search("img-8"), doctest::Contains("search fixture miss"),
                       std::runtime_error);

  ReplayGeocoderClient geocoder(store);
  CHECK(geocoder.search("Paris").at(0).lat == "48.85");
  CHECK_THROWS_WITH_AS(geocoder.search("London"), doctest::Contains("geocode fixture miss"),
                       std::runtime_error);
}

TEST_CASE("recording wrappers capture once and then serve from disk") {
  const std::string dir = fresh_dir("gs_recording_clients");
  FixtureStore store(dir);

  StubLmm lmm_inner;
  RecordingLmmClient lmm(lmm_inner, store);
  const LmmRequest req = sample_request();
  const LmmResponse first = lmm.generate(req);
  const LmmResponse second = lmm.generate(req);
  CHECK(lmm_inner.calls == 1);  // second call was a cache hit
  CHECK(first.text == second.text);
  CHECK(ReplayLmmClient(store).generate(req).text == first.text);

  StubSearch search_inner;
  RecordingSearchClient search(search_inner, store);
  (void)search.search("img-3");
  (void)search.search("img-3");
  (void)search.search("img-4");
  CHECK(search_inner.calls == 2);
  CHECK(ReplaySearchClient(store).search("img-4").at(0).page_url == "https://example.org/img-4");

  StubGeocoder geocoder_inner;
  RecordingGeocoderClient geocoder(geocoder_inner, store);
  (void)geocoder.search("Lima");
  (void)geocoder.search("Lima");
  CHECK(geocoder_inner.calls == 1);
  CHECK(ReplayGeocoderClient(store).search("Lima").at(0).display_name == "Lima");
}

TEST_CASE("rate limiter enforces a minimum spacing between calls") {
  using clock = std::chrono::steady_clock;
  RateLimiter limiter(std::chrono::milliseconds(30));
  const auto t0 = clock::now();
  limiter.acquire();
  limiter.acquire();
  limiter.acquire();
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - t0);
  CHECK(elapsed.count() >= 60);  // two full gaps after the free first call
}

TEST_CASE("http geocoder adapter speaks the /search wire format") {
  LoopbackServer loop;
  std::string seen_query, seen_format, seen_agent;
  loop.server.Get("/search", [&](const httplib::Request& req, httplib::Response& res) {
    seen_query = req.get_param_value("q");
    seen_format = req.get_param_value("format");
    seen_agent = req.get_header_value("User-Agent");
    res.set_content(geocoder_hits_json({{"35.0", "139.0", "somewhere"}}).dump(),
                    "application/json");
  });
  loop.start();

  auto limiter = std::make_shared<RateLimiter>(std::chrono::milliseconds(1));
  HttpGeocoderClient client("127.0.0.1", loop.port, "geosearch-tests/1.0", limiter);
  const auto hits = client.search("Shibuya Crossing");
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].lat == "35.0");
  CHECK(seen_query == "Shibuya Crossing");
  CHECK(seen_format == "json");
  CHECK(seen_agent == "geosearch-tests/1.0");

  SUBCASE("an identifying user agent is mandatory") {
    CHECK_THROWS_AS(HttpGeocoderClient("127.0.0.1", loop.port, "", limiter),
                    std::invalid_argument);
  }
  SUBCASE("non-200 statuses surface as errors") {
    LoopbackServer failing;
    failing.server.Get("/search", [](const httplib::Request&, httplib::Response& res) {
      res.status = 503;
    });
    failing.start();
    HttpGeocoderClient unlucky("127.0.0.1", failing.port, "geosearch-tests/1.0", nullptr);
    CHECK_THROWS_WITH_AS(unlucky.search("x"), doctest::Contains("geocoder returned status 503"),
                         std::runtime_error);
  }
  SUBCASE("a non-json body surfaces as an error") {
    LoopbackServer garbled;
    garbled.server.Get("/search", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    garbled.start();
    HttpGeocoderClient unlucky("127.0.0.1", garbled.port, "geosearch-tests/1.0", nullptr);
    CHECK_THROWS_WITH_AS(unlucky.search("x"), doctest::Contains("geocoder returned invalid json"),
                         std::runtime_error);
  }
  SUBCASE("a dead endpoint is a transport failure") {
    HttpGeocoderClient dead("127.0.0.1", 1, "geosearch-tests/1.0", nullptr);
    CHECK_THROWS_WITH_AS(dead.search("x"), doctest::Contains("geocoder transport failure"),
                         std::runtime_error);
  }
}

TEST_CASE("http lmm adapter retries transient failures") {
  LoopbackServer loop;
  std::atomic<int> hits{0};
  std::string seen_body;
  loop.server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    if (n == 1) {
      res.status = 500;
      return;
    }
    seen_body = req.body;
    res.set_content(lmm_response_json({"recovered", 7, 3}).dump(), "application/json");
  });
  loop.server.Post("/always-500", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
  });
  loop.start();

  HttpLmmClient client("127.0.0.1", loop.port, "/generate");
  const LmmRequest req = sample_request();
  const LmmResponse resp = client.generate(req);
  CHECK(resp.text == "recovered");
  CHECK(hits.load() == 2);  // one failure, one success
  CHECK(json::parse(seen_body) == lmm_request_json(req));

  SUBCASE("a persistent failure exhausts the retry budget") {
    HttpLmmClient doomed("127.0.0.1", loop.port, "/always-500", 2);
    CHECK_THROWS_WITH_AS(doomed.generate(req),
                         doctest::Contains("lmm call failed after 3 attempts"),
                         std::runtime_error);
  }
}

TEST_CASE("http reverse-search adapter passes the image reference") {
  LoopbackServer loop;
  std::string seen_ref;
  loop.server.Get("/lookup", [&](const httplib::Request& req, httplib::Response& res) {
    seen_ref = req.get_param_value("image_ref");
    res.set_content(
        search_hits_json({{"https://example.org/page", "Title", "snippet", "img-w", 0}}).dump(),
        "application/json");
  });
  loop.start();

  HttpSearchClient client("127.0.0.1", loop.port, "/lookup");
  const auto hits = client.search("query-img-1");
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].link_image_ref == "img-w");
  CHECK(seen_ref == "query-img-1");

  HttpSearchClient dead("127.0.0.1", 1, "/lookup");
  CHECK_THROWS_WITH_AS(dead.search("x"), doctest::Contains("reverse search transport failure"),
                       std::runtime_error);
}
