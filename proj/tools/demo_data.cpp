#include "demo_data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "geosearch/encoders.hpp"
#include "geosearch/io.hpp"
#include "geosearch/pipeline.hpp"
#include "geosearch/retrieval.hpp"
#include "geosearch/rng.hpp"

namespace geosearch::demo {

namespace fs = std::filesystem;

namespace {

Eigen::VectorXd random_unit(DetRng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return v.normalized();
}

Eigen::VectorXd noisy_copy(const Eigen::VectorXd& sig, double noise, DetRng& rng) {
  Eigen::VectorXd v = sig;
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += noise * rng.normal();
  return v.normalized();
}

double clamp_lat(double lat) { return std::clamp(lat, -89.9, 89.9); }

GpsCoordinate jittered(const GpsCoordinate& center, double amount_deg, DetRng& rng) {
  return GpsCoordinate(clamp_lat(center.latitude() + amount_deg * (2.0 * rng.uniform() - 1.0)),
                       center.longitude() + amount_deg * (2.0 * rng.uniform() - 1.0));
}

std::string format_coords(const GpsCoordinate& g) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f, %.4f", g.latitude(), g.longitude());
  return buf;
}

const DemoPlace* find_by_id(const std::vector<DemoPlace>& places, const std::string& id) {
  for (const auto& p : places)
    if (p.query_id == id) return &p;
  return nullptr;
}

std::string alt_description(const DemoPlace& p) { return "Old quarter near " + p.name; }

struct ResolvedPlace {
  const DemoPlace* place;
  GpsCoordinate gps;
};

std::optional<ResolvedPlace> resolve_description(const std::vector<DemoPlace>& places,
                                                 const std::string& desc) {
  for (const auto& p : places) {
    if (desc == p.name) return ResolvedPlace{&p, p.gps};
    if (desc == alt_description(p))
      return ResolvedPlace{
          &p, GpsCoordinate(clamp_lat(p.gps.latitude() + 0.01), p.gps.longitude() + 0.01)};
  }
  return std::nullopt;
}

// "[template ..., variant i/n]" header → (i, n); (0, 0) when absent.
std::pair<int, int> parse_variant(const std::string& text) {
  const auto pos = text.find(", variant ");
  if (pos == std::string::npos) return {0, 0};
  int i = 0, n = 0;
  if (std::sscanf(text.c_str() + pos, ", variant %d/%d]", &i, &n) == 2) return {i, n};
  return {0, 0};
}

}  // namespace

LmmResponse SimLmmClient::generate(const LmmRequest& request) {
  LmmResponse resp;
  std::string text;

  if (request.text.rfind("Convert the following location description", 0) == 0) {
    // Text-only fallback geocoding: echo coordinates for known descriptions.
    const auto key = request.text.find("Location: ");
    std::string desc;
    if (key != std::string::npos) {
      desc = request.text.substr(key + 10);
      while (!desc.empty() && (desc.back() == '\n' || desc.back() == ' ')) desc.pop_back();
    }
    if (const auto hit = resolve_description(places_, desc))
      text = format_coords(hit->gps);
    else
      text = "unknown";
  } else if (const DemoPlace* place = find_by_id(places_, request.image_ref)) {
    if (request.text.find("Answer with only the GPS coordinates") != std::string::npos) {
      text = format_coords(place->gps);
    } else {
      const auto [variant, total] = parse_variant(request.text);
      text = (total > 1 && variant % 2 == 0) ? alt_description(*place) : place->name;
    }
  }
  // Unknown image refs answer nothing, which callers drop with a warning.

  resp.text = text;
  resp.prompt_tokens = static_cast<int>(request.text.size() / 4);
  resp.response_tokens = static_cast<int>(text.size() / 4);
  return resp;
}

std::vector<SearchHit> SimSearchClient::search(const std::string& image_ref) {
  const DemoPlace* place = find_by_id(places_, image_ref);
  if (!place) return {};
  if (!place->has_web_text) {
    // Pages found, none with usable text.
    return {{"https://forum.example/" + image_ref, "where was this taken?", "",
             "web-" + image_ref + "-a", 0}};
  }
  std::vector<SearchHit> hits;
  hits.push_back({"https://travel.example/" + image_ref, "Visiting " + place->name,
                  "Our afternoon at " + place->name +
                      ". The square's fountain and the brick clocktower are unmistakable.",
                  "web-" + image_ref + "-a", 0});
  hits.push_back({"https://photos.example/" + image_ref, place->name + " photo thread",
                  "Shot taken near " + place->name + " during the spring festival.", "", 1});
  hits.push_back({"https://forum.example/" + image_ref, "ID help needed", "", "", 2});
  return hits;
}

std::vector<GeocoderHit> SimGeocoderClient::search(const std::string& query) {
  const auto hit = resolve_description(places_, query);
  if (!hit || !hit->place->geocodable) return {};
  char lat[32], lon[32], lat2[32], lon2[32];
  std::snprintf(lat, sizeof(lat), "%.4f", hit->gps.latitude());
  std::snprintf(lon, sizeof(lon), "%.4f", hit->gps.longitude());
  std::snprintf(lat2, sizeof(lat2), "%.4f", clamp_lat(hit->gps.latitude() + 0.5));
  std::snprintf(lon2, sizeof(lon2), "%.4f", hit->gps.longitude() + 0.5);
  return {{lat, lon, hit->place->name + ", Demoland"},
          {lat2, lon2, hit->place->name + " (wider area), Demoland"}};
}

ToyWorld make_toy_world(const ToyWorldConfig& cfg) {
  if (cfg.clusters < 1 || cfg.samples_per_cluster < 1 || cfg.visual_dim < 1)
    throw std::invalid_argument("make_toy_world: counts and dims must be positive");
  ToyWorld world;
  world.cluster_centers = generate_uniform_gallery(static_cast<std::size_t>(cfg.clusters),
                                                   cfg.seed ^ 0x746f79ULL);
  DetRng rng(cfg.seed);
  std::vector<Eigen::VectorXd> visual_sigs, text_sigs;
  for (int c = 0; c < cfg.clusters; ++c) {
    visual_sigs.push_back(random_unit(rng, cfg.visual_dim));
    text_sigs.push_back(random_unit(rng, cfg.visual_dim));
  }
  world.store.visual_dim = cfg.visual_dim;
  world.store.has_text_features = true;
  for (int c = 0; c < cfg.clusters; ++c) {
    for (int s = 0; s < cfg.samples_per_cluster; ++s) {
      FeatureEntry e;
      char id[32];
      std::snprintf(id, sizeof(id), "c%03d-s%02d", c, s);
      e.id = id;
      e.visual_feature = noisy_copy(visual_sigs[static_cast<std::size_t>(c)],
                                    cfg.feature_noise, rng);
      e.text_feature = noisy_copy(text_sigs[static_cast<std::size_t>(c)],
                                  cfg.feature_noise, rng);
      e.gps = jittered(world.cluster_centers[static_cast<std::size_t>(c)],
                       cfg.coord_jitter_deg, rng);
      e.text = "cluster " + std::to_string(c) + " sample " + std::to_string(s);
      world.store.entries.push_back(std::move(e));
      world.cluster_of.push_back(c);
    }
  }
  return world;
}

PlantedMatches make_planted_matches(const std::string& query_id, const Eigen::Matrix3d& h,
                                    int inlier_count, int outlier_count, double noise_px,
                                    std::uint64_t seed, int image_w, int image_h) {
  if (inlier_count < 0 || outlier_count < 0)
    throw std::invalid_argument("make_planted_matches: negative counts");
  DetRng rng(seed);
  const double margin = 20.0;
  const Eigen::Matrix3d h_inv = h.inverse();
  const auto apply = [](const Eigen::Matrix3d& m, double x, double y) {
    const Eigen::Vector3d p = m * Eigen::Vector3d(x, y, 1.0);
    return std::make_pair(p.x() / p.z(), p.y() / p.z());
  };
  const auto symmetric_error = [&](const Correspondence& c) {
    const auto [fx, fy] = apply(h, c.x, c.y);
    const auto [bx, by] = apply(h_inv, c.xp, c.yp);
    const double fwd = std::hypot(fx - c.xp, fy - c.yp);
    const double bwd = std::hypot(bx - c.x, by - c.y);
    return std::max(fwd, bwd);
  };

  std::vector<Correspondence> rows;
  std::vector<bool> planted;
  for (int i = 0; i < inlier_count; ++i) {
    Correspondence c;
    c.x = rng.uniform(margin, image_w - margin);
    c.y = rng.uniform(margin, image_h - margin);
    const auto [xp, yp] = apply(h, c.x, c.y);
    c.xp = xp + noise_px * rng.normal();
    c.yp = yp + noise_px * rng.normal();
    rows.push_back(c);
    planted.push_back(true);
  }
  for (int i = 0; i < outlier_count; ++i) {
    Correspondence c;
    // Resample until clearly off-model so no outlier masquerades as planted.
    for (int attempt = 0; attempt < 100; ++attempt) {
      c.x = rng.uniform(0.0, image_w);
      c.y = rng.uniform(0.0, image_h);
      c.xp = rng.uniform(0.0, image_w);
      c.yp = rng.uniform(0.0, image_h);
      if (symmetric_error(c) > 8.0 * std::max(1.0, noise_px)) break;
    }
    c.confidence = 0.5;
    rows.push_back(c);
    planted.push_back(false);
  }
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  PlantedMatches out;
  out.input.query_id = query_id;
  out.input.link_image_ref = "web-" + query_id + "-a";
  out.input.image_w = image_w;
  out.input.image_h = image_h;
  for (const std::size_t i : order) {
    out.input.matches.push_back(rows[i]);
    out.planted_inlier.push_back(planted[i]);
  }
  return out;
}

namespace {

const char* kTowns[] = {"Meltingrove", "Kapati Flats", "Oreno Bay",  "Duskwell",
                        "Farrow Heights", "Quilters Bend", "Noon Vale", "Brackenport",
                        "Siltmere", "Lanternfall", "Gorse End", "Pellamy"};

Eigen::Matrix3d demo_homography(int i) {
  const double angle = 0.04 + 0.01 * i;
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 0) = std::cos(angle);
  h(0, 1) = -std::sin(angle);
  h(1, 0) = std::sin(angle);
  h(1, 1) = std::cos(angle);
  h(0, 2) = 5.0 + i;
  h(1, 2) = 3.0 + 2.0 * i;
  h(2, 0) = 1e-5 * i;
  return h;
}

}  // namespace

DemoSuite write_demo_suite(const DemoSuiteConfig& cfg) {
  if (cfg.dir.empty()) throw std::invalid_argument("write_demo_suite: dir required");
  if (cfg.query_count < 1 || cfg.db_size < cfg.query_count)
    throw std::invalid_argument("write_demo_suite: need queries and db_size >= queries");
  fs::create_directories(fs::path(cfg.dir) / "fixtures");

  const auto spots = generate_uniform_gallery(static_cast<std::size_t>(cfg.query_count),
                                              cfg.seed ^ 0x504c414345ULL);
  std::vector<DemoPlace> places;
  for (int i = 0; i < cfg.query_count; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "q-%02d", i);
    DemoPlace p;
    p.query_id = id;
    p.gps = spots[static_cast<std::size_t>(i)];
    p.name = "Plaza " + std::to_string(i) + ", " +
             kTowns[static_cast<std::size_t>(i) % std::size(kTowns)];
    p.geocodable = (i % 5) != 3;
    p.has_web_text = (i % 7) != 5;
    places.push_back(std::move(p));
  }

  DetRng rng(cfg.seed ^ 0x46454154ULL);
  std::vector<Eigen::VectorXd> sigs;
  for (int i = 0; i < cfg.query_count; ++i) sigs.push_back(random_unit(rng, cfg.visual_dim));

  FeatureStore db_store;
  db_store.visual_dim = cfg.visual_dim;
  for (int j = 0; j < cfg.db_size; ++j) {
    const int p = j % cfg.query_count;
    FeatureEntry e;
    char id[16];
    std::snprintf(id, sizeof(id), "ref-%03d", j);
    e.id = id;
    e.visual_feature = noisy_copy(sigs[static_cast<std::size_t>(p)], 0.25, rng);
    e.gps = jittered(places[static_cast<std::size_t>(p)].gps, 0.2, rng);
    e.text = "reference photo near " + places[static_cast<std::size_t>(p)].name;
    db_store.entries.push_back(std::move(e));
  }

  FeatureStore query_store;
  query_store.visual_dim = cfg.visual_dim;
  for (int i = 0; i < cfg.query_count; ++i) {
    FeatureEntry e;
    e.id = places[static_cast<std::size_t>(i)].query_id;
    e.visual_feature = noisy_copy(sigs[static_cast<std::size_t>(i)], 0.1, rng);
    e.gps = places[static_cast<std::size_t>(i)].gps;
    query_store.entries.push_back(std::move(e));
  }

  FeatureStore train_store;
  train_store.visual_dim = cfg.visual_dim;
  train_store.has_text_features = true;
  for (int i = 0; i < cfg.query_count; ++i) {
    for (int s = 0; s < 4; ++s) {
      FeatureEntry e;
      char id[24];
      std::snprintf(id, sizeof(id), "train-%02d-%d", i, s);
      e.id = id;
      e.visual_feature = noisy_copy(sigs[static_cast<std::size_t>(i)], 0.15, rng);
      e.text_feature = noisy_copy(sigs[static_cast<std::size_t>(i)], 0.2, rng);
      e.gps = jittered(places[static_cast<std::size_t>(i)].gps, 0.2, rng);
      e.text = "postcard from " + places[static_cast<std::size_t>(i)].name;
      train_store.entries.push_back(std::move(e));
    }
  }

  const fs::path root(cfg.dir);
  save_feature_store(db_store, (root / "db_features").string());
  save_feature_store(query_store, (root / "queries").string());
  save_feature_store(train_store, (root / "train_features").string());

  EncoderConfig enc;
  enc.visual_dim = cfg.visual_dim;
  enc.embed_dim = cfg.embed_dim;
  enc.rff_features = 8;
  enc.sigmas = {1.0, 16.0};
  enc.location_hidden = 24;
  enc.head_hidden = 0;
  const EncoderModel model = init_parameters(enc, cfg.seed);
  save_weights(model, (root / "weights.gswt").string());

  const Database db = build_database(db_store.entries, model.heads);
  save_database(db, (root / "db.gsdb").string());

  std::vector<MatchInput> matches;
  for (int i = 0; i < cfg.query_count; ++i) {
    if (i % 4 == 3) continue;  // no linked image → Layer 2 decides
    const bool strong = (i % 2) == 0;
    const auto planted =
        make_planted_matches(places[static_cast<std::size_t>(i)].query_id, demo_homography(i),
                             strong ? 60 : 12, strong ? 10 : 18, 0.5, cfg.seed + i);
    matches.push_back(planted.input);
  }
  save_match_file(matches, (root / "matches.ndjson").string());

  save_gallery(generate_uniform_gallery(96, cfg.seed ^ 0x47414cULL),
               (root / "gallery.ndjson").string());

  PipelineConfig pipeline;
  pipeline.weights_path = (root / "weights.gswt").string();
  pipeline.database_path = (root / "db.gsdb").string();
  pipeline.fixtures_dir = (root / "fixtures").string();
  pipeline.queries_prefix = (root / "queries").string();
  pipeline.training_features_prefix = (root / "train_features").string();
  pipeline.database_features_prefix = (root / "db_features").string();
  pipeline.matches_path = (root / "matches.ndjson").string();
  pipeline.gallery_path = (root / "gallery.ndjson").string();
  pipeline.output_dir = (root / "out").string();
  pipeline.model = "lmm-sim/1";
  pipeline.retrieval_k = 5;
  pipeline.parallelism = 1;
  pipeline.seed = cfg.seed;
  pipeline.encoder = enc;
  pipeline.train.batch_size = 4;
  pipeline.train.epochs = 1;
  pipeline.train.learning_rate = 1e-4;
  pipeline.train.seed = cfg.seed;
  const std::string config_path = (root / "config.json").string();
  write_text_file(config_path, pipeline_config_to_json(pipeline).dump(2) + "\n");

  // Author the fixtures: run the pipeline against the simulated services with
  // recording clients, once per ablation variant the replay might see.
  SimLmmClient sim_lmm(places);
  SimSearchClient sim_search(places);
  SimGeocoderClient sim_geocoder(places);
  FixtureStore store(pipeline.fixtures_dir);
  RecordingLmmClient rec_lmm(sim_lmm, store);
  RecordingSearchClient rec_search(sim_search, store);
  RecordingGeocoderClient rec_geocoder(sim_geocoder, store);
  Clients rec_clients{&rec_lmm, &rec_search, &rec_geocoder};

  const auto queries = load_queries(pipeline.queries_prefix, pipeline.matches_path);
  const fs::path capture_root = root / ".capture";
  int variant = 0;
  for (const char* flag :
       {"none", "no_geocoding", "no_closed_world", "no_layer1", "no_layer2", "baseline_only"}) {
    PipelineConfig run = pipeline;
    const std::string name(flag);
    if (name == "no_geocoding") run.ablation.no_geocoding = true;
    if (name == "no_closed_world") run.ablation.no_closed_world = true;
    if (name == "no_layer1") run.ablation.no_layer1 = true;
    if (name == "no_layer2") run.ablation.no_layer2 = true;
    if (name == "baseline_only") run.ablation.baseline_only = true;
    evaluate(queries, run, model, db, rec_clients,
             (capture_root / std::to_string(variant++)).string());
  }
  fs::remove_all(capture_root);

  return {cfg.dir, config_path, places};
}

}  // namespace geosearch::demo
