#include "geosearch/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

#include "geosearch/geocoding.hpp"
#include "geosearch/io.hpp"

namespace geosearch {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& where, const std::string& what) {
  throw std::invalid_argument("config: " + where + ": " + what);
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      config_error(where + "." + key, "unknown key");
}

template <typename T>
T read_field(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(where + "." + key, "wrong type");
  }
}

}  // namespace

void PipelineConfig::validate() const {
  if (retrieval_k < 1) throw std::invalid_argument("config: retrieval_k must be >= 1");
  if (ransac_max_iters < 1) throw std::invalid_argument("config: ransac_max_iters must be >= 1");
  if (parallelism < 1) throw std::invalid_argument("config: parallelism must be >= 1");
  encoder.validate();
  train.validate();
  prompt.validate();
  gates.validate();
  const bool any_other = ablation.no_closed_world || ablation.no_geocoding ||
                         ablation.no_layer1 || ablation.no_layer2;
  if (ablation.baseline_only && any_other)
    throw std::invalid_argument(
        "config: ablation.baseline_only excludes every other ablation flag");
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object()) config_error("$", "expected a json object");
  reject_unknown_keys(
      j,
      {"weights", "database", "fixtures", "queries", "training_features", "database_features",
       "matches", "baseline_predictions", "gallery", "output_dir", "model", "retrieval_k",
       "ransac_max_iters", "parallelism", "seed", "encoder", "train", "prompt", "gates",
       "ablation"},
      "$");
  PipelineConfig cfg;
  cfg.weights_path = read_field<std::string>(j, "weights", "", "$");
  cfg.database_path = read_field<std::string>(j, "database", "", "$");
  cfg.fixtures_dir = read_field<std::string>(j, "fixtures", "", "$");
  cfg.queries_prefix = read_field<std::string>(j, "queries", "", "$");
  cfg.training_features_prefix = read_field<std::string>(j, "training_features", "", "$");
  cfg.database_features_prefix = read_field<std::string>(j, "database_features", "", "$");
  cfg.matches_path = read_field<std::string>(j, "matches", "", "$");
  cfg.baseline_predictions_path = read_field<std::string>(j, "baseline_predictions", "", "$");
  cfg.gallery_path = read_field<std::string>(j, "gallery", "", "$");
  cfg.output_dir = read_field<std::string>(j, "output_dir", cfg.output_dir, "$");
  cfg.model = read_field<std::string>(j, "model", cfg.model, "$");
  cfg.retrieval_k = read_field<int>(j, "retrieval_k", cfg.retrieval_k, "$");
  cfg.ransac_max_iters = read_field<int>(j, "ransac_max_iters", cfg.ransac_max_iters, "$");
  cfg.parallelism = read_field<int>(j, "parallelism", cfg.parallelism, "$");
  cfg.seed = read_field<std::uint64_t>(j, "seed", cfg.seed, "$");

  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    reject_unknown_keys(
        e, {"visual_dim", "embed_dim", "rff_features", "sigmas", "location_hidden", "head_hidden"},
        "$.encoder");
    cfg.encoder.visual_dim = read_field<int>(e, "visual_dim", cfg.encoder.visual_dim, "$.encoder");
    cfg.encoder.embed_dim = read_field<int>(e, "embed_dim", cfg.encoder.embed_dim, "$.encoder");
    cfg.encoder.rff_features =
        read_field<int>(e, "rff_features", cfg.encoder.rff_features, "$.encoder");
    cfg.encoder.sigmas =
        read_field<std::vector<double>>(e, "sigmas", cfg.encoder.sigmas, "$.encoder");
    cfg.encoder.location_hidden =
        read_field<int>(e, "location_hidden", cfg.encoder.location_hidden, "$.encoder");
    cfg.encoder.head_hidden =
        read_field<int>(e, "head_hidden", cfg.encoder.head_hidden, "$.encoder");
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown_keys(t, {"beta", "learning_rate", "weight_decay", "batch_size", "epochs"},
                        "$.train");
    cfg.train.beta = read_field<double>(t, "beta", cfg.train.beta, "$.train");
    cfg.train.learning_rate =
        read_field<double>(t, "learning_rate", cfg.train.learning_rate, "$.train");
    cfg.train.weight_decay =
        read_field<double>(t, "weight_decay", cfg.train.weight_decay, "$.train");
    cfg.train.batch_size = read_field<int>(t, "batch_size", cfg.train.batch_size, "$.train");
    cfg.train.epochs = read_field<int>(t, "epochs", cfg.train.epochs, "$.train");
    cfg.train.seed = cfg.seed;
  } else {
    cfg.train.seed = cfg.seed;
  }
  if (j.contains("prompt")) {
    const json& p = j.at("prompt");
    reject_unknown_keys(p, {"coordinate_schedule", "contexts_per_prompt"}, "$.prompt");
    cfg.prompt.coordinate_schedule = read_field<std::vector<int>>(
        p, "coordinate_schedule", cfg.prompt.coordinate_schedule, "$.prompt");
    cfg.prompt.contexts_per_prompt =
        read_field<int>(p, "contexts_per_prompt", cfg.prompt.contexts_per_prompt, "$.prompt");
  }
  if (j.contains("gates")) {
    const json& g = j.at("gates");
    reject_unknown_keys(g, {"reproj_px", "min_matches", "min_inlier_ratio", "alpha"}, "$.gates");
    cfg.gates.reproj_px = read_field<double>(g, "reproj_px", cfg.gates.reproj_px, "$.gates");
    cfg.gates.min_matches = read_field<int>(g, "min_matches", cfg.gates.min_matches, "$.gates");
    cfg.gates.min_inlier_ratio =
        read_field<double>(g, "min_inlier_ratio", cfg.gates.min_inlier_ratio, "$.gates");
    cfg.gates.alpha = read_field<double>(g, "alpha", cfg.gates.alpha, "$.gates");
  }
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    reject_unknown_keys(
        a, {"no_closed_world", "no_geocoding", "no_layer1", "no_layer2", "baseline_only"},
        "$.ablation");
    cfg.ablation.no_closed_world =
        read_field<bool>(a, "no_closed_world", false, "$.ablation");
    cfg.ablation.no_geocoding = read_field<bool>(a, "no_geocoding", false, "$.ablation");
    cfg.ablation.no_layer1 = read_field<bool>(a, "no_layer1", false, "$.ablation");
    cfg.ablation.no_layer2 = read_field<bool>(a, "no_layer2", false, "$.ablation");
    cfg.ablation.baseline_only = read_field<bool>(a, "baseline_only", false, "$.ablation");
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: '" + path + "' is not valid json: " + e.what());
  }
  return pipeline_config_from_json(j);
}

json pipeline_config_to_json(const PipelineConfig& cfg) {
  json j;
  j["weights"] = cfg.weights_path;
  j["database"] = cfg.database_path;
  j["fixtures"] = cfg.fixtures_dir;
  j["queries"] = cfg.queries_prefix;
  j["training_features"] = cfg.training_features_prefix;
  j["database_features"] = cfg.database_features_prefix;
  j["matches"] = cfg.matches_path;
  j["baseline_predictions"] = cfg.baseline_predictions_path;
  j["gallery"] = cfg.gallery_path;
  j["output_dir"] = cfg.output_dir;
  j["model"] = cfg.model;
  j["retrieval_k"] = cfg.retrieval_k;
  j["ransac_max_iters"] = cfg.ransac_max_iters;
  j["parallelism"] = cfg.parallelism;
  j["seed"] = cfg.seed;
  j["encoder"] = {{"visual_dim", cfg.encoder.visual_dim},
                  {"embed_dim", cfg.encoder.embed_dim},
                  {"rff_features", cfg.encoder.rff_features},
                  {"sigmas", cfg.encoder.sigmas},
                  {"location_hidden", cfg.encoder.location_hidden},
                  {"head_hidden", cfg.encoder.head_hidden}};
  j["train"] = {{"beta", cfg.train.beta},
                {"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs}};
  j["prompt"] = {{"coordinate_schedule", cfg.prompt.coordinate_schedule},
                 {"contexts_per_prompt", cfg.prompt.contexts_per_prompt}};
  j["gates"] = {{"reproj_px", cfg.gates.reproj_px},
                {"min_matches", cfg.gates.min_matches},
                {"min_inlier_ratio", cfg.gates.min_inlier_ratio},
                {"alpha", cfg.gates.alpha}};
  j["ablation"] = {{"no_closed_world", cfg.ablation.no_closed_world},
                   {"no_geocoding", cfg.ablation.no_geocoding},
                   {"no_layer1", cfg.ablation.no_layer1},
                   {"no_layer2", cfg.ablation.no_layer2},
                   {"baseline_only", cfg.ablation.baseline_only}};
  return j;
}

std::vector<QueryRecord> load_queries(const std::string& prefix,
                                      const std::string& matches_path) {
  const FeatureStore store = load_feature_store(prefix);
  std::vector<MatchInput> matches;
  if (!matches_path.empty()) matches = load_match_file(matches_path);
  std::vector<QueryRecord> out;
  out.reserve(store.entries.size());
  for (const auto& e : store.entries) {
    QueryRecord q;
    q.id = e.id;
    q.visual_feature = e.visual_feature;
    q.truth = e.gps;
    for (const auto& m : matches)
      if (m.query_id == e.id) {
        q.match = m;
        break;
      }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<std::pair<std::string, GpsCoordinate>> load_baseline_predictions(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("baseline predictions: cannot open '" + path + "'");
  std::vector<std::pair<std::string, GpsCoordinate>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("baseline predictions: bad json on line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    out.emplace_back(j.at("id").get<std::string>(),
                     GpsCoordinate(j.at("lat").get<double>(), j.at("lon").get<double>()));
  }
  return out;
}

ReplayClientBundle::ReplayClientBundle(const std::string& fixtures_dir)
    : lmm(FixtureStore(fixtures_dir)),
      search(FixtureStore(fixtures_dir)),
      geocoder(FixtureStore(fixtures_dir)) {}

Clients ReplayClientBundle::clients() { return Clients{&lmm, &search, &geocoder}; }

namespace {

std::uint64_t query_seed(const PipelineConfig& cfg, const std::string& id) {
  return fnv1a64(id) ^ (cfg.seed * 0x9E3779B97F4A7C15ULL);
}

json gps_json(const GpsCoordinate& g) {
  return json{{"lat", g.latitude()}, {"lon", g.longitude()}};
}

json neighbor_json(const Neighbor& n) {
  return json{{"id", n.id}, {"similarity", n.similarity}, {"lat", n.gps.latitude()},
              {"lon", n.gps.longitude()}};
}

struct BaselineOutcome {
  GpsCoordinate gps;
  std::string source;  // "external" | "prompt" | "retrieval_top1"
  std::string description;
  std::int64_t prompt_tokens = 0;
  std::int64_t fallback_prompt_tokens = 0;
  std::int64_t fallback_response_tokens = 0;
  std::vector<std::string> notes;
};

CandidateSet candidates_from_direct_output(const std::vector<GeneratedLocation>& locations,
                                           std::vector<std::string>* notes) {
  CandidateSet set;
  std::set<std::pair<long long, long long>> seen;
  for (const auto& loc : locations) {
    const auto coord = parse_latlon(loc.description);
    if (!coord) {
      if (notes)
        notes->push_back("direct output unparsable from prompt variant " +
                         std::to_string(loc.prompt_index + 1));
      continue;
    }
    const auto cell = std::make_pair(
        static_cast<long long>(std::llround(coord->latitude() / kDedupResolutionDeg)),
        static_cast<long long>(std::llround(coord->longitude() / kDedupResolutionDeg)));
    if (!seen.insert(cell).second) continue;
    set.candidates.push_back(
        {*coord, GeocodeSource::kLmmFallback, loc.prompt_index, loc.description, ""});
  }
  return set;
}

BaselineOutcome resolve_baseline(
    const QueryRecord& query, const PipelineConfig& cfg, const NeighborResult& neighbors,
    const Clients& clients,
    const std::vector<std::pair<std::string, GpsCoordinate>>& external) {
  for (const auto& [id, gps] : external)
    if (id == query.id) return {gps, "external", "", 0, 0, 0, {}};

  BaselineOutcome out{neighbors.nearest.front().gps, "retrieval_top1", "", 0, 0, 0, {}};
  if (!clients.lmm) {
    out.notes.push_back("no lmm client; top-1 retrieval used");
    return out;
  }

  PromptSpec baseline_spec;
  baseline_spec.coordinate_schedule = {
      *std::max_element(cfg.prompt.coordinate_schedule.begin(),
                        cfg.prompt.coordinate_schedule.end())};
  baseline_spec.contexts_per_prompt = 0;
  const NeighborResult empty_neighbors;
  const PromptMode mode =
      cfg.ablation.no_geocoding ? PromptMode::kDirectCoordinates : PromptMode::kBaseline;
  const auto prompts =
      build_prompts(cfg.ablation.no_closed_world ? empty_neighbors : neighbors, {},
                    baseline_spec, mode);

  GenerationLog log;
  std::vector<GeneratedLocation> locations;
  try {
    locations = generate_locations(prompts, query.id, *clients.lmm, cfg.model, &log);
  } catch (const std::exception& e) {
    out.notes.push_back(std::string("baseline prompt failed: ") + e.what());
    return out;
  }
  for (const auto& ex : log.exchanges) out.prompt_tokens += ex.estimated_prompt_tokens;
  for (const auto& w : log.warnings) out.notes.push_back(w);
  if (locations.empty()) {
    out.notes.push_back("baseline prompt produced no description; top-1 retrieval used");
    return out;
  }

  if (cfg.ablation.no_geocoding) {
    if (const auto coord = parse_latlon(locations.front().description)) {
      out.gps = *coord;
      out.source = "prompt";
      out.description = locations.front().description;
    } else {
      out.notes.push_back("baseline direct output unparsable; top-1 retrieval used");
    }
    return out;
  }

  if (!clients.geocoder) {
    out.notes.push_back("no geocoder client; top-1 retrieval used");
    return out;
  }
  GeocodeAudit audit;
  try {
    const CandidateSet set =
        assemble_candidates(locations, *clients.geocoder, *clients.lmm, cfg.model, &audit);
    out.gps = set.candidates.front().gps;
    out.source = "prompt";
    out.description = set.candidates.front().description;
  } catch (const EmptyCandidateError&) {
    out.notes.push_back("baseline geocoding produced no candidate; top-1 retrieval used");
  } catch (const std::exception& e) {
    out.notes.push_back(std::string("baseline geocoding failed: ") + e.what());
  }
  out.fallback_prompt_tokens +=
      static_cast<std::int64_t>(audit.fallback_calls) * kFallbackPromptTokenEstimate;
  out.fallback_response_tokens +=
      static_cast<std::int64_t>(audit.fallback_calls) * kFallbackResponseTokenEstimate;
  for (const auto& d : audit.diagnostics) out.notes.push_back(d);
  return out;
}

json ablation_json(const AblationFlags& a) {
  return json{{"no_closed_world", a.no_closed_world},
              {"no_geocoding", a.no_geocoding},
              {"no_layer1", a.no_layer1},
              {"no_layer2", a.no_layer2},
              {"baseline_only", a.baseline_only}};
}

}  // namespace

InferResult infer(const QueryRecord& query, const PipelineConfig& cfg,
                  const EncoderModel& model, const Database& db, const Clients& clients) {
  cfg.validate();
  const std::uint64_t seed = query_seed(cfg, query.id);
  InferResult out;
  json trace;
  trace["query_id"] = query.id;
  trace["seed"] = seed;
  trace["template_version"] = kPromptTemplateVersion;
  trace["ablation"] = ablation_json(cfg.ablation);

  const NeighborResult neighbors = query_neighbors(query.visual_feature, db, cfg.retrieval_k);
  {
    json cw;
    cw["k"] = cfg.retrieval_k;
    cw["nearest"] = json::array();
    cw["farthest"] = json::array();
    for (const auto& n : neighbors.nearest) cw["nearest"].push_back(neighbor_json(n));
    for (const auto& n : neighbors.farthest) cw["farthest"].push_back(neighbor_json(n));
    trace["closed_world"] = std::move(cw);
  }
  const auto [e_img_txt, e_img_loc] = project_image(query.visual_feature, model.heads);

  std::vector<std::pair<std::string, GpsCoordinate>> external;
  if (!cfg.baseline_predictions_path.empty())
    external = load_baseline_predictions(cfg.baseline_predictions_path);
  const BaselineOutcome base = resolve_baseline(query, cfg, neighbors, clients, external);
  out.p_base = base.gps;
  out.prompt_tokens_estimated += base.prompt_tokens;
  out.fallback_prompt_tokens += base.fallback_prompt_tokens;
  out.fallback_response_tokens += base.fallback_response_tokens;
  {
    json b = gps_json(base.gps);
    b["source"] = base.source;
    b["description"] = base.description;
    b["notes"] = base.notes;
    trace["baseline"] = std::move(b);
  }

  const auto finish = [&](Decision d, const std::string& layer, const std::string& reason) {
    out.decision = d;
    out.decision_layer = layer;
    json dec = gps_json(d.final_gps);
    dec["chosen"] = chosen_name(d.chosen);
    dec["layer"] = layer;
    if (!reason.empty()) dec["reason"] = reason;
    trace["decision"] = std::move(dec);
    trace["failed"] = out.failed;
    trace["tokens"] = {{"prompt_estimated", out.prompt_tokens_estimated},
                       {"fallback_prompt_estimated", out.fallback_prompt_tokens},
                       {"fallback_response_estimated", out.fallback_response_tokens}};
    out.trace = std::move(trace);
    return out;
  };

  if (cfg.ablation.baseline_only)
    return finish({Chosen::kBaseline, DecidingLayer::kLayer2, base.gps}, "none",
                  "baseline_only");

  if (!clients.search || !clients.lmm) {
    out.failed = true;
    return finish({Chosen::kBaseline, DecidingLayer::kLayer2, base.gps}, "none",
                  "open-world clients unavailable");
  }

  // Open world: reverse search, contexts, prompts, generation.
  std::vector<WebContext> contexts;
  try {
    const auto hits = clients.search->search(query.id);
    contexts = extract_contexts(hits, cfg.prompt.contexts_per_prompt);
    json ow;
    ow["hits"] = hits.size();
    ow["contexts"] = json::array();
    for (const auto& c : contexts)
      ow["contexts"].push_back({{"source_index", c.source_index}, {"bytes", c.text.size()}});
    trace["open_world"] = std::move(ow);
  } catch (const std::exception& e) {
    out.failed = true;
    return finish({Chosen::kBaseline, DecidingLayer::kLayer2, base.gps}, "none",
                  std::string("reverse search failed: ") + e.what());
  }

  const PromptMode mode = cfg.ablation.no_geocoding
                              ? PromptMode::kDirectCoordinates
                              : (cfg.ablation.no_closed_world ? PromptMode::kNoClosedWorld
                                                              : PromptMode::kStandard);
  const NeighborResult empty_neighbors;
  const auto prompts =
      build_prompts(cfg.ablation.no_closed_world ? empty_neighbors : neighbors, contexts,
                    cfg.prompt, mode);
  {
    json parr = json::array();
    for (const auto& p : prompts)
      parr.push_back({{"variant", p.variant_index},
                      {"coordinates", p.coordinate_count},
                      {"contexts", p.context_count},
                      {"estimated_tokens", estimate_tokens(p.coordinate_count, p.context_count)},
                      {"template_version", p.template_version}});
    trace["prompts"] = std::move(parr);
    trace["prompt_mode"] = prompt_mode_name(mode);
  }

  GenerationLog log;
  std::vector<GeneratedLocation> locations;
  try {
    locations = generate_locations(prompts, query.id, *clients.lmm, cfg.model, &log);
  } catch (const std::exception& e) {
    out.failed = true;
    for (const auto& ex : log.exchanges) out.prompt_tokens_estimated += ex.estimated_prompt_tokens;
    return finish({Chosen::kBaseline, DecidingLayer::kLayer2, base.gps}, "none",
                  std::string("generation failed: ") + e.what());
  }
  for (const auto& ex : log.exchanges) out.prompt_tokens_estimated += ex.estimated_prompt_tokens;
  {
    json gen;
    gen["descriptions"] = json::array();
    for (const auto& l : locations)
      gen["descriptions"].push_back({{"prompt_index", l.prompt_index}, {"text", l.description}});
    gen["warnings"] = log.warnings;
    trace["generation"] = std::move(gen);
  }

  // Candidates: direct parse or geocoding.
  CandidateSet candidates;
  std::vector<std::string> candidate_notes;
  if (locations.empty()) {
    candidate_notes.push_back("no descriptions generated");
  } else if (cfg.ablation.no_geocoding) {
    candidates = candidates_from_direct_output(locations, &candidate_notes);
  } else if (!clients.geocoder) {
    out.failed = true;
    return finish({Chosen::kBaseline, DecidingLayer::kLayer2, base.gps}, "none",
                  "geocoder client unavailable");
  } else {
    GeocodeAudit audit;
    try {
      candidates = assemble_candidates(locations, *clients.geocoder, *clients.lmm, cfg.model,
                                       &audit);
    } catch (const EmptyCandidateError&) {
      // handled below by the empty-candidate collapse
    }
    out.fallback_prompt_tokens +=
        static_cast<std::int64_t>(audit.fallback_calls) * kFallbackPromptTokenEstimate;
    out.fallback_response_tokens +=
        static_cast<std::int64_t>(audit.fallback_calls) * kFallbackResponseTokenEstimate;
    for (const auto& d : audit.diagnostics) candidate_notes.push_back(d);
    trace["geocoding"] = {{"geocoder_calls", audit.geocoder_calls},
                          {"fallback_calls", audit.fallback_calls}};
  }
  {
    json carr = json::array();
    for (const auto& c : candidates.candidates) {
      json cj = gps_json(c.gps);
      cj["source"] = geocode_source_name(c.source);
      cj["prompt_index"] = c.prompt_index;
      cj["description"] = c.description;
      carr.push_back(std::move(cj));
    }
    trace["candidates"] = std::move(carr);
    trace["candidate_notes"] = candidate_notes;
  }

  if (candidates.candidates.empty())
    return finish({Chosen::kBaseline, DecidingLayer::kLayer2, base.gps}, "none",
                  "empty candidate set");

  const ScoredCandidate scored = rank_candidates(e_img_loc, candidates, model.location);
  out.p_search = scored.candidate.gps;
  out.sigma = scored.score;
  {
    json ref = gps_json(scored.candidate.gps);
    ref["sigma"] = scored.score;
    ref["description"] = scored.candidate.description;
    trace["refinement"] = std::move(ref);
  }

  std::optional<MatchReport> report;
  std::string layer1_note;
  if (!cfg.ablation.no_layer1 && query.match) {
    try {
      report = estimate_homography_ransac(*query.match, cfg.gates.reproj_px,
                                          cfg.ransac_max_iters, seed);
    } catch (const DegenerateInputError& e) {
      layer1_note = e.what();
    } catch (const NoModelError& e) {
      layer1_note = e.what();
    }
  } else if (cfg.ablation.no_layer1) {
    layer1_note = "layer1 disabled";
  } else {
    layer1_note = "no match data for query";
  }
  out.match_report = report;
  const bool layer1_pass = !cfg.ablation.no_layer1 && layer1_verify(report, cfg.gates);
  {
    json l1;
    l1["available"] = report.has_value();
    if (report) {
      l1["match_count"] = report->match_count;
      l1["inlier_ratio"] = report->inlier_ratio;
    }
    l1["pass"] = layer1_pass;
    if (!layer1_note.empty()) l1["note"] = layer1_note;
    trace["layer1"] = std::move(l1);
  }

  if (cfg.ablation.no_layer1 && cfg.ablation.no_layer2)
    return finish({Chosen::kSearch, DecidingLayer::kLayer2, scored.candidate.gps}, "none",
                  "filtering disabled");
  if (layer1_pass)
    return finish({Chosen::kSearch, DecidingLayer::kLayer1, scored.candidate.gps}, "layer1", "");
  if (cfg.ablation.no_layer2)
    return finish({Chosen::kBaseline, DecidingLayer::kLayer1, base.gps}, "layer1",
                  "layer2 disabled; layer1 failed");
  const Decision d = layer2_gate(scored.score, cfg.gates.alpha, scored.candidate.gps, base.gps);
  return finish(d, "layer2", "");
}

EvalReport evaluate(const std::vector<QueryRecord>& queries, const PipelineConfig& cfg,
                    const EncoderModel& model, const Database& db, const Clients& clients,
                    const std::string& output_dir) {
  if (queries.empty()) throw std::invalid_argument("evaluate: empty dataset");
  for (const auto& q : queries)
    if (!q.truth)
      throw std::invalid_argument("evaluate: query '" + q.id + "' has no ground truth");

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(output_dir) / "trace");

  const std::size_t n = queries.size();
  std::vector<InferResult> results(n);
  std::vector<double> millis(n, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const int workers = std::min<int>(cfg.parallelism, static_cast<int>(n));
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        results[i] = infer(queries[i], cfg, model, db, clients);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
      millis[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return queries[a].id < queries[b].id; });

  EvalReport report;
  const DistanceThresholds thresholds;
  report.thresholds_km = thresholds.values();
  std::vector<GpsCoordinate> preds, truths;
  std::vector<std::pair<std::string, TuningCase>> tuning_cases;
  for (const std::size_t i : order) {
    const auto& q = queries[i];
    const auto& r = results[i];
    QueryOutcome o;
    o.id = q.id;
    o.prediction = r.decision.final_gps;
    o.chosen = chosen_name(r.decision.chosen);
    o.layer = r.decision_layer;
    o.sigma = r.sigma;
    o.error_km = geodesic_distance_km(r.decision.final_gps, *q.truth);
    o.tokens_estimated =
        r.prompt_tokens_estimated + r.fallback_prompt_tokens + r.fallback_response_tokens;
    o.failed = r.failed;
    report.total_prompt_tokens += r.prompt_tokens_estimated;
    report.total_fallback_prompt_tokens += r.fallback_prompt_tokens;
    report.total_fallback_response_tokens += r.fallback_response_tokens;
    preds.push_back(r.decision.final_gps);
    truths.push_back(*q.truth);
    report.queries.push_back(std::move(o));

    if (r.p_search && r.sigma) {
      TuningCase c;
      c.report = r.match_report;
      c.sigma = *r.sigma;
      c.preference = label_preference(*r.p_search, r.p_base, *q.truth, thresholds);
      tuning_cases.emplace_back(q.id, std::move(c));
    }

    std::ofstream ts((fs::path(output_dir) / "trace" / (q.id + ".json")).string());
    if (!ts) throw std::runtime_error("evaluate: cannot write trace for '" + q.id + "'");
    ts << r.trace.dump(2) << "\n";
  }
  report.accuracies = accuracy_at_thresholds(preds, truths, thresholds);

  write_text_file((fs::path(output_dir) / "report.json").string(),
                  eval_report_json(report).dump(2) + "\n");
  write_accuracy_csv(report, (fs::path(output_dir) / "accuracy.csv").string());
  save_tuning_cases(tuning_cases, (fs::path(output_dir) / "tuning_cases.ndjson").string());
  {
    std::ofstream os((fs::path(output_dir) / "timing.csv").string());
    if (!os) throw std::runtime_error("evaluate: cannot write timing.csv");
    os << "query_id,milliseconds\n";
    double total = 0.0;
    for (const std::size_t i : order) {
      os << queries[i].id << ',' << format_double(millis[i]) << '\n';
      total += millis[i];
    }
    os << "total," << format_double(total) << '\n';
  }
  return report;
}

json eval_report_json(const EvalReport& report) {
  json j;
  j["accuracies"] = json::array();
  for (std::size_t i = 0; i < report.thresholds_km.size(); ++i)
    j["accuracies"].push_back(
        {{"threshold_km", report.thresholds_km[i]}, {"accuracy", report.accuracies[i]}});
  j["queries"] = json::array();
  for (const auto& q : report.queries) {
    json qj;
    qj["id"] = q.id;
    qj["lat"] = q.prediction.latitude();
    qj["lon"] = q.prediction.longitude();
    qj["chosen"] = q.chosen;
    qj["layer"] = q.layer;
    if (q.sigma)
      qj["sigma"] = *q.sigma;
    else
      qj["sigma"] = nullptr;
    qj["error_km"] = q.error_km;
    qj["tokens_estimated"] = q.tokens_estimated;
    qj["failed"] = q.failed;
    j["queries"].push_back(std::move(qj));
  }
  j["tokens"] = {{"prompt_estimated", report.total_prompt_tokens},
                 {"fallback_prompt_estimated", report.total_fallback_prompt_tokens},
                 {"fallback_response_estimated", report.total_fallback_response_tokens},
                 {"total_estimated",
                  report.total_prompt_tokens + report.total_fallback_prompt_tokens +
                      report.total_fallback_response_tokens}};
  return j;
}

void write_accuracy_csv(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_accuracy_csv: cannot open '" + path + "'");
  os << "threshold_km,accuracy\n";
  for (std::size_t i = 0; i < report.thresholds_km.size(); ++i)
    os << format_double(report.thresholds_km[i]) << ',' << format_double(report.accuracies[i])
       << '\n';
  if (!os) throw std::runtime_error("write_accuracy_csv: write failed for '" + path + "'");
}

void save_tuning_cases(const std::vector<std::pair<std::string, TuningCase>>& cases,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_tuning_cases: cannot open '" + path + "'");
  for (const auto& [id, c] : cases) {
    json j;
    j["query_id"] = id;
    j["sigma"] = c.sigma;
    if (c.report) {
      j["match_count"] = c.report->match_count;
      j["inlier_ratio"] = c.report->inlier_ratio;
    } else {
      j["match_count"] = nullptr;
      j["inlier_ratio"] = nullptr;
    }
    j["preference"] =
        c.preference == Preference::kSearchPreferred ? "search" : "baseline";
    os << j.dump() << "\n";
  }
  if (!os) throw std::runtime_error("save_tuning_cases: write failed for '" + path + "'");
}

std::vector<std::pair<std::string, TuningCase>> load_tuning_cases(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_tuning_cases: cannot open '" + path + "'");
  std::vector<std::pair<std::string, TuningCase>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("load_tuning_cases: bad json on line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    TuningCase c;
    c.sigma = j.at("sigma").get<double>();
    if (j.contains("match_count") && !j.at("match_count").is_null()) {
      MatchReport r;
      r.match_count = j.at("match_count").get<int>();
      r.inlier_ratio = j.at("inlier_ratio").get<double>();
      r.homography = Eigen::Matrix3d::Identity();
      c.report = std::move(r);
    }
    const std::string pref = j.at("preference").get<std::string>();
    if (pref == "search")
      c.preference = Preference::kSearchPreferred;
    else if (pref == "baseline")
      c.preference = Preference::kBaselinePreferred;
    else
      throw std::runtime_error("load_tuning_cases: unknown preference '" + pref + "' on line " +
                               std::to_string(line_no));
    out.emplace_back(j.at("query_id").get<std::string>(), std::move(c));
  }
  return out;
}

GalleryEvalResult gallery_retrieval_eval(const std::vector<QueryRecord>& queries,
                                         const std::vector<GpsCoordinate>& gallery,
                                         const EncoderModel& model) {
  if (gallery.empty()) throw std::invalid_argument("gallery_retrieval_eval: empty gallery");
  if (queries.empty()) throw std::invalid_argument("gallery_retrieval_eval: no queries");
  for (const auto& q : queries)
    if (!q.truth)
      throw std::invalid_argument("gallery_retrieval_eval: query '" + q.id +
                                  "' has no ground truth");

  const Eigen::MatrixXd gallery_emb = encode_locations_batch(gallery, model.location);

  GalleryEvalResult result;
  const DistanceThresholds thresholds;
  result.thresholds_km = thresholds.values();
  std::vector<GpsCoordinate> preds, truths;
  for (const auto& q : queries) {
    const auto [e_img_txt, e_img_loc] = project_image(q.visual_feature, model.heads);
    const Eigen::VectorXd scores = gallery_emb * e_img_loc;
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    result.predictions.emplace_back(q.id, gallery[static_cast<std::size_t>(best)]);
    preds.push_back(gallery[static_cast<std::size_t>(best)]);
    truths.push_back(*q.truth);
  }
  result.accuracies = accuracy_at_thresholds(preds, truths, thresholds);
  return result;
}

void save_gallery(const std::vector<GpsCoordinate>& gallery, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_gallery: cannot open '" + path + "'");
  for (const auto& g : gallery) {
    json j;
    j["lat"] = g.latitude();
    j["lon"] = g.longitude();
    os << j.dump() << "\n";
  }
  if (!os) throw std::runtime_error("save_gallery: write failed for '" + path + "'");
}

std::vector<GpsCoordinate> load_gallery(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_gallery: cannot open '" + path + "'");
  std::vector<GpsCoordinate> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("load_gallery: bad json on line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    out.emplace_back(j.at("lat").get<double>(), j.at("lon").get<double>());
  }
  return out;
}

}  // namespace geosearch
