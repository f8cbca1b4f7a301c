#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "geosearch/clients.hpp"
#include "geosearch/encoders.hpp"
#include "geosearch/features.hpp"
#include "geosearch/refine_filter.hpp"
#include "geosearch/retrieval.hpp"
#include "geosearch/training.hpp"
#include "geosearch/websearch.hpp"

namespace geosearch {

struct AblationFlags {
  bool no_closed_world = false;   // drop G_db coordinates from prompts
  bool no_geocoding = false;      // prompts ask for raw "lat, lon" output
  bool no_layer1 = false;         // skip geometric verification
  bool no_layer2 = false;         // skip the confidence gate
  bool baseline_only = false;     // closed-world baseline path only
};

struct PipelineConfig {
  std::string weights_path;
  std::string database_path;
  std::string fixtures_dir;
  std::string queries_prefix;
  std::string training_features_prefix;
  std::string database_features_prefix;
  std::string matches_path;               // optional Layer-1 correspondences
  std::string baseline_predictions_path;  // optional external P_base per query
  std::string gallery_path;
  std::string output_dir = "out";
  std::string model = "lmm-sim/1";
  int retrieval_k = 15;
  int ransac_max_iters = 2000;
  int parallelism = 1;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  TrainConfig train;
  PromptSpec prompt;
  GateThresholds gates;
  AblationFlags ablation;

  void validate() const;  // flag consistency; path existence is per command
};

/// Strict schema: unknown keys and wrong types fail with the offending path.
PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg);

struct QueryRecord {
  std::string id;
  Eigen::VectorXd visual_feature;
  std::optional<GpsCoordinate> truth;
  std::optional<MatchInput> match;
};

/// Feature store plus optional match-file join on query id.
std::vector<QueryRecord> load_queries(const std::string& prefix, const std::string& matches_path);

/// External per-query baseline predictions: NDJSON {id, lat, lon}.
std::vector<std::pair<std::string, GpsCoordinate>> load_baseline_predictions(
    const std::string& path);

struct Clients {
  LmmClient* lmm = nullptr;
  ReverseSearchClient* search = nullptr;
  GeocoderClient* geocoder = nullptr;
};

/// Fixture-backed clients owned together (the common wiring).
struct ReplayClientBundle {
  explicit ReplayClientBundle(const std::string& fixtures_dir);
  ReplayLmmClient lmm;
  ReplaySearchClient search;
  ReplayGeocoderClient geocoder;
  Clients clients();
};

struct InferResult {
  Decision decision;
  std::string decision_layer;  // "layer1" | "layer2" | "none"
  GpsCoordinate p_base;
  std::optional<GpsCoordinate> p_search;
  std::optional<double> sigma;
  std::optional<MatchReport> match_report;
  std::int64_t prompt_tokens_estimated = 0;    // Σ estimate_tokens over LMM prompt calls
  std::int64_t fallback_prompt_tokens = 0;     // 170 per geocoding fallback call
  std::int64_t fallback_response_tokens = 0;   // 35 per geocoding fallback call
  bool failed = false;                         // a client failed; baseline used
  nlohmann::json trace;                        // deterministic audit record
};

/// Full inference flow for one query; never throws on client failure (the
/// query degrades to the baseline and is marked failed).
InferResult infer(const QueryRecord& query, const PipelineConfig& cfg,
                  const EncoderModel& model, const Database& db, const Clients& clients);

struct QueryOutcome {
  std::string id;
  GpsCoordinate prediction;
  std::string chosen;  // "search" | "baseline"
  std::string layer;   // "layer1" | "layer2" | "none"
  std::optional<double> sigma;
  double error_km = 0.0;
  std::int64_t tokens_estimated = 0;
  bool failed = false;
};

struct EvalReport {
  std::vector<double> thresholds_km;
  std::vector<double> accuracies;
  std::vector<QueryOutcome> queries;  // sorted by id
  std::int64_t total_prompt_tokens = 0;
  std::int64_t total_fallback_prompt_tokens = 0;
  std::int64_t total_fallback_response_tokens = 0;
};

/// Runs infer over every query (bounded parallelism), aggregates accuracies,
/// and writes report.json, accuracy.csv, trace/<id>.json and
/// tuning_cases.ndjson (all byte-deterministic) plus timing.csv (wall clock,
/// excluded from determinism guarantees) under output_dir.
EvalReport evaluate(const std::vector<QueryRecord>& queries, const PipelineConfig& cfg,
                    const EncoderModel& model, const Database& db, const Clients& clients,
                    const std::string& output_dir);

nlohmann::json eval_report_json(const EvalReport& report);
void write_accuracy_csv(const EvalReport& report, const std::string& path);

/// Tuning-case exchange format written by evaluate and read by tune.
void save_tuning_cases(const std::vector<std::pair<std::string, TuningCase>>& cases,
                       const std::string& path);
std::vector<std::pair<std::string, TuningCase>> load_tuning_cases(const std::string& path);

struct GalleryEvalResult {
  std::vector<double> thresholds_km;
  std::vector<double> accuracies;
  std::vector<std::pair<std::string, GpsCoordinate>> predictions;  // query id → best point
};

/// Image-to-GPS retrieval: nearest gallery point by cosine between the
/// image-location embedding and each gallery point's location embedding.
GalleryEvalResult gallery_retrieval_eval(const std::vector<QueryRecord>& queries,
                                         const std::vector<GpsCoordinate>& gallery,
                                         const EncoderModel& model);

/// Gallery files: NDJSON of {lat, lon}.
void save_gallery(const std::vector<GpsCoordinate>& gallery, const std::string& path);
std::vector<GpsCoordinate> load_gallery(const std::string& path);

}  // namespace geosearch
