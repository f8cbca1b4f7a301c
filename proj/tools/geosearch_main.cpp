// Command-line surface over the pipeline library. Every subcommand reads one
// declarative JSON config plus flag overrides; failures print a single
// machine-readable JSON object to stderr and exit nonzero.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "geosearch/encoders.hpp"
#include "geosearch/features.hpp"
#include "geosearch/geodesy.hpp"
#include "geosearch/io.hpp"
#include "geosearch/pipeline.hpp"
#include "geosearch/refine_filter.hpp"
#include "geosearch/retrieval.hpp"
#include "geosearch/training.hpp"

namespace gs = geosearch;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<std::string> weights, database, fixtures, queries, training_features,
      database_features, matches, baseline_predictions, gallery, output_dir;
  std::optional<int> retrieval_k, parallelism, epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, learning_rate;
  bool no_closed_world = false;
  bool no_geocoding = false;
  bool no_layer1 = false;
  bool no_layer2 = false;
  bool baseline_only = false;
};

void add_common_options(CLI::App* cmd, std::string& config_path, Overrides& o) {
  cmd->add_option("--config", config_path, "Pipeline config file (JSON)")->required();
  cmd->add_option("--weights", o.weights, "Model weights file");
  cmd->add_option("--database", o.database, "Reference database file");
  cmd->add_option("--fixtures", o.fixtures, "Recorded client fixtures directory");
  cmd->add_option("--queries", o.queries, "Query feature-store prefix");
  cmd->add_option("--training-features", o.training_features, "Training feature-store prefix");
  cmd->add_option("--database-features", o.database_features, "Database feature-store prefix");
  cmd->add_option("--matches", o.matches, "Keypoint match file (NDJSON)");
  cmd->add_option("--baseline-predictions", o.baseline_predictions,
                  "External baseline predictions (NDJSON)");
  cmd->add_option("--gallery", o.gallery, "GPS gallery file (NDJSON)");
  cmd->add_option("--output-dir", o.output_dir, "Report output directory");
  cmd->add_option("--retrieval-k", o.retrieval_k, "Neighbors per direction");
  cmd->add_option("--parallelism", o.parallelism, "Worker threads for evaluate");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch-size", o.batch_size, "Training batch size");
  cmd->add_option("--seed", o.seed, "Pipeline seed");
  cmd->add_option("--alpha", o.alpha, "Layer-2 confidence threshold");
  cmd->add_option("--learning-rate", o.learning_rate, "AdamW learning rate");
  cmd->add_flag("--no-closed-world", o.no_closed_world, "Drop retrieved coordinates");
  cmd->add_flag("--no-geocoding", o.no_geocoding, "Ask for raw coordinates, skip geocoding");
  cmd->add_flag("--no-layer1", o.no_layer1, "Disable geometric verification");
  cmd->add_flag("--no-layer2", o.no_layer2, "Disable the confidence gate");
  cmd->add_flag("--baseline-only", o.baseline_only, "Closed-world baseline only");
}

gs::PipelineConfig load_config(const std::string& path, const Overrides& o) {
  gs::PipelineConfig cfg = gs::load_pipeline_config(path);
  if (o.weights) cfg.weights_path = *o.weights;
  if (o.database) cfg.database_path = *o.database;
  if (o.fixtures) cfg.fixtures_dir = *o.fixtures;
  if (o.queries) cfg.queries_prefix = *o.queries;
  if (o.training_features) cfg.training_features_prefix = *o.training_features;
  if (o.database_features) cfg.database_features_prefix = *o.database_features;
  if (o.matches) cfg.matches_path = *o.matches;
  if (o.baseline_predictions) cfg.baseline_predictions_path = *o.baseline_predictions;
  if (o.gallery) cfg.gallery_path = *o.gallery;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.retrieval_k) cfg.retrieval_k = *o.retrieval_k;
  if (o.parallelism) cfg.parallelism = *o.parallelism;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (o.alpha) cfg.gates.alpha = *o.alpha;
  if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
  cfg.ablation.no_closed_world |= o.no_closed_world;
  cfg.ablation.no_geocoding |= o.no_geocoding;
  cfg.ablation.no_layer1 |= o.no_layer1;
  cfg.ablation.no_layer2 |= o.no_layer2;
  cfg.ablation.baseline_only |= o.baseline_only;
  cfg.validate();
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw std::invalid_argument("config: no " + what + " path set");
  if (!std::filesystem::exists(path))
    throw std::runtime_error(what + " not found: '" + path + "'");
}

void require_store(const std::string& prefix, const std::string& what) {
  if (prefix.empty()) throw std::invalid_argument("config: no " + what + " prefix set");
  require_file(prefix + ".ndjson", what);
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

gs::Clients make_clients(const gs::PipelineConfig& cfg,
                         std::optional<gs::ReplayClientBundle>& bundle) {
  if (cfg.fixtures_dir.empty()) return gs::Clients{};
  require_file(cfg.fixtures_dir, "fixtures directory");
  bundle.emplace(cfg.fixtures_dir);
  return bundle->clients();
}

void run_train(const gs::PipelineConfig& cfg) {
  require_store(cfg.training_features_prefix, "training features");
  if (cfg.weights_path.empty())
    throw std::invalid_argument("config: no weights path to write");
  const gs::FeatureStore store = gs::load_feature_store(cfg.training_features_prefix);
  gs::require_training_fields(store);
  gs::EncoderConfig enc = cfg.encoder;
  enc.visual_dim = store.visual_dim;
  const gs::TrainResult result = gs::train(store, enc, cfg.train);
  gs::save_weights(result.model, cfg.weights_path);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string loss_csv =
      (std::filesystem::path(cfg.output_dir) / "loss.csv").string();
  gs::write_loss_csv(result.history, loss_csv);
  emit({{"weights", cfg.weights_path},
        {"loss_csv", loss_csv},
        {"steps", result.history.size()},
        {"final_loss", result.history.empty() ? 0.0 : result.history.back().second.total}});
}

void run_build_db(const gs::PipelineConfig& cfg) {
  require_file(cfg.weights_path, "weights");
  require_store(cfg.database_features_prefix, "database features");
  if (cfg.database_path.empty())
    throw std::invalid_argument("config: no database path to write");
  const gs::EncoderModel model = gs::load_weights(cfg.weights_path);
  const gs::FeatureStore store = gs::load_feature_store(cfg.database_features_prefix);
  gs::require_gps(store);
  const gs::Database db = gs::build_database(store.entries, model.heads);
  gs::save_database(db, cfg.database_path);
  emit({{"database", cfg.database_path},
        {"records", db.records.size()},
        {"visual_dim", db.visual_dim},
        {"embed_dim", db.embed_dim}});
}

void run_infer(const gs::PipelineConfig& cfg, const std::string& query_id,
               const std::string& trace_out) {
  require_file(cfg.weights_path, "weights");
  require_file(cfg.database_path, "database");
  require_store(cfg.queries_prefix, "queries");
  const gs::EncoderModel model = gs::load_weights(cfg.weights_path);
  const gs::Database db = gs::load_database(cfg.database_path);
  const auto queries = gs::load_queries(cfg.queries_prefix, cfg.matches_path);
  const auto it = std::find_if(queries.begin(), queries.end(),
                               [&](const gs::QueryRecord& q) { return q.id == query_id; });
  if (it == queries.end())
    throw std::invalid_argument("no query with id '" + query_id + "' in '" +
                                cfg.queries_prefix + "'");
  std::optional<gs::ReplayClientBundle> bundle;
  const gs::Clients clients = make_clients(cfg, bundle);
  const gs::InferResult r = gs::infer(*it, cfg, model, db, clients);
  if (!trace_out.empty()) gs::write_text_file(trace_out, r.trace.dump(2) + "\n");
  json out;
  out["query_id"] = query_id;
  out["lat"] = r.decision.final_gps.latitude();
  out["lon"] = r.decision.final_gps.longitude();
  out["chosen"] = gs::chosen_name(r.decision.chosen);
  out["layer"] = r.decision_layer;
  out["sigma"] = r.sigma ? json(*r.sigma) : json(nullptr);
  out["p_base"] = {{"lat", r.p_base.latitude()}, {"lon", r.p_base.longitude()}};
  out["p_search"] = r.p_search ? json{{"lat", r.p_search->latitude()},
                                      {"lon", r.p_search->longitude()}}
                               : json(nullptr);
  out["tokens_estimated"] =
      r.prompt_tokens_estimated + r.fallback_prompt_tokens + r.fallback_response_tokens;
  out["failed"] = r.failed;
  emit(out);
}

void run_evaluate(const gs::PipelineConfig& cfg) {
  require_file(cfg.weights_path, "weights");
  require_file(cfg.database_path, "database");
  require_store(cfg.queries_prefix, "queries");
  const gs::EncoderModel model = gs::load_weights(cfg.weights_path);
  const gs::Database db = gs::load_database(cfg.database_path);
  const auto queries = gs::load_queries(cfg.queries_prefix, cfg.matches_path);
  std::optional<gs::ReplayClientBundle> bundle;
  const gs::Clients clients = make_clients(cfg, bundle);
  const gs::EvalReport report =
      gs::evaluate(queries, cfg, model, db, clients, cfg.output_dir);
  json out;
  out["output_dir"] = cfg.output_dir;
  out["queries"] = report.queries.size();
  out["accuracies"] = json::array();
  for (std::size_t i = 0; i < report.thresholds_km.size(); ++i)
    out["accuracies"].push_back(
        {{"threshold_km", report.thresholds_km[i]}, {"accuracy", report.accuracies[i]}});
  out["tokens_estimated"] = report.total_prompt_tokens + report.total_fallback_prompt_tokens +
                            report.total_fallback_response_tokens;
  emit(out);
}

void run_tune(const gs::PipelineConfig& cfg, std::string cases_path) {
  if (cases_path.empty())
    cases_path = (std::filesystem::path(cfg.output_dir) / "tuning_cases.ndjson").string();
  require_file(cases_path, "tuning cases");
  const auto labeled = gs::load_tuning_cases(cases_path);
  std::vector<gs::TuningCase> cases;
  cases.reserve(labeled.size());
  for (const auto& [id, c] : labeled) cases.push_back(c);
  const gs::TuningResult result = gs::tune_thresholds(cases, cfg.gates);
  std::filesystem::create_directories(cfg.output_dir);
  const auto dir = std::filesystem::path(cfg.output_dir);
  gs::write_layer1_grid_csv(result.layer1_grid, (dir / "layer1_grid.csv").string());
  gs::write_alpha_sweep_csv(result.alpha_sweep, (dir / "alpha_sweep.csv").string());
  emit({{"cases", cases.size()},
        {"layer1_grid_csv", (dir / "layer1_grid.csv").string()},
        {"alpha_sweep_csv", (dir / "alpha_sweep.csv").string()},
        {"tuned",
         {{"reproj_px", result.tuned.reproj_px},
          {"min_matches", result.tuned.min_matches},
          {"min_inlier_ratio", result.tuned.min_inlier_ratio},
          {"alpha", result.tuned.alpha}}}});
}

void run_gallery_eval(const gs::PipelineConfig& cfg) {
  require_file(cfg.weights_path, "weights");
  require_store(cfg.queries_prefix, "queries");
  require_file(cfg.gallery_path, "gallery");
  const gs::EncoderModel model = gs::load_weights(cfg.weights_path);
  const auto queries = gs::load_queries(cfg.queries_prefix, "");
  const auto gallery = gs::load_gallery(cfg.gallery_path);
  const gs::GalleryEvalResult result = gs::gallery_retrieval_eval(queries, gallery, model);
  std::filesystem::create_directories(cfg.output_dir);
  json file;
  file["accuracies"] = json::array();
  for (std::size_t i = 0; i < result.thresholds_km.size(); ++i)
    file["accuracies"].push_back(
        {{"threshold_km", result.thresholds_km[i]}, {"accuracy", result.accuracies[i]}});
  file["predictions"] = json::array();
  for (const auto& [id, gps] : result.predictions)
    file["predictions"].push_back(
        {{"id", id}, {"lat", gps.latitude()}, {"lon", gps.longitude()}});
  const std::string out_path =
      (std::filesystem::path(cfg.output_dir) / "gallery_eval.json").string();
  gs::write_text_file(out_path, file.dump(2) + "\n");
  emit({{"gallery_eval", out_path},
        {"queries", queries.size()},
        {"gallery_points", gallery.size()},
        {"accuracies", file["accuracies"]}});
}

void run_gen_gallery(std::size_t count, std::uint64_t seed, const std::string& out) {
  const auto gallery = gs::generate_uniform_gallery(count, seed);
  gs::save_gallery(gallery, out);
  emit({{"gallery", out}, {"count", count}, {"seed", seed}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Worldwide image geolocalization: train, retrieve, search, decide"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;

  auto* train_cmd = app.add_subcommand("train", "Train encoder heads on a feature store");
  add_common_options(train_cmd, config_path, o);
  train_cmd->callback([&] { run_train(load_config(config_path, o)); });

  auto* build_db_cmd =
      app.add_subcommand("build-db", "Encode reference features into a database");
  add_common_options(build_db_cmd, config_path, o);
  build_db_cmd->callback([&] { run_build_db(load_config(config_path, o)); });

  std::string query_id;
  std::string trace_out;
  auto* infer_cmd = app.add_subcommand("infer", "Locate a single query");
  add_common_options(infer_cmd, config_path, o);
  infer_cmd->add_option("--query", query_id, "Query id")->required();
  infer_cmd->add_option("--trace-out", trace_out, "Write the audit trace to this file");
  infer_cmd->callback([&] { run_infer(load_config(config_path, o), query_id, trace_out); });

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Run the full suite and write reports");
  add_common_options(evaluate_cmd, config_path, o);
  evaluate_cmd->callback([&] { run_evaluate(load_config(config_path, o)); });

  std::string cases_path;
  auto* tune_cmd = app.add_subcommand("tune", "Fit gate thresholds from labeled cases");
  add_common_options(tune_cmd, config_path, o);
  tune_cmd->add_option("--cases", cases_path, "Tuning cases NDJSON (default: from output dir)");
  tune_cmd->callback([&] { run_tune(load_config(config_path, o), cases_path); });

  auto* gallery_cmd =
      app.add_subcommand("gallery-eval", "Image-to-GPS retrieval against a gallery");
  add_common_options(gallery_cmd, config_path, o);
  gallery_cmd->callback([&] { run_gallery_eval(load_config(config_path, o)); });

  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string out_path;
  auto* gen_cmd = app.add_subcommand("gen-gallery", "Write a uniform spherical gallery");
  gen_cmd->add_option("--count", count, "Number of points")->required();
  gen_cmd->add_option("--seed", seed, "Rotation seed");
  gen_cmd->add_option("--out", out_path, "Output NDJSON path")->required();
  gen_cmd->callback([&] { run_gen_gallery(count, seed, out_path); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", {{"type", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << json{{"error", {{"type", "invalid"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"type", "runtime"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
