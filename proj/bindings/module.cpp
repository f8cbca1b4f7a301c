// Python bindings for the native core. Thin by design: structs map to
// attribute holders, functions keep their C++ names, and the two run_*
// helpers wire up the fixture-replay clients that scripted use needs.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "geosearch/encoders.hpp"
#include "geosearch/features.hpp"
#include "geosearch/geodesy.hpp"
#include "geosearch/pipeline.hpp"
#include "geosearch/refine_filter.hpp"
#include "geosearch/retrieval.hpp"
#include "geosearch/training.hpp"
#include "geosearch/websearch.hpp"

namespace py = pybind11;
using namespace geosearch;

namespace {

std::string format_coord(const GpsCoordinate& c) {
  std::ostringstream os;
  os << "GpsCoordinate(" << c.latitude() << ", " << c.longitude() << ")";
  return os.str();
}

/// Loads everything a pipeline run needs from the config's paths.
struct LoadedPipeline {
  PipelineConfig cfg;
  EncoderModel model;
  Database db;
  std::vector<QueryRecord> queries;
};

LoadedPipeline load_pipeline(const std::string& config_path) {
  LoadedPipeline p;
  p.cfg = load_pipeline_config(config_path);
  p.cfg.validate();
  if (p.cfg.weights_path.empty() || p.cfg.database_path.empty() || p.cfg.queries_prefix.empty())
    throw std::invalid_argument("config: weights, database, and queries paths must all be set");
  p.model = load_weights(p.cfg.weights_path);
  p.db = load_database(p.cfg.database_path);
  p.queries = load_queries(p.cfg.queries_prefix, p.cfg.matches_path);
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core: geodesy, geo-encoders, retrieval, filtering, pipeline.";
  m.attr("__version__") = "0.1.0";
  m.attr("EARTH_MEAN_RADIUS_KM") = kEarthMeanRadiusKm;
  m.attr("WGS84_SEMI_MAJOR_A") = Wgs84::semi_major_a;
  m.attr("WGS84_ECCENTRICITY_SQ") = Wgs84::eccentricity_sq;

  // --- geodesy ---
  py::class_<GpsCoordinate>(m, "GpsCoordinate",
                            "Geodetic position in degrees; latitude validated into [-90, 90], "
                            "longitude normalized into (-180, 180].")
      .def(py::init<>())
      .def(py::init<double, double>(), py::arg("lat_deg"), py::arg("lon_deg"))
      .def_property_readonly("latitude", &GpsCoordinate::latitude)
      .def_property_readonly("longitude", &GpsCoordinate::longitude)
      .def_static("normalize_lon_deg", &GpsCoordinate::normalize_lon_deg, py::arg("lon_deg"))
      .def("__repr__", &format_coord);

  py::class_<EcefVector>(m, "EcefVector")
      .def_readonly("x", &EcefVector::x)
      .def_readonly("y", &EcefVector::y)
      .def_readonly("z", &EcefVector::z)
      .def("norm", &EcefVector::norm);

  m.def("ecef_project", &ecef_project, py::arg("coord"), py::arg("altitude_m") = 0.0);
  m.def("geodesic_distance_km", &geodesic_distance_km, py::arg("a"), py::arg("b"));
  m.def(
      "accuracy_at_thresholds",
      [](const std::vector<GpsCoordinate>& predictions, const std::vector<GpsCoordinate>& truths,
         const std::vector<double>& thresholds_km) {
        return accuracy_at_thresholds(predictions, truths, DistanceThresholds(thresholds_km));
      },
      py::arg("predictions"), py::arg("truths"),
      py::arg("thresholds_km") = DistanceThresholds().values());
  m.def("generate_uniform_gallery", &generate_uniform_gallery, py::arg("count"), py::arg("seed"));

  // --- features ---
  py::class_<FeatureEntry>(m, "FeatureEntry")
      .def(py::init<>())
      .def_readwrite("id", &FeatureEntry::id)
      .def_readwrite("visual_feature", &FeatureEntry::visual_feature)
      .def_readwrite("text_feature", &FeatureEntry::text_feature)
      .def_readwrite("gps", &FeatureEntry::gps)
      .def_readwrite("text", &FeatureEntry::text);

  py::class_<FeatureStore>(m, "FeatureStore")
      .def(py::init<>())
      .def_readwrite("visual_dim", &FeatureStore::visual_dim)
      .def_readwrite("has_text_features", &FeatureStore::has_text_features)
      .def_readwrite("entries", &FeatureStore::entries)
      .def(
          "find",
          [](const FeatureStore& s, const std::string& id) -> std::optional<FeatureEntry> {
            const FeatureEntry* e = s.find(id);
            if (!e) return std::nullopt;
            return *e;
          },
          py::arg("id"));

  m.def("load_feature_store", &load_feature_store, py::arg("prefix"));
  m.def("save_feature_store", &save_feature_store, py::arg("store"), py::arg("prefix"));

  // --- encoders ---
  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init<>())
      .def_readwrite("visual_dim", &EncoderConfig::visual_dim)
      .def_readwrite("embed_dim", &EncoderConfig::embed_dim)
      .def_readwrite("rff_features", &EncoderConfig::rff_features)
      .def_readwrite("sigmas", &EncoderConfig::sigmas)
      .def_readwrite("location_hidden", &EncoderConfig::location_hidden)
      .def_readwrite("head_hidden", &EncoderConfig::head_hidden)
      .def("validate", &EncoderConfig::validate);

  py::class_<EncoderModel>(m, "EncoderModel")
      .def_property_readonly(
          "embedding_dim",
          [](const EncoderModel& model) { return model.location.embedding_dim(); })
      .def_property_readonly("branch_count", [](const EncoderModel& model) {
        return model.location.branches.size();
      });

  m.def("init_parameters", &init_parameters, py::arg("config"), py::arg("seed"));
  m.def(
      "encode_location",
      [](const EncoderModel& model, const GpsCoordinate& coord) {
        return encode_location(coord, model.location);
      },
      py::arg("model"), py::arg("coord"));
  m.def(
      "encode_locations_batch",
      [](const EncoderModel& model, const std::vector<GpsCoordinate>& coords) {
        return encode_locations_batch(coords, model.location);
      },
      py::arg("model"), py::arg("coords"));
  m.def(
      "project_image",
      [](const EncoderModel& model, const Eigen::VectorXd& visual_feature) {
        return project_image(visual_feature, model.heads);
      },
      py::arg("model"), py::arg("visual_feature"),
      "Returns (e_img_txt, e_img_loc), both unit-norm.");
  m.def(
      "encode_text",
      [](const EncoderModel& model, const Eigen::VectorXd& text_feature) {
        return encode_text(text_feature, model.heads);
      },
      py::arg("model"), py::arg("text_feature"));
  m.def("save_weights", &save_weights, py::arg("model"), py::arg("path"));
  m.def("load_weights", &load_weights, py::arg("path"));

  // --- training ---
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("beta", &TrainConfig::beta)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<LossReport>(m, "LossReport")
      .def_readonly("img_txt", &LossReport::img_txt)
      .def_readonly("txt_img", &LossReport::txt_img)
      .def_readonly("img_loc", &LossReport::img_loc)
      .def_readonly("loc_img", &LossReport::loc_img)
      .def_readonly("total", &LossReport::total);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("model", &TrainResult::model)
      .def_readonly("history", &TrainResult::history);

  m.def(
      "info_nce",
      [](const Eigen::MatrixXd& e_a, const Eigen::MatrixXd& e_b, double beta) {
        return info_nce(e_a, e_b, beta);
      },
      py::arg("e_a"), py::arg("e_b"), py::arg("beta"));
  m.def("train", &train, py::arg("dataset"), py::arg("enc_config"), py::arg("config"));

  // --- retrieval ---
  py::class_<Neighbor>(m, "Neighbor")
      .def_readonly("id", &Neighbor::id)
      .def_readonly("similarity", &Neighbor::similarity)
      .def_readonly("gps", &Neighbor::gps);

  py::class_<NeighborResult>(m, "NeighborResult")
      .def_readonly("nearest", &NeighborResult::nearest)
      .def_readonly("farthest", &NeighborResult::farthest);

  py::class_<Database>(m, "Database")
      .def_readonly("visual_dim", &Database::visual_dim)
      .def_readonly("embed_dim", &Database::embed_dim)
      .def("__len__", [](const Database& db) { return db.records.size(); })
      .def("ids", [](const Database& db) {
        std::vector<std::string> out;
        out.reserve(db.records.size());
        for (const auto& r : db.records) out.push_back(r.id);
        return out;
      });

  m.def(
      "build_database",
      [](const std::vector<FeatureEntry>& features, const EncoderModel& model) {
        return build_database(features, model.heads);
      },
      py::arg("features"), py::arg("model"));
  m.def("query_neighbors", &query_neighbors, py::arg("query_visual"), py::arg("db"),
        py::arg("k"));
  m.def("save_database", &save_database, py::arg("db"), py::arg("path"));
  m.def("load_database", &load_database, py::arg("path"));

  // --- web search ---
  m.def("estimate_tokens", &estimate_tokens, py::arg("coordinate_count"),
        py::arg("context_count"));

  // --- refinement and filtering ---
  py::class_<Correspondence>(m, "Correspondence")
      .def(py::init<>())
      .def(py::init([](double x, double y, double xp, double yp, double confidence) {
             return Correspondence{x, y, xp, yp, confidence};
           }),
           py::arg("x"), py::arg("y"), py::arg("xp"), py::arg("yp"),
           py::arg("confidence") = 1.0)
      .def_readwrite("x", &Correspondence::x)
      .def_readwrite("y", &Correspondence::y)
      .def_readwrite("xp", &Correspondence::xp)
      .def_readwrite("yp", &Correspondence::yp)
      .def_readwrite("confidence", &Correspondence::confidence);

  py::class_<MatchInput>(m, "MatchInput")
      .def(py::init<>())
      .def_readwrite("query_id", &MatchInput::query_id)
      .def_readwrite("link_image_ref", &MatchInput::link_image_ref)
      .def_readwrite("matches", &MatchInput::matches)
      .def_readwrite("image_w", &MatchInput::image_w)
      .def_readwrite("image_h", &MatchInput::image_h);

  py::class_<MatchReport>(m, "MatchReport")
      .def_readonly("match_count", &MatchReport::match_count)
      .def_readonly("homography", &MatchReport::homography)
      .def_readonly("inlier_mask", &MatchReport::inlier_mask)
      .def_readonly("inlier_ratio", &MatchReport::inlier_ratio);

  py::class_<GateThresholds>(m, "GateThresholds")
      .def(py::init<>())
      .def_readwrite("reproj_px", &GateThresholds::reproj_px)
      .def_readwrite("min_matches", &GateThresholds::min_matches)
      .def_readwrite("min_inlier_ratio", &GateThresholds::min_inlier_ratio)
      .def_readwrite("alpha", &GateThresholds::alpha);

  py::enum_<Chosen>(m, "Chosen")
      .value("SEARCH", Chosen::kSearch)
      .value("BASELINE", Chosen::kBaseline);

  py::enum_<DecidingLayer>(m, "DecidingLayer")
      .value("LAYER1", DecidingLayer::kLayer1)
      .value("LAYER2", DecidingLayer::kLayer2);

  py::class_<Decision>(m, "Decision")
      .def_readonly("chosen", &Decision::chosen)
      .def_readonly("layer", &Decision::layer)
      .def_readonly("final_gps", &Decision::final_gps);

  m.def("estimate_homography_ransac", &estimate_homography_ransac, py::arg("input"),
        py::arg("tau_r"), py::arg("max_iters"), py::arg("seed"));
  m.def("layer1_verify", &layer1_verify, py::arg("report"), py::arg("thresholds"));
  m.def("layer2_gate", &layer2_gate, py::arg("sigma"), py::arg("alpha"), py::arg("p_search"),
        py::arg("p_base"));
  m.def("decide", &decide, py::arg("report"), py::arg("sigma"), py::arg("p_search"),
        py::arg("p_base"), py::arg("thresholds"));

  // --- pipeline ---
  py::class_<QueryRecord>(m, "QueryRecord")
      .def_readonly("id", &QueryRecord::id)
      .def_readonly("visual_feature", &QueryRecord::visual_feature)
      .def_readonly("truth", &QueryRecord::truth)
      .def_readonly("match", &QueryRecord::match);

  m.def("load_queries", &load_queries, py::arg("prefix"), py::arg("matches_path") = "");

  py::class_<GalleryEvalResult>(m, "GalleryEvalResult")
      .def_readonly("thresholds_km", &GalleryEvalResult::thresholds_km)
      .def_readonly("accuracies", &GalleryEvalResult::accuracies)
      .def_readonly("predictions", &GalleryEvalResult::predictions);

  m.def("gallery_retrieval_eval", &gallery_retrieval_eval, py::arg("queries"),
        py::arg("gallery"), py::arg("model"));
  m.def("save_gallery", &save_gallery, py::arg("gallery"), py::arg("path"));
  m.def("load_gallery", &load_gallery, py::arg("path"));

  m.def(
      "run_evaluate",
      [](const std::string& config_path, const std::string& output_dir) {
        LoadedPipeline p = load_pipeline(config_path);
        if (!output_dir.empty()) p.cfg.output_dir = output_dir;
        ReplayClientBundle bundle(p.cfg.fixtures_dir);
        const EvalReport report =
            evaluate(p.queries, p.cfg, p.model, p.db, bundle.clients(), p.cfg.output_dir);
        return eval_report_json(report).dump();
      },
      py::arg("config_path"), py::arg("output_dir") = std::string(),
      "Fixture-mode end-to-end evaluation; returns the report as a JSON string and writes "
      "the usual artifacts under the output directory.");

  m.def(
      "run_infer",
      [](const std::string& config_path, const std::string& query_id) {
        LoadedPipeline p = load_pipeline(config_path);
        const QueryRecord* q = nullptr;
        for (const auto& r : p.queries)
          if (r.id == query_id) q = &r;
        if (!q)
          throw std::invalid_argument("no query with id '" + query_id + "' in '" +
                                      p.cfg.queries_prefix + "'");
        ReplayClientBundle bundle(p.cfg.fixtures_dir);
        const InferResult r = infer(*q, p.cfg, p.model, p.db, bundle.clients());
        return r.trace.dump();
      },
      py::arg("config_path"), py::arg("query_id"),
      "Fixture-mode inference for one query; returns the audit trace as a JSON string.");
}
