"""Worldwide image geolocalization: geo-encoders, retrieval, and filtering.

Everything heavy lives in the native extension; this package re-exports its
public surface. The native CLI (``geosearch``) remains the primary entry
point for batch runs; these bindings cover scripted and notebook use.
"""

from ._core import (
    EARTH_MEAN_RADIUS_KM,
    WGS84_ECCENTRICITY_SQ,
    WGS84_SEMI_MAJOR_A,
    Chosen,
    Correspondence,
    Database,
    DecidingLayer,
    Decision,
    EcefVector,
    EncoderConfig,
    EncoderModel,
    FeatureEntry,
    FeatureStore,
    GalleryEvalResult,
    GateThresholds,
    GpsCoordinate,
    LossReport,
    MatchInput,
    MatchReport,
    Neighbor,
    NeighborResult,
    QueryRecord,
    TrainConfig,
    TrainResult,
    __version__,
    accuracy_at_thresholds,
    build_database,
    decide,
    ecef_project,
    encode_location,
    encode_locations_batch,
    encode_text,
    estimate_homography_ransac,
    estimate_tokens,
    gallery_retrieval_eval,
    generate_uniform_gallery,
    geodesic_distance_km,
    info_nce,
    init_parameters,
    layer1_verify,
    layer2_gate,
    load_database,
    load_feature_store,
    load_gallery,
    load_queries,
    load_weights,
    project_image,
    query_neighbors,
    run_evaluate,
    run_infer,
    save_database,
    save_feature_store,
    save_gallery,
    save_weights,
    train,
)

__all__ = [
    "EARTH_MEAN_RADIUS_KM",
    "WGS84_ECCENTRICITY_SQ",
    "WGS84_SEMI_MAJOR_A",
    "Chosen",
    "Correspondence",
    "Database",
    "DecidingLayer",
    "Decision",
    "EcefVector",
    "EncoderConfig",
    "EncoderModel",
    "FeatureEntry",
    "FeatureStore",
    "GalleryEvalResult",
    "GateThresholds",
    "GpsCoordinate",
    "LossReport",
    "MatchInput",
    "MatchReport",
    "Neighbor",
    "NeighborResult",
    "QueryRecord",
    "TrainConfig",
    "TrainResult",
    "__version__",
    "accuracy_at_thresholds",
    "build_database",
    "decide",
    "ecef_project",
    "encode_location",
    "encode_locations_batch",
    "encode_text",
    "estimate_homography_ransac",
    "estimate_tokens",
    "gallery_retrieval_eval",
    "generate_uniform_gallery",
    "geodesic_distance_km",
    "info_nce",
    "init_parameters",
    "layer1_verify",
    "layer2_gate",
    "load_database",
    "load_feature_store",
    "load_gallery",
    "load_queries",
    "load_weights",
    "project_image",
    "query_neighbors",
    "run_evaluate",
    "run_infer",
    "save_database",
    "save_feature_store",
    "save_gallery",
    "save_weights",
    "train",
]
