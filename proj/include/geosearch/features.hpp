#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "geosearch/geodesy.hpp"

namespace geosearch {

/// One pre-extracted sample: frozen backbone features plus side data.
/// `text_feature` is empty when the store was built without text features;
/// `gps` is absent for query stores evaluated without ground truth.
struct FeatureEntry {
  std::string id;
  Eigen::VectorXd visual_feature;
  Eigen::VectorXd text_feature;
  std::optional<GpsCoordinate> gps;
  std::string text;
};

/// On disk a store is three files sharing a prefix: `<prefix>.ndjson` with
/// one {id, lat, lon, text} object per line, `<prefix>.f32` holding the
/// packed little-endian float vectors, and `<prefix>.idx.json` mapping each
/// record to its offsets in the blob.
struct FeatureStore {
  int visual_dim = 0;
  bool has_text_features = false;
  std::vector<FeatureEntry> entries;

  const FeatureEntry* find(const std::string& id) const;
};

FeatureStore load_feature_store(const std::string& prefix);
void save_feature_store(const FeatureStore& store, const std::string& prefix);

/// Validated view for training: every entry must carry gps, text metadata
/// and a text feature. Throws naming the offending record otherwise.
void require_training_fields(const FeatureStore& store);

/// Validated view for database building: every entry must carry gps.
void require_gps(const FeatureStore& store);

}  // namespace geosearch
