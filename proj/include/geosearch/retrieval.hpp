#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "geosearch/encoders.hpp"
#include "geosearch/features.hpp"
#include "geosearch/geodesy.hpp"

namespace geosearch {

/// One reference entry. v_db = concat(visual V(I), e_img_txt, e_img_loc),
/// stored as f32 so file round trips are bit-exact.
struct DbRecord {
  std::string id;
  std::vector<float> v_db;
  GpsCoordinate gps;
  std::string text;
};

struct Database {
  int visual_dim = 0;  // D_v
  int embed_dim = 0;   // D_e
  std::vector<DbRecord> records;  // sorted by id

  std::size_t vector_dim() const {
    return static_cast<std::size_t>(visual_dim) + 2 * static_cast<std::size_t>(embed_dim);
  }
  void validate() const;
};

struct Neighbor {
  std::string id;
  double similarity = 0.0;
  GpsCoordinate gps;
};

/// nearest: descending similarity; farthest: ascending. Ties break by id.
struct NeighborResult {
  std::vector<Neighbor> nearest;
  std::vector<Neighbor> farthest;
};

/// Encode every feature record through the trained heads and store the
/// concatenated vector. Duplicate ids are an error.
Database build_database(const std::vector<FeatureEntry>& features, const ProjectionHeads& heads);

/// Exact cosine ranking over the visual segment only.
NeighborResult query_neighbors(const Eigen::VectorXd& query_visual, const Database& db, int k);

/// GSDB file: magic, version, dims, count, records, trailing CRC-32 over
/// everything before the checksum.
void save_database(const Database& db, const std::string& path);
Database load_database(const std::string& path);

}  // namespace geosearch
