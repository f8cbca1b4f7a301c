#include "geosearch/retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "geosearch/io.hpp"

namespace geosearch {

void Database::validate() const {
  if (visual_dim < 0 || embed_dim < 0)
    throw std::invalid_argument("Database: negative dimensions");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].v_db.size() != vector_dim())
      throw std::invalid_argument("Database: record '" + records[i].id +
                                  "' has wrong vector length");
    if (i > 0 && !(records[i - 1].id < records[i].id))
      throw std::invalid_argument("Database: ids not unique and sorted near '" + records[i].id +
                                  "'");
  }
}

Database build_database(const std::vector<FeatureEntry>& features, const ProjectionHeads& heads) {
  heads.f_txt.validate();
  heads.f_loc.validate();
  Database db;
  db.visual_dim = static_cast<int>(heads.f_txt.input_dim());
  db.embed_dim = static_cast<int>(heads.f_txt.output_dim());
  db.records.reserve(features.size());
  for (const auto& f : features) {
    if (!f.gps) throw std::invalid_argument("build_database: record '" + f.id + "' has no gps");
    if (f.visual_feature.size() != db.visual_dim)
      throw std::invalid_argument("build_database: record '" + f.id +
                                  "' visual feature has wrong width");
    const auto [e_img_txt, e_img_loc] = project_image(f.visual_feature, heads);
    DbRecord rec{f.id, {}, *f.gps, f.text};
    rec.v_db.reserve(db.vector_dim());
    for (Eigen::Index i = 0; i < f.visual_feature.size(); ++i)
      rec.v_db.push_back(static_cast<float>(f.visual_feature[i]));
    for (Eigen::Index i = 0; i < e_img_txt.size(); ++i)
      rec.v_db.push_back(static_cast<float>(e_img_txt[i]));
    for (Eigen::Index i = 0; i < e_img_loc.size(); ++i)
      rec.v_db.push_back(static_cast<float>(e_img_loc[i]));
    db.records.push_back(std::move(rec));
  }
  std::sort(db.records.begin(), db.records.end(),
            [](const DbRecord& a, const DbRecord& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < db.records.size(); ++i)
    if (db.records[i - 1].id == db.records[i].id)
      throw std::invalid_argument("build_database: duplicate id '" + db.records[i].id + "'");
  return db;
}

NeighborResult query_neighbors(const Eigen::VectorXd& query_visual, const Database& db, int k) {
  if (db.records.empty()) throw std::invalid_argument("query_neighbors: empty database");
  if (k < 1 || static_cast<std::size_t>(k) > db.records.size())
    throw std::invalid_argument("query_neighbors: k out of range");
  if (query_visual.size() != db.visual_dim)
    throw std::invalid_argument("query_neighbors: query width " +
                                std::to_string(query_visual.size()) + ", database expects " +
                                std::to_string(db.visual_dim));
  const double qn = query_visual.norm();
  if (!(qn > 1e-12)) throw std::domain_error("query_neighbors: zero-norm query");
  const Eigen::VectorXd q = query_visual / qn;

  std::vector<Neighbor> ranked;
  ranked.reserve(db.records.size());
  for (const auto& rec : db.records) {
    Eigen::VectorXd v(db.visual_dim);
    for (int i = 0; i < db.visual_dim; ++i) v[i] = static_cast<double>(rec.v_db[i]);
    const double vn = v.norm();
    if (!(vn > 1e-12))
      throw std::domain_error("query_neighbors: zero-norm visual segment in '" + rec.id + "'");
    ranked.push_back({rec.id, q.dot(v) / vn, rec.gps});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });

  NeighborResult out;
  out.nearest.assign(ranked.begin(), ranked.begin() + k);
  out.farthest.assign(ranked.end() - k, ranked.end());
  std::sort(out.farthest.begin(), out.farthest.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity < b.similarity;
    return a.id < b.id;
  });
  return out;
}

namespace {

constexpr char kDbMagic[4] = {'G', 'S', 'D', 'B'};
constexpr std::uint32_t kDbVersion = 1;

}  // namespace

void save_database(const Database& db, const std::string& path) {
  db.validate();
  std::ostringstream body(std::ios::binary);
  body.write(kDbMagic, 4);
  write_u32(body, kDbVersion);
  write_u32(body, static_cast<std::uint32_t>(db.visual_dim));
  write_u32(body, static_cast<std::uint32_t>(db.embed_dim));
  write_u64(body, db.records.size());
  for (const auto& rec : db.records) {
    write_string_u16(body, rec.id);
    write_f64(body, rec.gps.latitude());
    write_f64(body, rec.gps.longitude());
    write_string_u32(body, rec.text);
    for (float f : rec.v_db) write_f32(body, f);
  }
  const std::string bytes = body.str();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_database: cannot open '" + path + "'");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  write_u32(os, crc32(bytes.data(), bytes.size()));
  if (!os) throw std::runtime_error("save_database: write failed for '" + path + "'");
}

Database load_database(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("load_database: cannot open '" + path + "'");
  const std::streamsize total = is.tellg();
  if (total < 4 + 4 + 4 + 4 + 8 + 4)
    throw std::runtime_error("load_database: '" + path + "' is truncated");
  is.seekg(0);
  std::string bytes(static_cast<std::size_t>(total), '\0');
  if (!is.read(bytes.data(), total))
    throw std::runtime_error("load_database: read failed for '" + path + "'");

  const std::size_t body_len = bytes.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body_len, 4);
  if (crc32(bytes.data(), body_len) != stored)
    throw std::runtime_error("load_database: checksum failure in '" + path + "'");

  std::istringstream body(bytes.substr(0, body_len), std::ios::binary);
  char magic[4];
  if (!body.read(magic, 4) || std::memcmp(magic, kDbMagic, 4) != 0)
    throw std::runtime_error("load_database: bad magic in '" + path + "'");
  const std::uint32_t version = read_u32(body, "database version");
  if (version != kDbVersion)
    throw std::runtime_error("load_database: unsupported version " + std::to_string(version));
  Database db;
  db.visual_dim = static_cast<int>(read_u32(body, "database D_v"));
  db.embed_dim = static_cast<int>(read_u32(body, "database D_e"));
  const std::uint64_t count = read_u64(body, "database count");
  db.records.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::string id = read_string_u16(body, "record id");
    const double lat = read_f64(body, "record lat");
    const double lon = read_f64(body, "record lon");
    const std::string text = read_string_u32(body, "record text");
    DbRecord rec{id, {}, GpsCoordinate(lat, lon), text};
    rec.v_db.resize(db.vector_dim());
    for (auto& f : rec.v_db) f = read_f32(body, "record vector");
    db.records.push_back(std::move(rec));
  }
  if (body.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("load_database: trailing bytes in '" + path + "'");
  db.validate();
  return db;
}

}  // namespace geosearch
