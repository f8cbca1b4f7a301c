#include "geosearch/features.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "geosearch/io.hpp"

namespace geosearch {

using nlohmann::json;

const FeatureEntry* FeatureStore::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

namespace {

std::vector<float> read_blob(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("feature store: cannot open '" + path + "'");
  const std::streamsize bytes = is.tellg();
  if (bytes % 4 != 0)
    throw std::runtime_error("feature store: '" + path + "' is not a whole number of floats");
  is.seekg(0);
  std::vector<float> blob(static_cast<std::size_t>(bytes / 4));
  for (auto& f : blob) f = read_f32(is, "feature blob");
  return blob;
}

Eigen::VectorXd slice(const std::vector<float>& blob, std::uint64_t offset, int dim,
                      const std::string& what) {
  if (offset + static_cast<std::uint64_t>(dim) > blob.size())
    throw std::runtime_error("feature store: " + what + " runs past the end of the blob");
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = static_cast<double>(blob[offset + i]);
  return v;
}

}  // namespace

FeatureStore load_feature_store(const std::string& prefix) {
  json idx;
  try {
    idx = json::parse(read_text_file(prefix + ".idx.json"));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("feature store: bad index json: " + std::string(e.what()));
  }
  if (!idx.contains("d_v") || !idx.contains("count") || !idx.contains("visual_offsets"))
    throw std::runtime_error("feature store: index is missing d_v/count/visual_offsets");
  const int d_v = idx.at("d_v").get<int>();
  const std::size_t count = idx.at("count").get<std::size_t>();
  if (d_v <= 0) throw std::runtime_error("feature store: d_v must be positive");
  const auto visual_offsets = idx.at("visual_offsets").get<std::vector<std::uint64_t>>();
  std::vector<std::uint64_t> text_offsets;
  const bool has_text = idx.contains("text_offsets") && !idx.at("text_offsets").is_null();
  if (has_text) text_offsets = idx.at("text_offsets").get<std::vector<std::uint64_t>>();
  if (visual_offsets.size() != count || (has_text && text_offsets.size() != count))
    throw std::runtime_error("feature store: offset table length does not match count");

  const std::vector<float> blob = read_blob(prefix + ".f32");

  std::ifstream meta(prefix + ".ndjson");
  if (!meta) throw std::runtime_error("feature store: cannot open '" + prefix + ".ndjson'");
  FeatureStore store;
  store.visual_dim = d_v;
  store.has_text_features = has_text;
  std::string line;
  std::size_t row = 0;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    if (row >= count)
      throw std::runtime_error("feature store: more metadata lines than indexed records");
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("feature store: bad metadata line " + std::to_string(row + 1) +
                               ": " + std::string(e.what()));
    }
    FeatureEntry entry;
    entry.id = rec.at("id").get<std::string>();
    const bool has_lat = rec.contains("lat") && !rec.at("lat").is_null();
    const bool has_lon = rec.contains("lon") && !rec.at("lon").is_null();
    if (has_lat != has_lon)
      throw std::runtime_error("feature store: record '" + entry.id +
                               "' has only one of lat/lon");
    if (has_lat)
      entry.gps = GpsCoordinate(rec.at("lat").get<double>(), rec.at("lon").get<double>());
    if (rec.contains("text") && !rec.at("text").is_null())
      entry.text = rec.at("text").get<std::string>();
    entry.visual_feature = slice(blob, visual_offsets[row], d_v, "visual vector of '" + entry.id + "'");
    if (has_text)
      entry.text_feature = slice(blob, text_offsets[row], d_v, "text vector of '" + entry.id + "'");
    store.entries.push_back(std::move(entry));
    ++row;
  }
  if (row != count)
    throw std::runtime_error("feature store: expected " + std::to_string(count) +
                             " records, found " + std::to_string(row));
  return store;
}

void save_feature_store(const FeatureStore& store, const std::string& prefix) {
  if (store.visual_dim <= 0)
    throw std::invalid_argument("feature store: visual_dim must be positive");
  std::ofstream meta(prefix + ".ndjson");
  std::ofstream blob(prefix + ".f32", std::ios::binary);
  if (!meta || !blob)
    throw std::runtime_error("feature store: cannot write files with prefix '" + prefix + "'");
  std::vector<std::uint64_t> visual_offsets, text_offsets;
  std::uint64_t cursor = 0;
  for (const auto& entry : store.entries) {
    if (entry.visual_feature.size() != store.visual_dim)
      throw std::invalid_argument("feature store: record '" + entry.id +
                                  "' visual feature has wrong width");
    if (store.has_text_features && entry.text_feature.size() != store.visual_dim)
      throw std::invalid_argument("feature store: record '" + entry.id +
                                  "' text feature has wrong width");
    json rec;
    rec["id"] = entry.id;
    if (entry.gps) {
      rec["lat"] = entry.gps->latitude();
      rec["lon"] = entry.gps->longitude();
    } else {
      rec["lat"] = nullptr;
      rec["lon"] = nullptr;
    }
    rec["text"] = entry.text;
    meta << rec.dump() << "\n";
    visual_offsets.push_back(cursor);
    for (Eigen::Index i = 0; i < entry.visual_feature.size(); ++i)
      write_f32(blob, static_cast<float>(entry.visual_feature[i]));
    cursor += static_cast<std::uint64_t>(store.visual_dim);
    if (store.has_text_features) {
      text_offsets.push_back(cursor);
      for (Eigen::Index i = 0; i < entry.text_feature.size(); ++i)
        write_f32(blob, static_cast<float>(entry.text_feature[i]));
      cursor += static_cast<std::uint64_t>(store.visual_dim);
    }
  }
  json idx;
  idx["d_v"] = store.visual_dim;
  idx["count"] = store.entries.size();
  idx["visual_offsets"] = visual_offsets;
  if (store.has_text_features)
    idx["text_offsets"] = text_offsets;
  else
    idx["text_offsets"] = nullptr;
  write_text_file(prefix + ".idx.json", idx.dump(2) + "\n");
  if (!meta || !blob)
    throw std::runtime_error("feature store: write failed for prefix '" + prefix + "'");
}

void require_training_fields(const FeatureStore& store) {
  if (!store.has_text_features)
    throw std::runtime_error("feature store: training needs text features, none present");
  for (const auto& e : store.entries) {
    if (!e.gps)
      throw std::runtime_error("feature store: training record '" + e.id + "' has no gps");
    if (e.text.empty())
      throw std::runtime_error("feature store: training record '" + e.id + "' has no text");
  }
}

void require_gps(const FeatureStore& store) {
  for (const auto& e : store.entries)
    if (!e.gps) throw std::runtime_error("feature store: record '" + e.id + "' has no gps");
}

}  // namespace geosearch
