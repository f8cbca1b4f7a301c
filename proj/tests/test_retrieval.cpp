#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "geosearch/io.hpp"
#include "geosearch/retrieval.hpp"
#include "geosearch/rng.hpp"

using namespace geosearch;
using doctest::Approx;

namespace {

EncoderConfig db_encoder() {
  EncoderConfig cfg;
  cfg.visual_dim = 6;
  cfg.embed_dim = 4;
  cfg.rff_features = 4;
  cfg.sigmas = {1.0};
  cfg.location_hidden = 6;
  // Wide head: an untrained narrow head can zero out a whole hidden layer for
  // unlucky inputs, and projecting those throws.
  cfg.head_hidden = 32;
  return cfg;
}

std::vector<FeatureEntry> sample_features(int n, int d_v, std::uint64_t seed) {
  DetRng rng(seed);
  std::vector<FeatureEntry> out;
  for (int i = 0; i < n; ++i) {
    FeatureEntry e;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "id-%04d", i);
    e.id = buf;
    e.visual_feature = Eigen::VectorXd(d_v);
    for (int j = 0; j < d_v; ++j) e.visual_feature[j] = rng.normal();
    e.gps = GpsCoordinate(rng.uniform(-80.0, 80.0), rng.uniform(-179.0, 179.0));
    e.text = "ref " + std::to_string(i);
    out.push_back(std::move(e));
  }
  return out;
}

/// Brute-force ranking over the f32 visual segment, mirroring the public
/// contract: cosine, one descending ranking with ties broken by ascending id;
/// the nearest list is its head and the farthest list its tail, re-ordered
/// ascending. Tail membership (not an independent ascending sort) is what
/// keeps the two lists disjoint whenever 2k <= count.
std::pair<std::vector<Neighbor>, std::vector<Neighbor>> oracle_rank(
    const Eigen::VectorXd& query, const Database& db, int k) {
  Eigen::VectorXd q = query / query.norm();
  std::vector<Neighbor> desc;
  for (const auto& r : db.records) {
    Eigen::VectorXd v(db.visual_dim);
    for (int i = 0; i < db.visual_dim; ++i) v[i] = static_cast<double>(r.v_db[static_cast<std::size_t>(i)]);
    desc.push_back({r.id, q.dot(v) / v.norm(), r.gps});
  }
  std::sort(desc.begin(), desc.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
  std::vector<Neighbor> far(desc.end() - k, desc.end());
  std::sort(far.begin(), far.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity < b.similarity;
    return a.id < b.id;
  });
  desc.resize(static_cast<std::size_t>(k));
  return {desc, far};
}

}  // namespace

TEST_CASE("build_database concatenates visual and projected segments") {
  const EncoderConfig cfg = db_encoder();
  const EncoderModel model = init_parameters(cfg, 300);
  const auto features = sample_features(5, cfg.visual_dim, 1);
  const Database db = build_database(features, model.heads);

  CHECK(db.visual_dim == cfg.visual_dim);
  CHECK(db.embed_dim == cfg.embed_dim);
  REQUIRE(db.records.size() == 5);
  CHECK(db.vector_dim() == static_cast<std::size_t>(cfg.visual_dim + 2 * cfg.embed_dim));

  for (const auto& feat : features) {
    const DbRecord* rec = nullptr;
    for (const auto& r : db.records)
      if (r.id == feat.id) rec = &r;
    REQUIRE(rec != nullptr);
    REQUIRE(rec->v_db.size() == db.vector_dim());
    const auto [e_txt, e_loc] = project_image(feat.visual_feature, model.heads);
    for (int i = 0; i < cfg.visual_dim; ++i)
      CHECK(rec->v_db[static_cast<std::size_t>(i)] == static_cast<float>(feat.visual_feature[i]));
    for (int i = 0; i < cfg.embed_dim; ++i) {
      CHECK(rec->v_db[static_cast<std::size_t>(cfg.visual_dim + i)] == static_cast<float>(e_txt[i]));
      CHECK(rec->v_db[static_cast<std::size_t>(cfg.visual_dim + cfg.embed_dim + i)] ==
            static_cast<float>(e_loc[i]));
    }
  }

  SUBCASE("an empty input yields a valid empty database whose queries fail") {
    const Database empty = build_database({}, model.heads);
    CHECK(empty.records.empty());
    empty.validate();
    CHECK_THROWS_AS(query_neighbors(features[0].visual_feature, empty, 1), std::invalid_argument);
  }

  SUBCASE("duplicate ids are rejected") {
    auto dup = features;
    dup.push_back(dup.front());
    CHECK_THROWS_AS(build_database(dup, model.heads), std::invalid_argument);
  }

  SUBCASE("records missing gps are rejected") {
    auto bad = features;
    bad[2].gps.reset();
    CHECK_THROWS_AS(build_database(bad, model.heads), std::invalid_argument);
  }
}

TEST_CASE("query_neighbors reference behaviors") {
  const EncoderConfig cfg = db_encoder();
  const EncoderModel model = init_parameters(cfg, 301);

  SUBCASE("a stored vector is its own nearest neighbor at similarity 1") {
    const auto features = sample_features(8, cfg.visual_dim, 2);
    const Database db = build_database(features, model.heads);
    const auto result = query_neighbors(features[3].visual_feature, db, 2);
    REQUIRE(result.nearest.size() == 2);
    CHECK(result.nearest[0].id == features[3].id);
    CHECK(result.nearest[0].similarity == Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("orthogonal stored vectors land in the farthest set ordered by id") {
    std::vector<FeatureEntry> features;
    for (int i = 0; i < 3; ++i) {
      FeatureEntry e;
      e.id = "axis-" + std::to_string(i);
      e.visual_feature = Eigen::VectorXd::Zero(cfg.visual_dim);
      e.visual_feature[i] = 1.0;
      e.gps = GpsCoordinate(0.0, static_cast<double>(i));
      features.push_back(std::move(e));
    }
    const Database db = build_database(features, model.heads);
    const auto result = query_neighbors(features[0].visual_feature, db, 2);
    REQUIRE(result.farthest.size() == 2);
    CHECK(result.farthest[0].id == "axis-1");  // id tie-break between equal similarities
    CHECK(result.farthest[1].id == "axis-2");
    CHECK(std::abs(result.farthest[0].similarity) <= 1e-9);
    CHECK(result.nearest[0].id == "axis-0");
  }

  SUBCASE("random databases match the full-sort oracle, ties included") {
    auto features = sample_features(200, cfg.visual_dim, 3);
    // Duplicated vectors under fresh ids force similarity ties.
    for (int i = 0; i < 40; ++i) {
      FeatureEntry e = features[static_cast<std::size_t>(i * 3)];
      e.id = "tie-" + std::to_string(i);
      features.push_back(std::move(e));
    }
    const Database db = build_database(features, model.heads);
    DetRng rng(77);
    for (int k : {1, 10, 50}) {
      Eigen::VectorXd query(cfg.visual_dim);
      for (int i = 0; i < cfg.visual_dim; ++i) query[i] = rng.normal();
      const auto result = query_neighbors(query, db, k);
      const auto [near_oracle, far_oracle] = oracle_rank(query, db, k);
      REQUIRE(result.nearest.size() == static_cast<std::size_t>(k));
      REQUIRE(result.farthest.size() == static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) {
        CHECK(result.nearest[static_cast<std::size_t>(i)].id ==
              near_oracle[static_cast<std::size_t>(i)].id);
        CHECK(result.nearest[static_cast<std::size_t>(i)].similarity ==
              near_oracle[static_cast<std::size_t>(i)].similarity);
        CHECK(result.farthest[static_cast<std::size_t>(i)].id ==
              far_oracle[static_cast<std::size_t>(i)].id);
        CHECK(result.farthest[static_cast<std::size_t>(i)].similarity ==
              far_oracle[static_cast<std::size_t>(i)].similarity);
      }
    }
  }

  SUBCASE("ordering is canonical regardless of insertion order") {
    auto features = sample_features(30, cfg.visual_dim, 4);
    auto shuffled = features;
    DetRng rng(9);
    rng.shuffle(shuffled);
    const Database a = build_database(features, model.heads);
    const Database b = build_database(shuffled, model.heads);
    Eigen::VectorXd query(cfg.visual_dim);
    for (int i = 0; i < cfg.visual_dim; ++i) query[i] = rng.normal();
    const auto ra = query_neighbors(query, a, 5);
    const auto rb = query_neighbors(query, b, 5);
    for (int i = 0; i < 5; ++i) {
      CHECK(ra.nearest[static_cast<std::size_t>(i)].id == rb.nearest[static_cast<std::size_t>(i)].id);
      CHECK(ra.farthest[static_cast<std::size_t>(i)].id == rb.farthest[static_cast<std::size_t>(i)].id);
    }
  }

  SUBCASE("similarities stay within [-1, 1] and lists are monotone") {
    const auto features = sample_features(50, cfg.visual_dim, 5);
    const Database db = build_database(features, model.heads);
    DetRng rng(10);
    Eigen::VectorXd query(cfg.visual_dim);
    for (int i = 0; i < cfg.visual_dim; ++i) query[i] = rng.normal();
    const auto result = query_neighbors(query, db, 20);
    for (std::size_t i = 0; i < result.nearest.size(); ++i) {
      CHECK(result.nearest[i].similarity >= -1.0 - 1e-9);
      CHECK(result.nearest[i].similarity <= 1.0 + 1e-9);
      if (i > 0) CHECK(result.nearest[i].similarity <= result.nearest[i - 1].similarity);
    }
    for (std::size_t i = 1; i < result.farthest.size(); ++i)
      CHECK(result.farthest[i].similarity >= result.farthest[i - 1].similarity);
    // 2k <= count keeps the two lists disjoint.
    for (const auto& n : result.nearest)
      for (const auto& f : result.farthest) CHECK(n.id != f.id);
  }

  SUBCASE("queries never mutate stored vectors") {
    const auto features = sample_features(10, cfg.visual_dim, 6);
    const Database db = build_database(features, model.heads);
    const std::vector<float> before = db.records[0].v_db;
    (void)query_neighbors(features[1].visual_feature, db, 3);
    CHECK(db.records[0].v_db == before);
  }

  SUBCASE("out-of-range k is rejected") {
    const auto features = sample_features(4, cfg.visual_dim, 7);
    const Database db = build_database(features, model.heads);
    CHECK_THROWS_AS(query_neighbors(features[0].visual_feature, db, 0), std::invalid_argument);
    CHECK_THROWS_AS(query_neighbors(features[0].visual_feature, db, 5), std::invalid_argument);
    CHECK_THROWS_AS(query_neighbors(Eigen::VectorXd::Ones(3), db, 2), std::invalid_argument);
  }
}

TEST_CASE("database files round-trip with checksum protection") {
  const auto dir = std::filesystem::temp_directory_path() / "gs_retrieval_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "db.gsdb").string();

  const EncoderConfig cfg = db_encoder();
  const EncoderModel model = init_parameters(cfg, 302);
  const Database db = build_database(sample_features(12, cfg.visual_dim, 8), model.heads);
  save_database(db, path);
  const Database loaded = load_database(path);

  CHECK(loaded.visual_dim == db.visual_dim);
  CHECK(loaded.embed_dim == db.embed_dim);
  REQUIRE(loaded.records.size() == db.records.size());
  for (std::size_t i = 0; i < db.records.size(); ++i) {
    CHECK(loaded.records[i].id == db.records[i].id);
    CHECK(loaded.records[i].v_db == db.records[i].v_db);
    CHECK(loaded.records[i].gps.latitude() == db.records[i].gps.latitude());
    CHECK(loaded.records[i].gps.longitude() == db.records[i].gps.longitude());
    CHECK(loaded.records[i].text == db.records[i].text);
  }

  SUBCASE("an empty database round-trips") {
    const std::string empty_path = (dir / "empty.gsdb").string();
    Database empty;
    empty.visual_dim = 3;
    empty.embed_dim = 2;
    save_database(empty, empty_path);
    const Database back = load_database(empty_path);
    CHECK(back.records.empty());
    CHECK(back.visual_dim == 3);
  }

  SUBCASE("a flipped payload byte fails the checksum") {
    std::string bytes = read_text_file(path);
    bytes[bytes.size() / 2] ^= 0x20;
    write_text_file(path, bytes);
    CHECK_THROWS_WITH_AS(load_database(path), doctest::Contains("checksum"), std::runtime_error);
  }

  SUBCASE("a wrong magic fails fast") {
    std::string bytes = read_text_file(path);
    bytes[0] = 'Z';
    write_text_file(path, bytes);
    CHECK_THROWS_AS(load_database(path), std::runtime_error);
  }

  SUBCASE("truncation is detected") {
    std::string bytes = read_text_file(path);
    bytes.resize(bytes.size() - 7);
    write_text_file(path, bytes);
    CHECK_THROWS_AS(load_database(path), std::runtime_error);
  }

  std::filesystem::remove_all(dir);
}
