// Writes a self-contained demo dataset (features, weights, database, matches,
// gallery, fixtures, config) so the pipeline can run end to end offline.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <iostream>

#include "demo_data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the offline demo dataset"};
  geosearch::demo::DemoSuiteConfig cfg;
  app.add_option("--dir", cfg.dir, "Output directory")->required();
  app.add_option("--queries", cfg.query_count, "Number of query images");
  app.add_option("--db-size", cfg.db_size, "Number of reference records");
  app.add_option("--visual-dim", cfg.visual_dim, "Backbone feature width");
  app.add_option("--embed-dim", cfg.embed_dim, "Embedding width");
  app.add_option("--seed", cfg.seed, "World seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto suite = geosearch::demo::write_demo_suite(cfg);
    std::cout << nlohmann::json{{"dir", suite.dir},
                                {"config", suite.config_path},
                                {"queries", suite.places.size()}}
                     .dump()
              << "\n";
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
