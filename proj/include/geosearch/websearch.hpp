#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geosearch/clients.hpp"
#include "geosearch/retrieval.hpp"

namespace geosearch {

/// Stamped into every rendered prompt so logs identify the wording in use.
inline constexpr const char* kPromptTemplateVersion = "geosearch-prompt/1";

/// Web page text capped at 2000 characters (code points, never split bytes).
struct WebContext {
  std::string text;
  int source_index = 0;
};

inline constexpr std::size_t kContextCharLimit = 2000;

/// Cut after `max_chars` code points, always on a UTF-8 boundary.
std::string truncate_utf8(const std::string& s, std::size_t max_chars);

/// First m non-empty hit texts in hit order, truncated.
std::vector<WebContext> extract_contexts(const std::vector<SearchHit>& hits, int m);

struct PromptSpec {
  std::vector<int> coordinate_schedule = {0, 5, 10, 15};  // nearest coords per variant
  int contexts_per_prompt = 5;                            // m

  int variant_count() const { return static_cast<int>(coordinate_schedule.size()); }
  void validate() const;
};

enum class PromptMode {
  kStandard,           // coordinates + contexts, description output
  kBaseline,           // closed-world only: no web contexts
  kNoClosedWorld,      // no coordinates
  kDirectCoordinates,  // instructs raw "lat, lon" output
};

std::string prompt_mode_name(PromptMode mode);

struct RenderedPrompt {
  std::string text;
  int variant_index = 0;
  int coordinate_count = 0;  // n_c actually embedded
  int context_count = 0;     // n_l actually embedded
  std::string template_version;
};

/// Pure function of its inputs: variant i embeds schedule[i] nearest
/// coordinates, the richest variant also lists the farthest set, and every
/// variant carries the same m contexts.
std::vector<RenderedPrompt> build_prompts(const NeighborResult& neighbors,
                                          const std::vector<WebContext>& contexts,
                                          const PromptSpec& spec, PromptMode mode);

/// 462 + 19 n_c + 2070 n_l, the per-call cost model.
std::int64_t estimate_tokens(int coordinate_count, int context_count);

struct GeneratedLocation {
  int prompt_index = 0;
  std::string description;
};

struct LmmExchange {
  int prompt_index = 0;
  LmmRequest request;
  LmmResponse response;
  std::int64_t estimated_prompt_tokens = 0;
};

struct GenerationLog {
  std::vector<LmmExchange> exchanges;
  std::vector<std::string> warnings;
};

/// One LMM call per prompt; empty responses are dropped with a warning.
std::vector<GeneratedLocation> generate_locations(const std::vector<RenderedPrompt>& prompts,
                                                  const std::string& image_ref,
                                                  LmmClient& client, const std::string& model,
                                                  GenerationLog* log = nullptr);

}  // namespace geosearch
