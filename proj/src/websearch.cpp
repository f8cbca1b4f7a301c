#include "geosearch/websearch.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace geosearch {

std::string truncate_utf8(const std::string& s, std::size_t max_chars) {
  std::size_t chars = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    if (chars == max_chars) break;
    std::size_t step = 1;
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if ((c & 0x80u) == 0x00u) step = 1;
    else if ((c & 0xE0u) == 0xC0u) step = 2;
    else if ((c & 0xF0u) == 0xE0u) step = 3;
    else if ((c & 0xF8u) == 0xF0u) step = 4;
    // Malformed lead bytes advance one byte so truncation still terminates.
    i = std::min(i + step, s.size());
    ++chars;
  }
  return s.substr(0, i);
}

std::vector<WebContext> extract_contexts(const std::vector<SearchHit>& hits, int m) {
  if (m < 0) throw std::invalid_argument("extract_contexts: m must be >= 0");
  std::vector<WebContext> contexts;
  for (const auto& hit : hits) {
    if (static_cast<int>(contexts.size()) == m) break;
    if (hit.raw_text.empty()) continue;
    contexts.push_back({truncate_utf8(hit.raw_text, kContextCharLimit), hit.source_index});
  }
  return contexts;
}

void PromptSpec::validate() const {
  if (coordinate_schedule.empty())
    throw std::invalid_argument("PromptSpec: need at least one prompt variant");
  for (int c : coordinate_schedule)
    if (c < 0) throw std::invalid_argument("PromptSpec: negative coordinate count");
  if (contexts_per_prompt < 0)
    throw std::invalid_argument("PromptSpec: contexts per prompt must be >= 0");
}

std::string prompt_mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::kStandard: return "standard";
    case PromptMode::kBaseline: return "baseline";
    case PromptMode::kNoClosedWorld: return "no-closed-world";
    case PromptMode::kDirectCoordinates: return "direct-coordinates";
  }
  throw std::invalid_argument("prompt_mode_name: unknown mode");
}

namespace {

std::string coordinate_line(const GpsCoordinate& gps) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "- %.6f, %.6f", gps.latitude(), gps.longitude());
  return buf;
}

}  // namespace

std::vector<RenderedPrompt> build_prompts(const NeighborResult& neighbors,
                                          const std::vector<WebContext>& contexts,
                                          const PromptSpec& spec, PromptMode mode) {
  spec.validate();
  const bool use_coords = mode != PromptMode::kNoClosedWorld;
  const bool use_contexts = mode != PromptMode::kBaseline;
  const int richest = static_cast<int>(
      std::max_element(spec.coordinate_schedule.begin(), spec.coordinate_schedule.end()) -
      spec.coordinate_schedule.begin());

  std::vector<RenderedPrompt> prompts;
  for (int variant = 0; variant < spec.variant_count(); ++variant) {
    RenderedPrompt p;
    p.variant_index = variant;
    p.template_version = kPromptTemplateVersion;
    std::ostringstream os;
    os << "You analyze photographs and determine where on Earth they were taken.\n";
    os << "[template " << kPromptTemplateVersion << ", variant " << (variant + 1) << "/"
       << spec.variant_count() << "]\n\n";
    os << "Study the attached photograph carefully: architecture, vegetation, signage, "
          "terrain, and any text visible in the scene.\n";

    if (use_coords) {
      const int want = spec.coordinate_schedule[static_cast<std::size_t>(variant)];
      const int have = static_cast<int>(neighbors.nearest.size());
      const int n_near = std::min(want, have);
      if (n_near > 0) {
        os << "\nGPS coordinates of the most visually similar reference photos:\n";
        for (int i = 0; i < n_near; ++i) {
          os << coordinate_line(neighbors.nearest[static_cast<std::size_t>(i)].gps) << "\n";
          ++p.coordinate_count;
        }
      }
      if (variant == richest && !neighbors.farthest.empty()) {
        os << "\nGPS coordinates of the least similar reference photos (the scene is "
              "unlikely to be near these):\n";
        for (const auto& f : neighbors.farthest) {
          os << coordinate_line(f.gps) << "\n";
          ++p.coordinate_count;
        }
      }
    }

    if (use_contexts && !contexts.empty()) {
      os << "\nText gathered from web pages that contain visually matching images:\n";
      for (std::size_t i = 0; i < contexts.size(); ++i) {
        os << "[" << (i + 1) << "] " << contexts[i].text << "\n";
        ++p.context_count;
      }
    }

    if (mode == PromptMode::kDirectCoordinates) {
      os << "\nAnswer with only the GPS coordinates of the camera location as decimal "
            "degrees in the form \"latitude, longitude\". No other text.\n";
    } else {
      os << "\nAnswer with a concise textual location description — most specific place "
            "name first, then city, region, and country. Do not output GPS coordinates.\n";
    }
    p.text = os.str();
    prompts.push_back(std::move(p));
  }
  return prompts;
}

std::int64_t estimate_tokens(int coordinate_count, int context_count) {
  if (coordinate_count < 0 || context_count < 0)
    throw std::invalid_argument("estimate_tokens: counts must be >= 0");
  return 462 + 19 * static_cast<std::int64_t>(coordinate_count) +
         2070 * static_cast<std::int64_t>(context_count);
}

std::vector<GeneratedLocation> generate_locations(const std::vector<RenderedPrompt>& prompts,
                                                  const std::string& image_ref,
                                                  LmmClient& client, const std::string& model,
                                                  GenerationLog* log) {
  std::vector<GeneratedLocation> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    LmmRequest request;
    request.model = model;
    request.text = prompts[i].text;
    request.image_ref = image_ref;
    request.temperature = 1.0;
    const LmmResponse response = client.generate(request);
    if (log) {
      LmmExchange ex;
      ex.prompt_index = static_cast<int>(i);
      ex.request = request;
      ex.response = response;
      ex.estimated_prompt_tokens =
          estimate_tokens(prompts[i].coordinate_count, prompts[i].context_count);
      log->exchanges.push_back(std::move(ex));
    }
    if (response.text.empty()) {
      if (log)
        log->warnings.push_back("prompt variant " + std::to_string(i + 1) +
                                " returned an empty response; dropped");
      continue;
    }
    out.push_back({static_cast<int>(i), response.text});
  }
  return out;
}

}  // namespace geosearch
