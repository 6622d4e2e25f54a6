#pragma once

#include <string>
#include <string_view>

// Versioned prompt templates and the default exemplar library, compiled in from data/.
namespace llmrg::assets {

std::string_view caption_template();
std::string_view category_template();
std::string_view grounding_system_template();
std::string_view grounding_user_template();
std::string_view grounding_example_template();
std::string_view grounding_cot_template();
std::string_view grounding_reminder_template();
std::string_view naive_vlm_template();
std::string_view crops_vlm_template();
std::string_view boxes_captions_vlm_template();
std::string_view default_exemplars();

/// Template body without the file's trailing newline.
inline std::string text(std::string_view raw) {
  std::string out(raw);
  if (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

}  // namespace llmrg::assets
