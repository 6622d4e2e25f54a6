#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "llmrg/backends.hpp"
#include "llmrg/image.hpp"
#include "llmrg/scene.hpp"

namespace llmrg::prompting {

enum class ParseErrorKind { no_list_found, empty_list, no_id_found, id_out_of_range, no_box_found };

const char* to_string(ParseErrorKind kind);

struct ParseError : std::runtime_error {
  ParseError(ParseErrorKind kind, const std::string& message, std::string raw)
      : std::runtime_error(message), kind(kind), raw(std::move(raw)) {}
  ParseErrorKind kind;
  std::string raw;
};

/// Single-pass `{name}` substitution. Unknown placeholders are left as-is and
/// substituted values are never rescanned.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

// -- Stage A: category extraction ---------------------------------------------

backends::ChatRequest build_category_prompt(const std::string& expression, const std::string& model_name = {});

/// First bracketed list in the reply, lowercased, unquoted and deduplicated in order.
std::vector<std::string> parse_category_response(const std::string& text);

// -- Records --------------------------------------------------------------------

/// `[id, 'name', 'caption', [x, y]]`, or `[x, y, z]` with z at 0.1 m when the record
/// carries a depth. Single quotes are escaped by doubling.
std::string serialize_record(const ObjectRecord& record);

/// Record ids found at the start of each serialized line, in order of appearance.
std::vector<int> extract_record_ids(std::string_view scene_block);

// -- Stage D: grounding ---------------------------------------------------------

struct Exemplar {
  std::vector<std::string> scene_records;
  std::string expression;
  int answer_id = 0;
  std::string rationale;
};

/// Parses a JSON array of exemplars and checks that each answer id is among its records.
std::vector<Exemplar> parse_exemplars(std::string_view json_text);
std::vector<Exemplar> load_exemplars(const std::string& path);
const std::vector<Exemplar>& default_exemplars();

struct GroundingMode {
  bool chain_of_thought = true;
};

struct PromptBundle {
  std::string system_text;
  std::vector<std::string> exemplars;
  std::string scene_block;
  std::string question_text;
  std::string cot_instruction;
};

PromptBundle build_grounding_bundle(std::span<const ObjectRecord> records, const std::string& expression,
                                    std::span<const Exemplar> exemplars, const GroundingMode& mode);

backends::ChatRequest to_request(const PromptBundle& bundle, const std::string& model_name = {});

backends::ChatRequest build_grounding_prompt(std::span<const ObjectRecord> records, const std::string& expression,
                                             std::span<const Exemplar> exemplars, const GroundingMode& mode,
                                             const std::string& model_name = {});

/// The prior conversation plus the model's reply and a terse answer-format reminder.
backends::ChatRequest with_reminder(const backends::ChatRequest& prior, const std::string& reply);

/// Last `ANSWER: <int>` line, else the last standalone integer of the final sentence.
/// The id must be in valid_ids.
int parse_grounding_response(const std::string& text, std::span<const int> valid_ids);

// -- Baseline variants ----------------------------------------------------------

backends::ChatRequest build_naive_vlm_prompt(const std::string& expression, const image::EncodedImage& full_image,
                                             ImageSize size, const std::string& model_name = {});

/// First `[x1, y1, x2, y2]` with x2 > x1 and y2 > y1.
BBox2D parse_box_response(const std::string& text);

struct CropCandidate {
  int id = 0;
  std::string label;
  image::EncodedImage crop;
};

backends::ChatRequest build_crops_vlm_prompt(const std::string& expression, std::span<const CropCandidate> crops,
                                             const std::string& model_name = {});

/// Annotated full image plus `[id, 'name', 'caption']` lines (no coordinates).
backends::ChatRequest build_boxes_captions_vlm_prompt(std::span<const ObjectRecord> records, const std::string& expression,
                                                      const image::EncodedImage& annotated_image,
                                                      const std::string& model_name = {});

}  // namespace llmrg::prompting
