#include "llmrg/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include <fmt/format.h>

#include "json.hpp"
#include "llmrg/assets.hpp"
#include "llmrg/digest.hpp"

using nlohmann::json;

namespace llmrg::prompting {

using backends::ChatRequest;
using backends::Message;
using backends::Role;

const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::no_list_found: return "no_list_found";
    case ParseErrorKind::empty_list: return "empty_list";
    case ParseErrorKind::no_id_found: return "no_id_found";
    case ParseErrorKind::id_out_of_range: return "id_out_of_range";
    case ParseErrorKind::no_box_found: return "no_box_found";
  }
  return "no_id_found";
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(std::string_view s, std::string_view chars = " \t\r\n") {
  const auto b = s.find_first_not_of(chars);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(chars);
  return std::string(s.substr(b, e - b + 1));
}

std::string escape_quotes(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\n' || c == '\r') {
      out += ' ';
      continue;
    }
    out += c;
    if (c == '\'') out += '\'';
  }
  return out;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

/// Parses a digit run; values too large to be an id become nullopt-free sentinels.
long long to_id(std::string_view digits, bool negative) {
  if (digits.size() > 9) return std::numeric_limits<long long>::max();
  long long v = 0;
  std::from_chars(digits.data(), digits.data() + digits.size(), v);
  return negative ? -v : v;
}

std::optional<long long> answer_in_line(std::string_view line) {
  const std::string low = lower(std::string(line));
  std::optional<long long> found;
  for (std::size_t pos = low.find("answer"); pos != std::string::npos; pos = low.find("answer", pos + 1)) {
    std::size_t i = pos + 6;
    auto skip = [&](std::string_view set) {
      while (i < low.size() && set.find(low[i]) != std::string_view::npos) ++i;
    };
    skip(" \t*_");
    if (i >= low.size() || low[i] != ':') continue;
    ++i;
    skip(" \t*_[(#`");
    if (low.compare(i, 2, "id") == 0) {
      i += 2;
      skip(" \t#:=");
    }
    if (low.compare(i, 6, "object") == 0) {
      i += 6;
      skip(" \t#:=");
    }
    bool negative = false;
    if (i < low.size() && low[i] == '-') {
      negative = true;
      ++i;
    }
    const std::size_t start = i;
    while (i < low.size() && is_digit(low[i])) ++i;
    if (i == start) continue;
    found = to_id(std::string_view(low).substr(start, i - start), negative);
  }
  return found;
}

std::string_view final_sentence(std::string_view text) {
  std::size_t end = text.size();
  while (end > 0 && std::string_view(" \t\r\n.!?*\"'`)").find(text[end - 1]) != std::string_view::npos) --end;
  text = text.substr(0, end);
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') start = i + 1;
    else if ((c == '.' || c == '!' || c == '?') && i + 1 < text.size() && std::isspace(static_cast<unsigned char>(text[i + 1])))
      start = i + 1;
  }
  return text.substr(start);
}

std::optional<long long> last_standalone_integer(std::string_view s) {
  std::optional<long long> found;
  int depth = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '[') ++depth;
    else if (c == ']' && depth > 0) --depth;
    if (!is_digit(c)) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    if (depth > 0) continue;
    const bool left_ok = start == 0 || !(is_word(s[start - 1]) || s[start - 1] == '.');
    const bool right_ok = i == s.size() || !(is_word(s[i]) || (s[i] == '.' && i + 1 < s.size() && is_digit(s[i + 1])));
    if (left_ok && right_ok) found = to_id(s.substr(start, i - start), false);
  }
  return found;
}

}  // namespace

// -- Stage A ----------------------------------------------------------------------

ChatRequest build_category_prompt(const std::string& expression, const std::string& model_name) {
  if (trim(expression).empty()) throw std::invalid_argument("category prompt needs a non-empty expression");
  ChatRequest req;
  req.model_name = model_name;
  req.max_tokens = 128;
  req.messages.push_back({Role::user, render_template(assets::text(assets::category_template()), {{"expression", expression}}), {}});
  return req;
}

std::vector<std::string> parse_category_response(const std::string& text) {
  const auto open = text.find('[');
  const auto close = open == std::string::npos ? std::string::npos : text.find(']', open + 1);
  if (close == std::string::npos) throw ParseError(ParseErrorKind::no_list_found, "no bracketed list in reply", text);

  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string_view body(text.data() + open + 1, close - open - 1);
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto comma = body.find(',', pos);
    if (comma == std::string_view::npos) comma = body.size();
    std::string item = lower(trim(body.substr(pos, comma - pos), " \t\r\n\"'`[]"));
    if (!item.empty() && seen.insert(item).second) out.push_back(std::move(item));
    pos = comma + 1;
  }
  if (out.empty()) throw ParseError(ParseErrorKind::empty_list, "category list is empty", text);
  return out;
}

// -- Records ----------------------------------------------------------------------

std::string serialize_record(const ObjectRecord& r) {
  if (r.depth) {
    return fmt::format("[{}, '{}', '{}', [{}, {}, {:.1f}]]", r.id, escape_quotes(r.name), escape_quotes(r.caption),
                       r.location2d.x, r.location2d.y, *r.depth);
  }
  return fmt::format("[{}, '{}', '{}', [{}, {}]]", r.id, escape_quotes(r.name), escape_quotes(r.caption), r.location2d.x,
                     r.location2d.y);
}

std::vector<int> extract_record_ids(std::string_view block) {
  std::vector<int> ids;
  std::size_t start = 0;
  while (start <= block.size()) {
    auto nl = block.find('\n', start);
    if (nl == std::string_view::npos) nl = block.size();
    std::string_view line = block.substr(start, nl - start);
    if (line.size() > 1 && line[0] == '[') {
      std::size_t i = 1;
      while (i < line.size() && is_digit(line[i])) ++i;
      if (i > 1 && i < line.size() && line[i] == ',') ids.push_back(static_cast<int>(to_id(line.substr(1, i - 1), false)));
    }
    start = nl + 1;
  }
  return ids;
}

// -- Exemplars --------------------------------------------------------------------

std::vector<Exemplar> parse_exemplars(std::string_view json_text) {
  const json j = json::parse(json_text);
  if (!j.is_array()) throw std::invalid_argument("exemplar library must be a JSON array");
  std::vector<Exemplar> out;
  for (const auto& e : j) {
    Exemplar ex;
    ex.scene_records = e.at("scene_records").get<std::vector<std::string>>();
    ex.expression = e.at("expression").get<std::string>();
    ex.answer_id = e.at("answer_id").get<int>();
    ex.rationale = e.at("rationale").get<std::string>();
    std::string block;
    for (const auto& line : ex.scene_records) block += line + "\n";
    const auto ids = extract_record_ids(block);
    if (std::find(ids.begin(), ids.end(), ex.answer_id) == ids.end()) {
      throw std::invalid_argument(fmt::format("exemplar answer {} is not among its record ids", ex.answer_id));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Exemplar> load_exemplars(const std::string& path) { return parse_exemplars(read_file_text(path)); }

const std::vector<Exemplar>& default_exemplars() {
  static const std::vector<Exemplar> library = parse_exemplars(assets::default_exemplars());
  return library;
}

// -- Stage D ----------------------------------------------------------------------

PromptBundle build_grounding_bundle(std::span<const ObjectRecord> records, const std::string& expression,
                                    std::span<const Exemplar> exemplars, const GroundingMode& mode) {
  if (records.empty()) throw std::invalid_argument("grounding prompt needs at least one record");
  PromptBundle b;
  b.system_text = assets::text(assets::grounding_system_template());

  const std::string example_tmpl = assets::text(assets::grounding_example_template());
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    const auto& ex = exemplars[i];
    std::string lines;
    for (std::size_t k = 0; k < ex.scene_records.size(); ++k) lines += (k ? "\n" : "") + ex.scene_records[k];
    b.exemplars.push_back(render_template(example_tmpl, {{"index", std::to_string(i + 1)},
                                                         {"objects", lines},
                                                         {"expression", ex.expression},
                                                         {"rationale", ex.rationale},
                                                         {"answer_id", std::to_string(ex.answer_id)}}));
  }

  std::vector<const ObjectRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (std::size_t i = 0; i < sorted.size(); ++i) b.scene_block += (i ? "\n" : "") + serialize_record(*sorted[i]);

  b.question_text = expression;
  if (mode.chain_of_thought) b.cot_instruction = assets::text(assets::grounding_cot_template());
  return b;
}

ChatRequest to_request(const PromptBundle& b, const std::string& model_name) {
  std::string examples;
  for (const auto& e : b.exemplars) examples += e + "\n\n";
  const std::string instruction =
      b.cot_instruction.empty() ? assets::text(assets::grounding_reminder_template()) : b.cot_instruction;
  ChatRequest req;
  req.model_name = model_name;
  req.messages.push_back({Role::system, b.system_text, {}});
  req.messages.push_back({Role::user,
                          render_template(assets::text(assets::grounding_user_template()),
                                          {{"examples", examples},
                                           {"objects", b.scene_block},
                                           {"expression", b.question_text},
                                           {"instruction", instruction}}),
                          {}});
  return req;
}

ChatRequest build_grounding_prompt(std::span<const ObjectRecord> records, const std::string& expression,
                                   std::span<const Exemplar> exemplars, const GroundingMode& mode,
                                   const std::string& model_name) {
  return to_request(build_grounding_bundle(records, expression, exemplars, mode), model_name);
}

ChatRequest with_reminder(const ChatRequest& prior, const std::string& reply) {
  ChatRequest req = prior;
  req.messages.push_back({Role::assistant, reply, {}});
  req.messages.push_back({Role::user, assets::text(assets::grounding_reminder_template()), {}});
  return req;
}

int parse_grounding_response(const std::string& text, std::span<const int> valid_ids) {
  if (valid_ids.empty()) throw std::invalid_argument("valid_ids must be non-empty");

  std::optional<long long> id;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    if (auto found = answer_in_line(std::string_view(text).substr(start, nl - start))) id = found;
    start = nl + 1;
  }
  if (!id) id = last_standalone_integer(final_sentence(text));
  if (!id) throw ParseError(ParseErrorKind::no_id_found, "no object id in reply", text);

  const bool ok = std::any_of(valid_ids.begin(), valid_ids.end(), [&](int v) { return v == *id; });
  if (!ok) throw ParseError(ParseErrorKind::id_out_of_range, fmt::format("id {} is not a candidate", *id), text);
  return static_cast<int>(*id);
}

// -- Baselines ----------------------------------------------------------------------

ChatRequest build_naive_vlm_prompt(const std::string& expression, const image::EncodedImage& full_image, ImageSize size,
                                   const std::string& model_name) {
  ChatRequest req;
  req.model_name = model_name;
  req.messages.push_back({Role::user,
                          render_template(assets::text(assets::naive_vlm_template()),
                                          {{"expression", expression},
                                           {"width", std::to_string(size.width)},
                                           {"height", std::to_string(size.height)}}),
                          full_image});
  return req;
}

BBox2D parse_box_response(const std::string& text) {
  for (std::size_t open = text.find('['); open != std::string::npos; open = text.find('[', open + 1)) {
    const auto close = text.find(']', open + 1);
    if (close == std::string::npos) break;
    std::string_view body(text.data() + open + 1, close - open - 1);
    std::vector<double> nums;
    bool ok = true;
    std::size_t pos = 0;
    while (ok && pos <= body.size()) {
      auto comma = body.find(',', pos);
      if (comma == std::string_view::npos) comma = body.size();
      const std::string item = trim(body.substr(pos, comma - pos));
      double v = 0.0;
      const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
      if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size() || !std::isfinite(v)) ok = false;
      else nums.push_back(v);
      pos = comma + 1;
    }
    if (!ok || nums.size() != 4) continue;
    const BBox2D box{nums[0], nums[1], nums[2], nums[3]};
    if (box.x2 > box.x1 && box.y2 > box.y1) return box;
  }
  throw ParseError(ParseErrorKind::no_box_found, "no [x1, y1, x2, y2] box in reply", text);
}

ChatRequest build_crops_vlm_prompt(const std::string& expression, std::span<const CropCandidate> crops,
                                   const std::string& model_name) {
  ChatRequest req;
  req.model_name = model_name;
  for (const auto& c : crops) req.messages.push_back({Role::user, fmt::format("Object {} ({}):", c.id, c.label), c.crop});
  req.messages.push_back(
      {Role::user, render_template(assets::text(assets::crops_vlm_template()), {{"expression", expression}}), {}});
  return req;
}

ChatRequest build_boxes_captions_vlm_prompt(std::span<const ObjectRecord> records, const std::string& expression,
                                            const image::EncodedImage& annotated_image, const std::string& model_name) {
  std::string lines;
  for (std::size_t i = 0; i < records.size(); ++i) {
    lines += fmt::format("{}[{}, '{}', '{}']", i ? "\n" : "", records[i].id, escape_quotes(records[i].name),
                         escape_quotes(records[i].caption));
  }
  ChatRequest req;
  req.model_name = model_name;
  req.messages.push_back({Role::user,
                          render_template(assets::text(assets::boxes_captions_vlm_template()),
                                          {{"objects", lines}, {"expression", expression}}),
                          annotated_image});
  return req;
}

}  // namespace llmrg::prompting
