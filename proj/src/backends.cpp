#include "llmrg/backends.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <fnmatch.h>

#include "httplib.h"
#include "llmrg/assets.hpp"
#include "llmrg/dataset.hpp"
#include "llmrg/digest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace llmrg::backends {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool is_hex_digest(const std::string& s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
}

struct Endpoint {
  std::string origin;
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw BackendError(ErrorKind::malformed, "endpoint must be an http(s) URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

httplib::Headers auth_headers(const BackendDescriptor& d) {
  httplib::Headers headers;
  if (d.auth_env.empty()) return headers;
  const char* key = std::getenv(d.auth_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw BackendError(ErrorKind::auth, fmt::format("environment variable {} is not set", d.auth_env));
  }
  headers.emplace("Authorization", std::string("Bearer ") + key);
  return headers;
}

/// POSTs a JSON body with the retry policy. Returns the response body of the first 2xx reply.
std::string post_with_retries(const BackendDescriptor& d, const RetryPolicy& retry, const std::string& body,
                              std::atomic<std::size_t>* network_counter, int& attempts_out) {
  const Endpoint ep = split_url(d.endpoint);
  const httplib::Headers headers = auth_headers(d);
  const int max_attempts = std::max(1, retry.max_attempts);

  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    attempts_out = attempt;
    if (attempt > 1) {
      const double wait_s = retry.backoff_base_s * std::pow(retry.backoff_factor, attempt - 2);
      std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    }
    httplib::Client client(ep.origin);
    const auto timeout = std::chrono::duration<double>(d.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    if (network_counter) ++*network_counter;

    auto res = client.Post(ep.path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw BackendError(ErrorKind::auth, fmt::format("{} rejected credentials (HTTP {})", d.endpoint, res->status), attempt);
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw BackendError(ErrorKind::malformed, fmt::format("{} returned HTTP {}", d.endpoint, res->status), attempt,
                         res->body);
    }
    return res->body;
  }
  throw BackendError(ErrorKind::transport,
                     fmt::format("{} unreachable after {} attempts: {}", d.endpoint, max_attempts, last_error), max_attempts);
}

json message_canonical(const Message& m) {
  json j{{"role", to_string(m.role)}, {"text", m.text}};
  if (m.image) {
    j["image_sha256"] = sha256_hex(m.image->bytes);
    j["image_mime"] = m.image->mime;
  }
  return j;
}

}  // namespace

const char* to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

void check_request(const ChatRequest& request) {
  const bool has_user = std::any_of(request.messages.begin(), request.messages.end(),
                                    [](const Message& m) { return m.role == Role::user; });
  if (!has_user) throw std::invalid_argument("chat request needs at least one user message");
  if (!(request.temperature >= 0.0)) throw std::invalid_argument("temperature must be non-negative");
}

json response_to_json(const ChatResponse& r) {
  json j{{"text", r.text}, {"finish_reason", r.finish_reason}, {"latency_ms", r.latency_ms}, {"attempts", r.attempts}};
  if (r.usage) j["usage"] = {{"prompt_tokens", r.usage->prompt_tokens}, {"completion_tokens", r.usage->completion_tokens}};
  return j;
}

ChatResponse response_from_json(const json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  r.finish_reason = j.value("finish_reason", std::string());
  r.latency_ms = j.value("latency_ms", 0.0);
  r.attempts = j.value("attempts", 1);
  if (j.contains("usage")) {
    r.usage = Usage{j["usage"].value("prompt_tokens", 0), j["usage"].value("completion_tokens", 0)};
  }
  return r;
}

const char* to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::chat: return "chat";
    case BackendKind::caption: return "caption";
    case BackendKind::detect: return "detect";
  }
  return "chat";
}

BackendKind backend_kind_from_string(const std::string& text) {
  if (text == "chat") return BackendKind::chat;
  if (text == "caption") return BackendKind::caption;
  if (text == "detect") return BackendKind::detect;
  throw std::invalid_argument("unknown backend kind: " + text);
}

void check_descriptor(const BackendDescriptor& d) {
  if (d.endpoint.empty() == d.script.empty()) {
    throw std::invalid_argument(fmt::format("{} backend needs exactly one of endpoint or script", to_string(d.kind)));
  }
}

json descriptor_to_json(const BackendDescriptor& d) {
  json j{{"kind", to_string(d.kind)}, {"model", d.model_name}};
  if (!d.endpoint.empty()) j["endpoint"] = d.endpoint;
  if (!d.script.empty()) j["script"] = d.script;
  if (!d.auth_env.empty()) j["auth_env"] = d.auth_env;
  j["timeout_s"] = d.timeout_s;
  return j;
}

BackendDescriptor descriptor_from_json(const json& j, BackendKind kind) {
  BackendDescriptor d;
  d.kind = kind;
  if (j.contains("kind") && backend_kind_from_string(j.at("kind").get<std::string>()) != kind) {
    throw std::invalid_argument(fmt::format("backend declared as {} used in the {} slot", j.at("kind").get<std::string>(),
                                            to_string(kind)));
  }
  d.endpoint = j.value("endpoint", std::string());
  d.script = j.value("script", std::string());
  d.model_name = j.value("model", std::string());
  d.auth_env = j.value("auth_env", std::string());
  d.timeout_s = j.value("timeout_s", 120.0);
  check_descriptor(d);
  return d;
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::transport: return "transport";
    case ErrorKind::auth: return "auth";
    case ErrorKind::malformed: return "malformed";
    case ErrorKind::script_miss: return "script_miss";
  }
  return "transport";
}

json canonical_request(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back(message_canonical(m));
  return {{"messages", messages}, {"temperature", request.temperature}, {"max_tokens", request.max_tokens}};
}

std::string prompt_digest(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back(message_canonical(m));
  return sha256_hex(messages.dump());
}

std::string prompt_text(const ChatRequest& request) {
  std::string out;
  for (const auto& m : request.messages) {
    if (!out.empty()) out += "\n\n";
    out += m.text;
  }
  return out;
}

json wire_request(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json msg{{"role", to_string(m.role)}};
    if (m.image) {
      msg["content"] = json::array(
          {{{"type", "text"}, {"text", m.text}},
           {{"type", "image_url"},
            {"image_url", {{"url", fmt::format("data:{};base64,{}", m.image->mime, base64_encode(m.image->bytes))}}}}});
    } else {
      msg["content"] = m.text;
    }
    messages.push_back(std::move(msg));
  }
  return {{"model", request.model_name},
          {"messages", messages},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

CacheKey make_cache_key(BackendKind kind, const std::string& model_name, const json& canonical_payload) {
  const json keyed{{"kind", to_string(kind)}, {"model", model_name}, {"payload", canonical_payload}};
  return {sha256_hex(keyed.dump())};
}

// ---------------------------------------------------------------------------
// HTTP chat

HttpChatBackend::HttpChatBackend(BackendDescriptor descriptor, RetryPolicy retry)
    : descriptor_(std::move(descriptor)), retry_(retry) {}

ChatResponse HttpChatBackend::complete(const ChatRequest& request) {
  check_request(request);
  ++calls_;
  const auto start = Clock::now();
  ChatRequest wire = request;
  if (wire.model_name.empty()) wire.model_name = descriptor_.model_name;

  int attempts = 1;
  const std::string body = post_with_retries(descriptor_, retry_, wire_request(wire).dump(), &network_requests_, attempts);

  ChatResponse out;
  out.attempts = attempts;
  out.latency_ms = ms_since(start);
  try {
    const json j = json::parse(body);
    const json& choice = j.at("choices").at(0);
    const json& content = choice.at("message").at("content");
    if (content.is_string()) {
      out.text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) {
        if (part.value("type", "") == "text") out.text += part.value("text", "");
      }
    } else if (!content.is_null()) {
      throw BackendError(ErrorKind::malformed, "message content has an unexpected type", attempts, body);
    }
    if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
      out.finish_reason = choice["finish_reason"].get<std::string>();
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      out.usage = Usage{j["usage"].value("prompt_tokens", 0), j["usage"].value("completion_tokens", 0)};
    }
  } catch (const json::exception& e) {
    throw BackendError(ErrorKind::malformed, std::string("malformed chat reply: ") + e.what(), attempts, body);
  }
  if (out.text.empty() && out.finish_reason.empty()) {
    throw BackendError(ErrorKind::malformed, "empty chat reply without a finish reason", attempts, body);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scripted chat

Script Script::parse(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  Script s;
  auto add = [&s](const std::string& key, const std::string& response) {
    ScriptEntry e;
    if (is_hex_digest(key)) e.digest = key;
    else e.pattern = key;
    e.response = response;
    s.entries.push_back(std::move(e));
  };
  if (j.is_object() && j.contains("entries")) {
    for (const auto& e : j.at("entries")) {
      ScriptEntry entry;
      if (e.contains("digest")) entry.digest = e.at("digest").get<std::string>();
      if (e.contains("pattern")) entry.pattern = e.at("pattern").get<std::string>();
      if (!entry.digest && !entry.pattern) throw std::invalid_argument("script entry needs a digest or a pattern");
      entry.response = e.at("response").get<std::string>();
      entry.stage = e.value("stage", std::string());
      s.entries.push_back(std::move(entry));
    }
    if (j.contains("default")) s.fallback = j.at("default").get<std::string>();
  } else if (j.is_object()) {
    for (const auto& [key, value] : j.items()) add(key, value.get<std::string>());
  } else {
    throw std::invalid_argument("script must be a JSON object");
  }
  return s;
}

Script Script::load(const std::string& path) {
  try {
    return parse(read_file_text(path));
  } catch (const std::exception& e) {
    throw std::invalid_argument(fmt::format("script {}: {}", path, e.what()));
  }
}

ordered_json Script::to_json() const {
  ordered_json arr = ordered_json::array();
  for (const auto& e : entries) {
    ordered_json j;
    if (e.digest) j["digest"] = *e.digest;
    if (e.pattern) j["pattern"] = *e.pattern;
    j["response"] = e.response;
    if (!e.stage.empty()) j["stage"] = e.stage;
    arr.push_back(std::move(j));
  }
  ordered_json out{{"version", 1}, {"entries", arr}};
  if (fallback) out["default"] = *fallback;
  return out;
}

void Script::save(const std::string& path) const { write_file_atomic(path, to_json().dump(1) + "\n"); }

const std::string* Script::match(const ChatRequest& request) const {
  const std::string digest = prompt_digest(request);
  std::string text;
  bool have_text = false;
  for (const auto& e : entries) {
    if (e.digest && *e.digest == digest) return &e.response;
    if (e.pattern) {
      if (!have_text) {
        text = prompt_text(request);
        have_text = true;
      }
      if (::fnmatch(e.pattern->c_str(), text.c_str(), 0) == 0) return &e.response;
    }
  }
  return fallback ? &*fallback : nullptr;
}

ScriptedChatBackend::ScriptedChatBackend(Script script) : script_(std::move(script)) {}

ChatResponse ScriptedChatBackend::complete(const ChatRequest& request) {
  check_request(request);
  ++calls_;
  const std::string* reply = script_.match(request);
  if (reply == nullptr) {
    throw BackendError(ErrorKind::script_miss, "no scripted reply for prompt digest " + prompt_digest(request));
  }
  ChatResponse out;
  out.text = *reply;
  out.finish_reason = "stop";
  return out;
}

// ---------------------------------------------------------------------------
// Detection backends

FileDetectBackend::FileDetectBackend(const std::string& path) {
  auto loaded = dataset::load_detections(path);
  by_scene_ = std::move(loaded.by_scene);
  load_errors_ = std::move(loaded.errors);
}

std::vector<Detection> FileDetectBackend::detect(const DetectRequest& request) {
  ++calls_;
  const auto it = by_scene_.find(request.scene_id);
  if (it == by_scene_.end()) {
    throw BackendError(ErrorKind::script_miss, "no precomputed detections for scene " + request.scene_id);
  }
  return it->second;
}

HttpDetectBackend::HttpDetectBackend(BackendDescriptor descriptor, RetryPolicy retry)
    : descriptor_(std::move(descriptor)), retry_(retry) {}

std::vector<Detection> HttpDetectBackend::detect(const DetectRequest& request) {
  ++calls_;
  const auto img = image::load_encoded(request.image_path);
  const json body{{"image", base64_encode(img.bytes)}, {"categories", request.categories},
                  {"box_threshold", request.box_threshold}};
  int attempts = 1;
  const std::string reply = post_with_retries(descriptor_, retry_, body.dump(), nullptr, attempts);
  std::vector<Detection> out;
  try {
    const json parsed = json::parse(reply);
    for (const auto& d : parsed.at("detections")) {
      out.push_back({d.at("label").get<std::string>(), d.at("confidence").get<double>(), dataset::box_from_json(d.at("box"))});
    }
  } catch (const std::exception& e) {
    throw BackendError(ErrorKind::malformed, std::string("malformed detection reply: ") + e.what(), attempts, reply);
  }
  return out;
}

std::unique_ptr<ChatBackend> make_chat_backend(const BackendDescriptor& d, const RetryPolicy& retry) {
  check_descriptor(d);
  if (!d.script.empty()) return std::make_unique<ScriptedChatBackend>(Script::load(d.script));
  return std::make_unique<HttpChatBackend>(d, retry);
}

std::unique_ptr<DetectBackend> make_detect_backend(const BackendDescriptor& d, const RetryPolicy& retry) {
  check_descriptor(d);
  if (!d.script.empty()) return std::make_unique<FileDetectBackend>(d.script);
  return std::make_unique<HttpDetectBackend>(d, retry);
}

// ---------------------------------------------------------------------------
// Cache

DiskCache::DiskCache(std::string directory) : directory_(std::move(directory)) {
  fs::create_directories(directory_);
}

std::optional<std::string> DiskCache::read_valid(const CacheKey& key) {
  const fs::path payload_path = fs::path(directory_) / (key.digest + ".payload");
  const fs::path meta_path = fs::path(directory_) / (key.digest + ".meta.json");
  if (!fs::exists(payload_path)) return std::nullopt;
  try {
    std::string payload = read_file_text(payload_path.string());
    const json meta = json::parse(read_file_text(meta_path.string()));
    if (meta.at("payload_sha256").get<std::string>() != sha256_hex(payload)) throw std::runtime_error("digest mismatch");
    return payload;
  } catch (const std::exception& e) {
    ++corrupt_;
    fmt::print(stderr, "warning: cache entry {} unusable ({}); treating as a miss\n", key.digest, e.what());
    return std::nullopt;
  }
}

DiskCache::Lookup DiskCache::get_or_call(const CacheKey& key, const json& metadata, const std::function<std::string()>& call) {
  std::promise<std::string> promise;
  {
    std::unique_lock lock(mutex_);
    if (auto it = inflight_.find(key.digest); it != inflight_.end()) {
      auto shared = it->second;
      lock.unlock();
      ++hits_;
      return {shared.get(), true};
    }
    inflight_.emplace(key.digest, promise.get_future().share());
  }
  auto finish = [this, &key] {
    std::lock_guard lock(mutex_);
    inflight_.erase(key.digest);
  };

  if (auto cached = read_valid(key)) {
    ++hits_;
    promise.set_value(*cached);
    finish();
    return {std::move(*cached), true};
  }

  std::string payload;
  try {
    payload = call();
  } catch (...) {
    promise.set_exception(std::current_exception());
    finish();
    throw;
  }
  ++misses_;
  try {
    json meta = metadata;
    meta["request_digest"] = key.digest;
    meta["payload_sha256"] = sha256_hex(payload);
    meta["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(
                            std::chrono::system_clock::now().time_since_epoch()).count();
    write_file_atomic((fs::path(directory_) / (key.digest + ".payload")).string(), payload);
    write_file_atomic((fs::path(directory_) / (key.digest + ".meta.json")).string(), meta.dump(1) + "\n");
  } catch (const std::exception& e) {
    fmt::print(stderr, "warning: cannot persist cache entry {}: {}\n", key.digest, e.what());
  }
  promise.set_value(payload);
  finish();
  return {std::move(payload), false};
}

// ---------------------------------------------------------------------------
// Clients

std::string cache_identity(const BackendDescriptor& d) {
  if (d.script.empty()) return d.model_name;
  std::error_code ec;
  const std::string content = fs::is_regular_file(d.script, ec) ? sha256_file(d.script) : d.script;
  return fmt::format("{}@script:{}", d.model_name, content);
}

ChatClient::ChatClient(BackendDescriptor descriptor, std::shared_ptr<ChatBackend> backend, std::shared_ptr<DiskCache> cache)
    : descriptor_(std::move(descriptor)),
      identity_(cache_identity(descriptor_)),
      backend_(std::move(backend)),
      cache_(std::move(cache)) {}

Served<ChatResponse> ChatClient::chat(const ChatRequest& request) {
  check_request(request);
  const auto start = Clock::now();
  ChatRequest req = request;
  if (req.model_name.empty()) req.model_name = descriptor_.model_name;

  const json canonical = canonical_request(req);
  const std::string model = req.model_name == descriptor_.model_name ? identity_ : req.model_name;
  const CacheKey key = make_cache_key(descriptor_.kind, model, canonical);

  Served<ChatResponse> out;
  out.info.request_digest = key.digest;
  if (cache_) {
    json meta{{"backend", descriptor_to_json(descriptor_)}, {"prompt_digest", prompt_digest(req)}};
    auto lookup = cache_->get_or_call(key, meta, [&] { return response_to_json(backend_->complete(req)).dump(); });
    out.value = response_from_json(json::parse(lookup.payload));
    out.info.from_cache = lookup.hit;
  } else {
    out.value = backend_->complete(req);
  }
  out.info.attempts = out.value.attempts;
  out.info.backend_latency_ms = out.value.latency_ms;
  out.info.wall_ms = ms_since(start);
  return out;
}

std::string caption_instruction(const std::string& label) {
  std::string tmpl = assets::text(assets::caption_template());
  const std::string placeholder = "{label}";
  for (auto pos = tmpl.find(placeholder); pos != std::string::npos; pos = tmpl.find(placeholder, pos + label.size())) {
    tmpl.replace(pos, placeholder.size(), label);
  }
  return tmpl;
}

ChatRequest build_caption_request(const std::string& model_name, const image::EncodedImage& crop, const std::string& label,
                                  int max_tokens) {
  ChatRequest req;
  req.model_name = model_name;
  req.max_tokens = max_tokens;
  req.messages.push_back({Role::user, caption_instruction(label), crop});
  return req;
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream ss(text);
  for (std::string w; ss >> w;) words.push_back(std::move(w));
  return words;
}

std::string join_words(const std::vector<std::string>& words, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n && i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::string label_echo(const std::string& label) {
  const char first = label.empty() ? 'x' : static_cast<char>(std::tolower(static_cast<unsigned char>(label[0])));
  const bool vowel = std::string_view("aeiou").find(first) != std::string_view::npos;
  return (vowel ? "an " : "a ") + label;
}

}  // namespace

Caption normalize_caption(const std::string& raw, const std::string& label, std::size_t max_words) {
  Caption out;
  const auto words = split_words(raw);
  if (words.empty()) {
    out.text = label_echo(label);
    out.fallback = true;
    return out;
  }
  if (words.size() <= max_words) {
    out.text = join_words(words, words.size());
    return out;
  }
  out.truncated = true;
  std::size_t keep = 0;
  for (std::size_t i = 0; i < max_words; ++i) {
    const char last = words[i].back();
    if (last == '.' || last == '!' || last == '?') keep = i + 1;
  }
  out.text = join_words(words, keep == 0 ? max_words : keep);
  return out;
}

Served<Caption> caption(ChatClient& client, const image::EncodedImage& crop, const std::string& label,
                        const CaptionPolicy& policy) {
  if (crop.bytes.empty()) throw std::invalid_argument("caption needs a non-empty crop");
  const ChatRequest req = build_caption_request(client.descriptor().model_name, crop, label, policy.max_tokens);
  Served<Caption> out;
  try {
    auto reply = client.chat(req);
    out.info = reply.info;
    out.value = normalize_caption(reply.value.text, label, policy.max_words);
  } catch (const BackendError& e) {
    if (e.kind != ErrorKind::script_miss) throw;
    out.info.request_digest = make_cache_key(client.descriptor().kind, req.model_name, canonical_request(req)).digest;
    out.value = normalize_caption("", label, policy.max_words);
  }
  return out;
}

std::vector<Detection> postprocess_detections(std::vector<Detection> detections, const DetectPolicy& policy,
                                              ImageSize image) {
  std::vector<Detection> kept;
  kept.reserve(detections.size());
  for (auto& d : detections) {
    if (d.label.empty() || !(d.confidence >= policy.conf_min) || d.confidence > 1.0) continue;
    d.box.x1 = std::clamp(d.box.x1, 0.0, static_cast<double>(image.width));
    d.box.x2 = std::clamp(d.box.x2, 0.0, static_cast<double>(image.width));
    d.box.y1 = std::clamp(d.box.y1, 0.0, static_cast<double>(image.height));
    d.box.y2 = std::clamp(d.box.y2, 0.0, static_cast<double>(image.height));
    if (!d.box.valid()) continue;
    kept.push_back(std::move(d));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  if (kept.size() > policy.max_candidates) kept.resize(policy.max_candidates);
  return kept;
}

DetectClient::DetectClient(BackendDescriptor descriptor, std::shared_ptr<DetectBackend> backend,
                           std::shared_ptr<DiskCache> cache)
    : descriptor_(std::move(descriptor)),
      identity_(cache_identity(descriptor_)),
      backend_(std::move(backend)),
      cache_(std::move(cache)) {}

Served<std::vector<Detection>> DetectClient::detect_raw(const DetectRequest& request) {
  if (request.categories.empty()) throw std::invalid_argument("detect needs at least one category");
  const auto start = Clock::now();
  std::string image_digest;
  try {
    image_digest = sha256_file(request.image_path);
  } catch (const std::exception& e) {
    throw image::ImageError(e.what());
  }
  const json canonical{{"scene_id", request.scene_id},
                       {"image_sha256", image_digest},
                       {"categories", request.categories},
                       {"box_threshold", request.box_threshold}};
  const CacheKey key = make_cache_key(BackendKind::detect, identity_, canonical);

  auto call = [&] {
    json arr = json::array();
    for (const auto& d : backend_->detect(request)) {
      arr.push_back({{"label", d.label}, {"confidence", d.confidence}, {"box", dataset::box_to_json(d.box)}});
    }
    return arr.dump();
  };

  Served<std::vector<Detection>> out;
  out.info.request_digest = key.digest;
  std::string payload;
  if (cache_) {
    auto lookup = cache_->get_or_call(key, {{"backend", descriptor_to_json(descriptor_)}}, call);
    payload = std::move(lookup.payload);
    out.info.from_cache = lookup.hit;
  } else {
    payload = call();
  }
  for (const auto& d : json::parse(payload)) {
    out.value.push_back({d.at("label").get<std::string>(), d.at("confidence").get<double>(), dataset::box_from_json(d.at("box"))});
  }
  out.info.wall_ms = ms_since(start);
  return out;
}

Served<std::vector<Detection>> detect(DetectClient& client, const DetectRequest& request, const DetectPolicy& policy,
                                      ImageSize image) {
  auto raw = client.detect_raw(request);
  raw.value = postprocess_detections(std::move(raw.value), policy, image);
  return raw;
}

}  // namespace llmrg::backends
