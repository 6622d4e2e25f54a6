#pragma once

#include <atomic>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "llmrg/image.hpp"
#include "llmrg/scene.hpp"

namespace llmrg::backends {

enum class Role { system, user, assistant };

const char* to_string(Role role);

struct Message {
  Role role = Role::user;
  std::string text;
  std::optional<image::EncodedImage> image;
};

struct ChatRequest {
  std::string model_name;
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
};

/// Throws std::invalid_argument when the request has no user message or a negative temperature.
void check_request(const ChatRequest& request);

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  std::optional<Usage> usage;
  std::string finish_reason;
  double latency_ms = 0.0;
  int attempts = 1;
};

nlohmann::json response_to_json(const ChatResponse& response);
ChatResponse response_from_json(const nlohmann::json& j);

enum class BackendKind { chat, caption, detect };

const char* to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& text);

struct BackendDescriptor {
  BackendKind kind = BackendKind::chat;
  std::string endpoint;
  /// Scripted reply table for chat/caption; precomputed detections (JSON-lines) for detect.
  std::string script;
  std::string model_name;
  /// Name of the environment variable holding the API key. Never the key itself.
  std::string auth_env;
  double timeout_s = 120.0;
};

/// Throws std::invalid_argument unless exactly one of endpoint/script is set.
void check_descriptor(const BackendDescriptor& descriptor);

/// Descriptor fields safe to persist (no secret material).
nlohmann::json descriptor_to_json(const BackendDescriptor& descriptor);
BackendDescriptor descriptor_from_json(const nlohmann::json& j, BackendKind kind);

enum class ErrorKind { transport, auth, malformed, script_miss };

const char* to_string(ErrorKind kind);

struct BackendError : std::runtime_error {
  BackendError(ErrorKind kind, const std::string& message, int attempts = 1, std::string raw_body = {})
      : std::runtime_error(message), kind(kind), attempts(attempts), raw_body(std::move(raw_body)) {}

  ErrorKind kind;
  int attempts;
  std::string raw_body;
};

struct RetryPolicy {
  int max_attempts = 3;
  double backoff_base_s = 1.0;
  double backoff_factor = 2.0;
};

/// Digest of the role-tagged message texts and attachment digests. Used to key scripted replies.
std::string prompt_digest(const ChatRequest& request);

/// Message texts joined by blank lines; the subject of scripted glob patterns.
std::string prompt_text(const ChatRequest& request);

/// Canonical request form: images replaced by their SHA-256.
nlohmann::json canonical_request(const ChatRequest& request);

/// OpenAI-style chat-completions body with images inlined as base64 data URLs.
nlohmann::json wire_request(const ChatRequest& request);

struct CacheKey {
  std::string digest;
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

CacheKey make_cache_key(BackendKind kind, const std::string& model_name, const nlohmann::json& canonical_payload);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  /// Logical invocations served by this backend (cache hits never reach it).
  std::size_t calls() const { return calls_.load(); }

 protected:
  std::atomic<std::size_t> calls_{0};
};

class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(BackendDescriptor descriptor, RetryPolicy retry);
  ChatResponse complete(const ChatRequest& request) override;

  /// Individual HTTP attempts, including failed ones.
  std::size_t network_requests() const { return network_requests_.load(); }

 private:
  BackendDescriptor descriptor_;
  RetryPolicy retry_;
  std::atomic<std::size_t> network_requests_{0};
};

struct ScriptEntry {
  std::optional<std::string> digest;
  std::optional<std::string> pattern;
  std::string response;
  std::string stage;
};

struct Script {
  std::vector<ScriptEntry> entries;
  std::optional<std::string> fallback;

  static Script load(const std::string& path);
  static Script parse(const std::string& text);
  nlohmann::ordered_json to_json() const;
  void save(const std::string& path) const;

  /// First entry (in order) whose digest equals the prompt digest or whose glob matches the prompt text.
  const std::string* match(const ChatRequest& request) const;
};

class ScriptedChatBackend final : public ChatBackend {
 public:
  explicit ScriptedChatBackend(Script script);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  Script script_;
};

struct DetectRequest {
  std::string scene_id;
  std::string image_path;
  std::vector<std::string> categories;
  double box_threshold = 0.3;
};

class DetectBackend {
 public:
  virtual ~DetectBackend() = default;
  virtual std::vector<Detection> detect(const DetectRequest& request) = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  std::atomic<std::size_t> calls_{0};
};

/// Precomputed detections keyed by scene id. Missing scenes are an error.
class FileDetectBackend final : public DetectBackend {
 public:
  explicit FileDetectBackend(const std::string& path);
  std::vector<Detection> detect(const DetectRequest& request) override;

  const std::vector<std::string>& load_errors() const { return load_errors_; }

 private:
  std::map<std::string, std::vector<Detection>> by_scene_;
  std::vector<std::string> load_errors_;
};

class HttpDetectBackend final : public DetectBackend {
 public:
  HttpDetectBackend(BackendDescriptor descriptor, RetryPolicy retry);
  std::vector<Detection> detect(const DetectRequest& request) override;

 private:
  BackendDescriptor descriptor_;
  RetryPolicy retry_;
};

std::unique_ptr<ChatBackend> make_chat_backend(const BackendDescriptor& descriptor, const RetryPolicy& retry);
std::unique_ptr<DetectBackend> make_detect_backend(const BackendDescriptor& descriptor, const RetryPolicy& retry);

/// Model identity used in cache keys. Scripted backends also carry the digest of
/// their script so that swapping scripts never replays stale replies.
std::string cache_identity(const BackendDescriptor& descriptor);

/// Content-addressed response cache: <dir>/<digest>.payload plus <digest>.meta.json.
/// Writes are atomic; concurrent requests for one key share a single live call.
class DiskCache {
 public:
  explicit DiskCache(std::string directory);

  struct Lookup {
    std::string payload;
    bool hit = false;
  };

  Lookup get_or_call(const CacheKey& key, const nlohmann::json& metadata, const std::function<std::string()>& call);

  const std::string& directory() const { return directory_; }
  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }
  std::size_t corrupt_entries() const { return corrupt_.load(); }

 private:
  std::optional<std::string> read_valid(const CacheKey& key);

  std::string directory_;
  std::mutex mutex_;
  std::map<std::string, std::shared_future<std::string>> inflight_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
  std::atomic<std::size_t> corrupt_{0};
};

struct CallInfo {
  std::string request_digest;
  bool from_cache = false;
  int attempts = 1;
  double wall_ms = 0.0;
  /// Latency reported by the backend (replayed from the cache on hits).
  double backend_latency_ms = 0.0;
};

template <class T>
struct Served {
  T value;
  CallInfo info;
};

/// A chat-protocol backend (LLM or VLM) behind an optional cache.
class ChatClient {
 public:
  ChatClient(BackendDescriptor descriptor, std::shared_ptr<ChatBackend> backend, std::shared_ptr<DiskCache> cache);

  Served<ChatResponse> chat(const ChatRequest& request);

  const BackendDescriptor& descriptor() const { return descriptor_; }
  ChatBackend& backend() { return *backend_; }

 private:
  BackendDescriptor descriptor_;
  std::string identity_;
  std::shared_ptr<ChatBackend> backend_;
  std::shared_ptr<DiskCache> cache_;
};

struct CaptionPolicy {
  std::size_t max_words = 60;
  int max_tokens = 256;
};

struct Caption {
  std::string text;
  bool truncated = false;
  /// The backend gave nothing usable and the label was echoed instead.
  bool fallback = false;
};

/// The fixed attribute-eliciting instruction with the label substituted.
std::string caption_instruction(const std::string& label);

ChatRequest build_caption_request(const std::string& model_name, const image::EncodedImage& crop, const std::string& label,
                                  int max_tokens = 256);

/// Collapses to one paragraph and truncates to at most max_words at a sentence boundary.
Caption normalize_caption(const std::string& raw, const std::string& label, std::size_t max_words);

Served<Caption> caption(ChatClient& client, const image::EncodedImage& crop, const std::string& label,
                        const CaptionPolicy& policy = {});

struct DetectPolicy {
  double conf_min = 0.3;
  std::size_t max_candidates = 20;
};

/// Threshold, clip to the image, sort by confidence (stable), truncate.
std::vector<Detection> postprocess_detections(std::vector<Detection> detections, const DetectPolicy& policy,
                                              ImageSize image);

class DetectClient {
 public:
  DetectClient(BackendDescriptor descriptor, std::shared_ptr<DetectBackend> backend, std::shared_ptr<DiskCache> cache);

  /// Raw detector output, cached.
  Served<std::vector<Detection>> detect_raw(const DetectRequest& request);

  const BackendDescriptor& descriptor() const { return descriptor_; }
  DetectBackend& backend() { return *backend_; }

 private:
  BackendDescriptor descriptor_;
  std::string identity_;
  std::shared_ptr<DetectBackend> backend_;
  std::shared_ptr<DiskCache> cache_;
};

Served<std::vector<Detection>> detect(DetectClient& client, const DetectRequest& request, const DetectPolicy& policy,
                                      ImageSize image);

}  // namespace llmrg::backends
