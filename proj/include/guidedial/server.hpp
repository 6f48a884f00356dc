#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "guidedial/corpus.hpp"
#include "guidedial/generator.hpp"

namespace guidedial {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  InferenceOptions inference;
  EncodeLimits limits;
  std::chrono::seconds idle_timeout{1800};
  int bias_top_k = 10;
  /// Keyword entries listed per head in utterance replies (picked entries are always kept).
  int keyword_top_k = 10;
  std::uint64_t id_seed = 0;  // 0 seeds session ids from std::random_device
};

/// In-memory guided-chat sessions over one read-only model. Request bodies are
/// raw JSON text; every result is a status code plus a JSON body. Errors carry
/// {"error": message, "field": path}.
class ChatService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  ChatService(const DialogueModel<float>& model, const Vocabulary& vocab, const KeywordInventory& inventory,
              ServiceOptions options = {});

  /// {profile: {key: value}, knowledge: [[subject, relation, object]], target: {type, topic}} -> 201 {id}
  ServiceResponse create_session(const std::string& body);
  /// {text} -> {reply, keywords: {type, topic}, bias_top: [{token, prob}], achieved}
  ServiceResponse post_utterance(const std::string& id, const std::string& body);
  ServiceResponse get_session(const std::string& id);
  ServiceResponse delete_session(const std::string& id);

  /// Drops sessions idle for longer than the timeout; returns how many went.
  std::size_t expire_idle();
  std::size_t session_count() const;
  void set_clock(Clock clock) { clock_ = std::move(clock); }

 private:
  struct Session {
    std::mutex mutex;
    std::string id;
    DialogueSample state;  // history, target, profile and knowledge; bridge/reference unused
    nlohmann::json last_prediction;
    bool achieved = false;
    std::chrono::steady_clock::time_point last_used;
  };

  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();
  nlohmann::json session_json(const Session& s) const;

  const DialogueModel<float>& model_;
  const Vocabulary& vocab_;
  const KeywordInventory& inventory_;
  ServiceOptions options_;
  Clock clock_;

  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_rng_;
};

/// HTTP front end for a ChatService: POST /session, POST /session/{id}/utterance,
/// GET /session/{id}, DELETE /session/{id}.
class ChatHttpServer {
 public:
  explicit ChatHttpServer(ChatService& service);
  ~ChatHttpServer();
  ChatHttpServer(const ChatHttpServer&) = delete;
  ChatHttpServer& operator=(const ChatHttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port, or -1 on failure.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  bool serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Binds and serves until the process is stopped. Returns false if the address cannot be bound.
bool run_server(ChatService& service, const std::string& host, int port);

}  // namespace guidedial
