#include "guidedial/server.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <httplib.h>

#include "guidedial/errors.hpp"
#include "guidedial/metrics.hpp"

namespace guidedial {

namespace {

struct FieldError {
  std::string field;
  std::string message;
};

ServiceResponse error(int status, const std::string& message, const std::string& field = "") {
  nlohmann::json body{{"error", message}};
  if (!field.empty()) body["field"] = field;
  return {status, std::move(body)};
}

nlohmann::json parse_body(const std::string& body) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw FieldError{"", "request body is not valid JSON"};
  }
}

std::string string_field(const nlohmann::json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) throw FieldError{path, "missing field"};
  if (!obj[key].is_string()) throw FieldError{path, "must be a string"};
  return obj[key].get<std::string>();
}

std::vector<KnowledgeTriple> parse_knowledge(const nlohmann::json& j) {
  if (!j.is_array()) throw FieldError{"knowledge", "must be an array"};
  std::vector<KnowledgeTriple> out;
  for (size_t i = 0; i < j.size(); ++i) {
    const auto& k = j[i];
    const std::string path = "knowledge[" + std::to_string(i) + "]";
    if (k.is_array() && k.size() == 3 && k[0].is_string() && k[1].is_string() && k[2].is_string()) {
      out.push_back({k[0].get<std::string>(), k[1].get<std::string>(), k[2].get<std::string>()});
    } else if (k.is_object()) {
      out.push_back({string_field(k, "subject", path + ".subject"), string_field(k, "relation", path + ".relation"),
                     string_field(k, "object", path + ".object")});
    } else {
      throw FieldError{path, "must be [subject, relation, object] or an object with those keys"};
    }
  }
  return out;
}

Profile parse_profile(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw FieldError{"profile", "must be an object of strings"};
  Profile out;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string()) throw FieldError{"profile." + key, "must be a string"};
    out.emplace_back(key, value.get<std::string>());
  }
  return out;
}

nlohmann::json trim_keywords(const nlohmann::json& full, int top_k) {
  nlohmann::json out = nlohmann::json::object();
  for (const char* side : {"type", "topic"}) {
    nlohmann::json kept = nlohmann::json::array();
    int rank = 0;
    for (const auto& entry : full.at(side)) {
      if (rank++ < top_k || entry.at("picked").get<bool>()) kept.push_back(entry);
    }
    out[side] = std::move(kept);
  }
  return out;
}

}  // namespace

ChatService::ChatService(const DialogueModel<float>& model, const Vocabulary& vocab, const KeywordInventory& inventory,
                         ServiceOptions options)
    : model_(model),
      vocab_(vocab),
      inventory_(inventory),
      options_(options),
      clock_([] { return std::chrono::steady_clock::now(); }),
      id_rng_(options.id_seed ? options.id_seed : std::random_device{}()) {
  options_.inference.validate();
  if (options_.bias_top_k < 1) throw ValidationError("bias_top_k must be >= 1");
}

std::string ChatService::new_id() {
  std::ostringstream out;
  out << std::hex << std::setfill('0') << std::setw(16) << id_rng_();
  return out.str();
}

std::shared_ptr<ChatService::Session> ChatService::find(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t ChatService::expire_idle() {
  const auto now = clock_();
  std::lock_guard lock(mutex_);
  return std::erase_if(sessions_, [&](const auto& kv) {
    std::lock_guard session_lock(kv.second->mutex);
    return now - kv.second->last_used > options_.idle_timeout;
  });
}

std::size_t ChatService::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

ServiceResponse ChatService::create_session(const std::string& body) {
  expire_idle();
  auto session = std::make_shared<Session>();
  try {
    const auto ordered = nlohmann::ordered_json::parse(body, nullptr, false);
    if (ordered.is_discarded()) throw FieldError{"", "request body is not valid JSON"};
    if (!ordered.is_object()) throw FieldError{"", "request body must be a JSON object"};
    const nlohmann::json j = nlohmann::json::parse(body);

    if (!j.contains("target") || !j["target"].is_object()) throw FieldError{"target", "must be an object {type, topic}"};
    const std::string type = string_field(j["target"], "type", "target.type");
    const std::string topic = string_field(j["target"], "topic", "target.topic");
    auto type_id = inventory_.find_type(type);
    if (!type_id) throw FieldError{"target.type", "unknown keyword type '" + type + "'"};
    auto topic_id = inventory_.find_topic(topic);
    if (!topic_id) throw FieldError{"target.topic", "unknown keyword topic '" + topic + "'"};
    session->state.target = {*type_id, *topic_id};

    if (ordered.contains("profile")) session->state.profile = parse_profile(ordered["profile"]);
    if (j.contains("knowledge")) session->state.knowledge = parse_knowledge(j["knowledge"]);
  } catch (const FieldError& e) {
    return error(400, e.message, e.field);
  }

  session->last_used = clock_();
  std::lock_guard lock(mutex_);
  do {
    session->id = new_id();
  } while (sessions_.count(session->id));
  sessions_.emplace(session->id, session);
  return {201, {{"id", session->id}}};
}

ServiceResponse ChatService::post_utterance(const std::string& id, const std::string& body) {
  expire_idle();
  auto session = find(id);
  if (!session) return error(404, "no session '" + id + "'");

  std::string text;
  try {
    const nlohmann::json j = parse_body(body);
    if (!j.is_object()) throw FieldError{"", "request body must be a JSON object"};
    text = string_field(j, "text", "text");
    if (tokenize(text).empty()) throw FieldError{"text", "must not be empty"};
  } catch (const FieldError& e) {
    return error(400, e.message, e.field);
  }

  std::lock_guard lock(session->mutex);
  session->last_used = clock_();
  DialogueSample sample = session->state;
  sample.history.push_back({Speaker::user, text, std::nullopt});
  sample.bridge = {sample.target};
  sample.reference.clear();

  GenerationContext<float> ctx;
  GenerationResult result;
  try {
    const TrainingExample example = encode_sample(sample, vocab_, inventory_, options_.inference.m, options_.limits);
    ctx = prepare_context(model_, example, options_.inference);
    result = generate(model_, ctx);
  } catch (const std::exception& e) {
    return error(500, std::string("generation failed: ") + e.what());
  }

  const std::string reply = vocab_.detokenize(result.tokens);
  const bool hit = target_achieved(reply, inventory_.topic_name(sample.target.topic_id));

  nlohmann::json keywords{{"type", nlohmann::json::array()}, {"topic", nlohmann::json::array()}};
  if (ctx.keywords && ctx.selection) {
    keywords = trim_keywords(prediction_json(*ctx.keywords, *ctx.selection, inventory_), options_.keyword_top_k);
  }
  ScenarioBias bias;
  if (ctx.bias) {
    bias = *ctx.bias;
  } else {
    bias.logits = Eigen::VectorXd::Zero(vocab_.size());
    bias.normalized = softmax(bias.logits);
  }
  nlohmann::json bias_top = nlohmann::json::array();
  for (const auto& [token, prob] : bias.top(options_.bias_top_k)) {
    bias_top.push_back({{"token", vocab_.token(token)}, {"prob", prob}});
  }

  session->state.history.push_back({Speaker::user, text, std::nullopt});
  session->state.history.push_back({Speaker::system, reply, std::nullopt});
  session->achieved = session->achieved || hit;
  session->last_prediction = {{"keywords", keywords}, {"bias_top", bias_top}};

  return {200, {{"reply", reply}, {"keywords", keywords}, {"bias_top", bias_top}, {"achieved", session->achieved}}};
}

nlohmann::json ChatService::session_json(const Session& s) const {
  nlohmann::json transcript = nlohmann::json::array();
  for (const auto& t : s.state.history) {
    transcript.push_back({{"speaker", std::string(to_string(t.speaker))}, {"text", t.text}});
  }
  nlohmann::ordered_json profile = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.state.profile) profile[k] = v;
  nlohmann::json knowledge = nlohmann::json::array();
  for (const auto& k : s.state.knowledge) knowledge.push_back({k.subject, k.relation, k.object});
  return {{"id", s.id},
          {"target",
           {{"type", inventory_.type_name(s.state.target.type_id)},
            {"topic", inventory_.topic_name(s.state.target.topic_id)}}},
          {"profile", nlohmann::json::parse(profile.dump())},
          {"knowledge", knowledge},
          {"transcript", transcript},
          {"achieved", s.achieved},
          {"last_prediction", s.last_prediction}};
}

ServiceResponse ChatService::get_session(const std::string& id) {
  expire_idle();
  auto session = find(id);
  if (!session) return error(404, "no session '" + id + "'");
  std::lock_guard lock(session->mutex);
  session->last_used = clock_();
  return {200, session_json(*session)};
}

ServiceResponse ChatService::delete_session(const std::string& id) {
  expire_idle();
  std::lock_guard lock(mutex_);
  if (!sessions_.erase(id)) return error(404, "no session '" + id + "'");
  return {200, {{"deleted", id}}};
}

struct ChatHttpServer::Impl {
  httplib::Server server;
};

ChatHttpServer::ChatHttpServer(ChatService& service) : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json; charset=utf-8");
  };
  server.Post("/session", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.create_session(req.body));
  });
  server.Post(R"(/session/([^/]+)/utterance)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.post_utterance(req.matches[1], req.body));
  });
  server.Get(R"(/session/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.get_session(req.matches[1]));
  });
  server.Delete(R"(/session/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.delete_session(req.matches[1]));
  });
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

ChatHttpServer::~ChatHttpServer() = default;

int ChatHttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool ChatHttpServer::serve() { return impl_->server.listen_after_bind(); }

void ChatHttpServer::stop() { impl_->server.stop(); }

bool run_server(ChatService& service, const std::string& host, int port) {
  ChatHttpServer http(service);
  if (http.bind(host, port) < 0) return false;
  return http.serve();
}

}  // namespace guidedial
