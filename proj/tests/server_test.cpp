#include <gtest/gtest.h>

#include <thread>

#include "fixture_support.hpp"
#include "guidedial/metrics.hpp"
#include "guidedial/server.hpp"

// After the Eigen-based headers: <resolv.h> defines a `_res` macro.
#include <httplib.h>

using namespace guidedial;
using namespace guidedial::testing;

namespace {

struct ServiceFixture {
  TinyCorpus tc;
  DialogueModel<float> model = tc.model<float>();
  ServiceOptions options;
  std::unique_ptr<ChatService> service;

  explicit ServiceFixture(bool use_csm = true, bool use_ikb = true) {
    options.id_seed = 42;
    options.inference.use_csm = use_csm;
    options.inference.use_ikb = use_ikb;
    options.inference.mode = SelectionMode::soft;
    options.inference.max_decode_len = 12;
    service = std::make_unique<ChatService>(model, tc.vocab, tc.data.inventory, options);
  }

  std::string create_body() const {
    const auto& s = tc.data.split.train.front();
    nlohmann::json knowledge = nlohmann::json::array();
    for (const auto& k : s.knowledge) knowledge.push_back({k.subject, k.relation, k.object});
    return nlohmann::json{{"profile", {{"name", "ann"}, {"age range", "18 to 25"}}},
                          {"knowledge", knowledge},
                          {"target",
                           {{"type", tc.data.inventory.type_name(s.target.type_id)},
                            {"topic", tc.data.inventory.topic_name(s.target.topic_id)}}}}
        .dump();
  }

  std::string create() {
    ServiceResponse r = service->create_session(create_body());
    EXPECT_EQ(r.status, 201) << r.body.dump();
    return r.body.at("id").get<std::string>();
  }
};

std::string utter(const std::string& text) { return nlohmann::json{{"text", text}}.dump(); }

}  // namespace

TEST(ChatService, ThreeExchangesGrowTheTranscriptByTwo) {
  ServiceFixture f;
  const std::string id = f.create();
  EXPECT_EQ(id.size(), 16u);
  const std::vector<std::string> lines{"hi there !", "tell me more .", "sounds good ."};
  for (size_t i = 0; i < lines.size(); ++i) {
    ServiceResponse r = f.service->post_utterance(id, utter(lines[i]));
    ASSERT_EQ(r.status, 200) << r.body.dump();
    EXPECT_TRUE(r.body["reply"].is_string());
    EXPECT_TRUE(r.body["achieved"].is_boolean());
    ASSERT_TRUE(r.body["keywords"]["type"].is_array());
    EXPECT_FALSE(r.body["keywords"]["topic"].empty());
    for (const auto& k : r.body["keywords"]["topic"]) {
      EXPECT_TRUE(k.contains("name") && k.contains("prob") && k.contains("picked"));
    }
    EXPECT_EQ(r.body["bias_top"].size(), 10u);

    ServiceResponse s = f.service->get_session(id);
    ASSERT_EQ(s.status, 200);
    const auto& transcript = s.body["transcript"];
    ASSERT_EQ(transcript.size(), 2 * (i + 1));
    EXPECT_EQ(transcript[2 * i]["speaker"], "user");
    EXPECT_EQ(transcript[2 * i]["text"], lines[i]);
    EXPECT_EQ(transcript[2 * i + 1]["speaker"], "system");
    EXPECT_EQ(transcript[2 * i + 1]["text"], r.body["reply"]);
    EXPECT_EQ(s.body["achieved"], r.body["achieved"]);
  }
  ServiceResponse s = f.service->get_session(id);
  EXPECT_EQ(s.body["profile"].begin().key(), "age range");
  EXPECT_EQ(s.body["profile"]["name"], "ann");
  EXPECT_EQ(s.body["target"]["topic"],
            f.tc.data.inventory.topic_name(f.tc.data.split.train.front().target.topic_id));
  EXPECT_TRUE(s.body["last_prediction"].contains("keywords"));
}

TEST(ChatService, AchievedFlagIsSticky) {
  ServiceFixture f;
  const std::string id = f.create();
  bool seen = false;
  for (int i = 0; i < 4; ++i) {
    ServiceResponse r = f.service->post_utterance(id, utter("go on ."));
    ASSERT_EQ(r.status, 200);
    const bool hit = target_achieved(r.body["reply"].get<std::string>(),
                                     f.tc.data.inventory.topic_name(f.tc.data.split.train.front().target.topic_id));
    seen = seen || hit;
    EXPECT_EQ(r.body["achieved"].get<bool>(), seen);
  }
}

TEST(ChatService, AblatedServiceReportsEmptyKeywordsAndUniformBias) {
  ServiceFixture f(false, false);
  const std::string id = f.create();
  ServiceResponse r = f.service->post_utterance(id, utter("hello"));
  ASSERT_EQ(r.status, 200);
  EXPECT_TRUE(r.body["keywords"]["type"].empty());
  EXPECT_TRUE(r.body["keywords"]["topic"].empty());
  const double u = 1.0 / f.tc.vocab.size();
  for (const auto& b : r.body["bias_top"]) EXPECT_NEAR(b["prob"].get<double>(), u, 1e-12);
}

TEST(ChatService, BadRequestsName400AndMissingSession404) {
  ServiceFixture f;
  auto bad = f.service->create_session(R"({"target": {"type": "nonsense", "topic": "x"}})");
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(bad.body["field"], "target.type");
  EXPECT_EQ(f.service->create_session("{oops").status, 400);
  EXPECT_EQ(f.service->create_session(R"({"profile": {"a": 1}})").body["field"], "target");
  auto knowledge = nlohmann::json::parse(f.create_body());
  knowledge["knowledge"] = nlohmann::json::array({nlohmann::json::array({"only", "two"})});
  EXPECT_EQ(f.service->create_session(knowledge.dump()).body["field"], "knowledge[0]");

  const std::string id = f.create();
  auto empty = f.service->post_utterance(id, utter("   "));
  EXPECT_EQ(empty.status, 400);
  EXPECT_EQ(empty.body["field"], "text");
  EXPECT_EQ(f.service->post_utterance("ffffffffffffffff", utter("hi")).status, 404);
  EXPECT_EQ(f.service->get_session("nope").status, 404);
  EXPECT_EQ(f.service->delete_session(id).status, 200);
  EXPECT_EQ(f.service->delete_session(id).status, 404);
  EXPECT_EQ(f.service->session_count(), 0u);
}

TEST(ChatService, IdleSessionsExpire) {
  ServiceFixture f;
  auto now = std::chrono::steady_clock::time_point{};
  f.service->set_clock([&] { return now; });
  const std::string old_id = f.create();
  now += std::chrono::minutes(20);
  const std::string fresh_id = f.create();
  now += std::chrono::minutes(15);  // old: 35 min idle, fresh: 15
  EXPECT_EQ(f.service->expire_idle(), 1u);
  EXPECT_EQ(f.service->get_session(old_id).status, 404);
  EXPECT_EQ(f.service->get_session(fresh_id).status, 200);
}

TEST(ChatHttpServer, ServesTheRestContract) {
  ServiceFixture f;
  ChatHttpServer http(*f.service);
  const int port = http.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread worker([&] { http.serve(); });

  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/session", f.create_body(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  const std::string id = nlohmann::json::parse(created->body)["id"];

  for (int i = 0; i < 3; ++i) {
    auto r = client.Post(("/session/" + id + "/utterance").c_str(), utter("hello there"), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    auto body = nlohmann::json::parse(r->body);
    EXPECT_TRUE(body.contains("reply") && body.contains("keywords") && body.contains("bias_top") &&
                body.contains("achieved"));
  }
  auto got = client.Get(("/session/" + id).c_str());
  ASSERT_TRUE(got);
  EXPECT_EQ(nlohmann::json::parse(got->body)["transcript"].size(), 6u);

  auto preflight = client.Options("/session");
  ASSERT_TRUE(preflight);
  EXPECT_EQ(preflight->status, 204);

  auto missing = client.Get("/session/0000000000000000");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_TRUE(nlohmann::json::parse(missing->body).contains("error"));

  auto deleted = client.Delete(("/session/" + id).c_str());
  ASSERT_TRUE(deleted);
  EXPECT_EQ(nlohmann::json::parse(deleted->body)["deleted"], id);

  http.stop();
  worker.join();
}
