#include <gtest/gtest.h>

#include <httplib.h>

#include <thread>

#include "chitchat/http_api.hpp"
#include "support/dialogue.hpp"

using namespace chitchat;
using nlohmann::json;

namespace {

class HttpApiTest : public ::testing::Test {
 protected:
  void SetUp() override {
    store = std::make_shared<session::SessionStore>(fixture::toy_registry(), std::nullopt,
                                                    fixture::counting_clock(), 2);
    server = std::make_unique<http::ApiServer>(store);
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->serve(); });
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    // Wait until the listener accepts.
    for (int i = 0; i < 200 && !client->Get("/export"); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  void TearDown() override {
    server->stop();
    thread.join();
  }

  std::pair<int, json> post(const std::string& path, const json& body) {
    auto res = client->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }

  std::string create(int turns_per_side = 15) {
    json spec = fixture::toy_spec(3);
    const auto [status, body] =
        post("/sessions", {{"system_spec", spec}, {"protocol", {{"turns_per_side", turns_per_side}}}, {"seed", 5}});
    EXPECT_EQ(status, 201);
    return body.at("session_id");
  }

  std::shared_ptr<session::SessionStore> store;
  std::unique_ptr<http::ApiServer> server;
  std::unique_ptr<httplib::Client> client;
  std::thread thread;
  int port = 0;
};

}  // namespace

TEST_F(HttpApiTest, CreateReturnsOpening) {
  const auto [status, body] = post("/sessions", {{"system_spec", json(fixture::toy_spec())}});
  EXPECT_EQ(status, 201);
  EXPECT_EQ(body["opening"], "Hello. Nice to meet you.");
  EXPECT_EQ(store->get(body["session_id"]).turns.size(), 1u);
}

TEST_F(HttpApiTest, FullDialogueOverHttp) {
  const auto id = create();
  for (int i = 0; i < 14; ++i) {
    const auto [status, body] = post("/sessions/" + id + "/utterance", {{"text", "こんにちは"}});
    ASSERT_EQ(status, 200);
    ASSERT_TRUE(body.contains("reply"));
    ASSERT_TRUE(body["fallback"].is_boolean());
  }
  const auto [status, body] = post("/sessions/" + id + "/utterance", {{"text", "さようなら"}});
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body["closing"].size(), 2u);

  auto transcript = client->Get("/sessions/" + id);
  ASSERT_TRUE(transcript);
  EXPECT_EQ(transcript->status, 200);
  const auto j = json::parse(transcript->body);
  EXPECT_EQ(j["turns"].size(), 32u);
  EXPECT_EQ(j["state"], "AwaitingEvaluation");

  const auto [s1, b1] = post("/sessions/" + id + "/evaluation",
                             {{"scores", fixture::uniform_scores(6)}, {"rater_id", "r1"}});
  EXPECT_EQ(s1, 201);
  EXPECT_EQ(b1["evaluation"]["scores"]["trust"], 6);
  const auto [s2, b2] = post("/sessions/" + id + "/evaluation",
                             {{"scores", fixture::uniform_scores(6)}, {"rater_id", "r1"}});
  EXPECT_EQ(s2, 409);
  EXPECT_EQ(b2["error"], "DUPLICATE");
}

TEST_F(HttpApiTest, ErrorStatuses) {
  EXPECT_EQ(post("/sessions/none/utterance", {{"text", "x"}}).first, 404);
  EXPECT_EQ(client->Get("/sessions/none")->status, 404);

  json spec = fixture::toy_spec();
  spec["model_id"] = "absent";
  const auto [s_model, b_model] = post("/sessions", {{"system_spec", spec}});
  EXPECT_EQ(s_model, 404);
  EXPECT_EQ(b_model["error"], "UNKNOWN_MODEL");

  auto raw = client->Post("/sessions", "not json", "application/json");
  EXPECT_EQ(raw->status, 400);
  EXPECT_EQ(post("/sessions", json::object()).first, 400);

  const auto id = create(1);
  EXPECT_EQ(post("/sessions/" + id + "/utterance", {{"text", 3}}).first, 422);
  const auto [s_wrong, b_wrong] =
      post("/sessions/" + id + "/evaluation", {{"scores", fixture::uniform_scores(1)}, {"rater_id", "r"}});
  EXPECT_EQ(s_wrong, 409);
  EXPECT_EQ(b_wrong["error"], "WRONG_STATE");

  post("/sessions/" + id + "/utterance", {{"text", "bye"}});
  const auto [s_closed, b_closed] = post("/sessions/" + id + "/utterance", {{"text", "more"}});
  EXPECT_EQ(s_closed, 409);
  EXPECT_EQ(b_closed["error"], "SESSION_CLOSED");

  auto scores = fixture::uniform_scores(1);
  scores["topic"] = 12;
  const auto [s_val, b_val] = post("/sessions/" + id + "/evaluation", {{"scores", scores}, {"rater_id", "r"}});
  EXPECT_EQ(s_val, 422);
  EXPECT_EQ(b_val["error"], "VALIDATION_ERROR");
  EXPECT_EQ(post("/sessions/" + id + "/evaluation", {{"rater_id", "r"}}).first, 422);
}

TEST_F(HttpApiTest, ExportWithFilters) {
  const auto done = create(1);
  post("/sessions/" + done + "/utterance", {{"text", "bye"}});
  post("/sessions/" + done + "/evaluation", {{"scores", fixture::uniform_scores(2)}, {"rater_id", "r"}});
  create();

  auto all = client->Get("/export");
  EXPECT_EQ(all->status, 200);
  EXPECT_EQ(all->body, store->export_dialogues());
  auto complete = client->Get("/export?state=Complete");
  EXPECT_EQ(std::count(complete->body.begin(), complete->body.end(), '\n'), 1);
  EXPECT_EQ(json::parse(complete->body)["session_id"], done);
  EXPECT_EQ(client->Get("/export?model_id=zzz")->body, "");
  EXPECT_EQ(client->Get("/export?state=Bogus")->status, 400);
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http::http_status(ErrorCode::kNotFound), 404);
  EXPECT_EQ(http::http_status(ErrorCode::kNotYourTurn), 409);
  EXPECT_EQ(http::http_status(ErrorCode::kValidation), 422);
  EXPECT_EQ(http::http_status(ErrorCode::kParse), 400);
}
