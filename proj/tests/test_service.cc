#include <gtest/gtest.h>

#include <filesystem>
#include <memory>
#include <set>
#include <thread>

#include "trlhf/error.hpp"
#include "trlhf/service.hpp"

#include <httplib.h>

using namespace trlhf;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

const std::vector<ScenarioBatch>& batches() {
  static const std::vector<ScenarioBatch> b = [] {
    const TrafficPolicy policy{PolicyConfig{}};
    std::mt19937_64 rng(3);
    std::vector<ScenarioBatch> out;
    for (const auto& spec : corpus_specs("train", 3, 12)) {
      out.push_back(make_batch(policy, generate_scene(spec), 5, rng));
    }
    return out;
  }();
  return b;
}

std::size_t line_count(const fs::path& p) {
  return fs::exists(p) ? read_jsonl(p).size() : 0;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("trlhf_test_service_" + std::string(
                ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    now_ = std::make_shared<LabelStore::Clock::time_point>(LabelStore::Clock::time_point{} +
                                                            std::chrono::hours(24 * 365 * 30));
    start();
  }

  void TearDown() override {
    stop();
    fs::remove_all(dir_);
  }

  void start() {
    auto now = now_;
    store_ = std::make_unique<LabelStore>(batches(), labels(), pairs(), [now] { return *now; });
    server_ = std::make_unique<httplib::Server>();
    configure_label_routes(*server_, *store_);
    port_ = server_->bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  void stop() {
    server_->stop();
    thread_.join();
  }

  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

  httplib::Result post_label(const std::string& id, const std::string& body) {
    return client().Post("/api/batch/" + id + "/label", body, "application/json");
  }

  fs::path labels() const { return dir_ / "labels.jsonl"; }
  fs::path pairs() const { return dir_ / "pairs.jsonl"; }

  fs::path dir_;
  std::shared_ptr<LabelStore::Clock::time_point> now_;
  std::unique_ptr<LabelStore> store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, NextBatchPayloadOmitsGroundTruth) {
  const auto res = client().Get("/api/batch/next");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const Json j = Json::parse(res->body);
  const ScenarioBatch& b = batches()[0];
  EXPECT_EQ(j.at("batch_id"), b.batch_id);
  EXPECT_EQ(j.at("dt").get<double>(), b.ground_truth.dt);
  EXPECT_EQ(map_from_json(j.at("map")), *b.map);
  ASSERT_EQ(j.at("scenarios").size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    const Json& s = j.at("scenarios")[k];
    EXPECT_EQ(s.at("sample_id"), b.scenarios[k].sample_id);
    EXPECT_NE(s.at("sample_id"), kGroundTruthId);
    const Json& a0 = s.at("agents")[0];
    EXPECT_TRUE(a0.contains("length") && a0.contains("width"));
    EXPECT_EQ(s.at("agents").size(), static_cast<std::size_t>(b.scenarios[k].num_agents()));
  }
  EXPECT_EQ(res->body.find("ground_truth"), std::string::npos);
}

TEST_F(ServiceTest, LeasesKeepConcurrentClientsApart) {
  std::set<std::string> seen;
  for (int k = 0; k < 3; ++k) {
    const auto res = client().Get("/api/batch/next");
    ASSERT_EQ(res->status, 200);
    seen.insert(Json::parse(res->body).at("batch_id").get<std::string>());
  }
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(client().Get("/api/batch/next")->status, 204);
  *now_ += 9min;
  EXPECT_EQ(client().Get("/api/batch/next")->status, 204);
  *now_ += 1min;
  const auto again = client().Get("/api/batch/next");
  ASSERT_EQ(again->status, 200);
  EXPECT_EQ(Json::parse(again->body).at("batch_id"), batches()[0].batch_id);
}

TEST_F(ServiceTest, ChoiceGrowsPairStoreByNMinusOne) {
  const ScenarioBatch& b = batches()[1];
  const auto res = post_label(b.batch_id, R"({"choice": 2})");
  ASSERT_EQ(res->status, 204);
  const auto stored = load_pairs(pairs());
  ASSERT_EQ(stored.size(), 4u);
  const Label label{b.batch_id, 2, Labeler::kHuman, "unused"};
  EXPECT_EQ(stored, pairs_from_label(b, label));
  const auto labels_on_disk = read_jsonl(labels());
  ASSERT_EQ(labels_on_disk.size(), 1u);
  const Label back = label_from_json(labels_on_disk[0]);
  EXPECT_EQ(back.choice, 2);
  EXPECT_EQ(back.labeler, Labeler::kHuman);
  EXPECT_EQ(back.timestamp, utc_timestamp(*now_));
}

TEST_F(ServiceTest, NoneChoiceUsesGroundTruthWinner) {
  const ScenarioBatch& b = batches()[0];
  ASSERT_EQ(post_label(b.batch_id, R"({"choice": null})")->status, 204);
  const auto stored = load_pairs(pairs());
  ASSERT_EQ(stored.size(), 5u);
  for (const auto& p : stored) EXPECT_EQ(p.winner, kGroundTruthId);
}

TEST_F(ServiceTest, DoublePostConflictsAndLeavesStoreUnchanged) {
  const std::string id = batches()[2].batch_id;
  ASSERT_EQ(post_label(id, R"({"choice": 0})")->status, 204);
  const std::string before = read_text_file(pairs());
  const auto second = post_label(id, R"({"choice": 1})");
  EXPECT_EQ(second->status, 409);
  EXPECT_TRUE(Json::parse(second->body).contains("error"));
  EXPECT_EQ(read_text_file(pairs()), before);
  EXPECT_EQ(line_count(labels()), 1u);
}

TEST_F(ServiceTest, ErrorStatuses) {
  const std::string id = batches()[0].batch_id;
  EXPECT_EQ(post_label("batch-missing", R"({"choice": 0})")->status, 404);
  for (const char* body : {"not json", "[]", "{}", R"({"choice": 1.5})", R"({"choice": "1"})",
                           R"({"choice": 5})", R"({"choice": -1})", R"({"choice": true})"}) {
    EXPECT_EQ(post_label(id, body)->status, 400) << body;
  }
  EXPECT_EQ(line_count(pairs()), 0u);
  EXPECT_EQ(line_count(labels()), 0u);
}

TEST_F(ServiceTest, ProgressAndPersistenceAcrossRestart) {
  auto progress = [&] { return Json::parse(client().Get("/api/progress")->body); };
  EXPECT_EQ(progress(), (Json{{"labeled", 0}, {"remaining", 3}}));
  ASSERT_EQ(post_label(batches()[0].batch_id, R"({"choice": 4})")->status, 204);
  EXPECT_EQ(progress(), (Json{{"labeled", 1}, {"remaining", 2}}));

  stop();
  start();
  EXPECT_EQ(progress(), (Json{{"labeled", 1}, {"remaining", 2}}));
  const auto next = client().Get("/api/batch/next");
  EXPECT_EQ(Json::parse(next->body).at("batch_id"), batches()[1].batch_id);
  EXPECT_EQ(post_label(batches()[0].batch_id, R"({"choice": 0})")->status, 409);
  ASSERT_EQ(post_label(batches()[1].batch_id, R"({"choice": 0})")->status, 204);
  ASSERT_EQ(post_label(batches()[2].batch_id, R"({"choice": 0})")->status, 204);
  EXPECT_EQ(client().Get("/api/batch/next")->status, 204);
  EXPECT_EQ(progress(), (Json{{"labeled", 3}, {"remaining", 0}}));
  EXPECT_EQ(line_count(pairs()), 12u);
}

TEST(LabelStore, RejectsBadConstruction) {
  const fs::path dir = fs::temp_directory_path() / "trlhf_test_service_ctor";
  fs::create_directories(dir);
  std::vector<ScenarioBatch> dup{batches()[0], batches()[0]};
  EXPECT_THROW(LabelStore(dup, dir / "l.jsonl", dir / "p.jsonl"), DataError);
  EXPECT_THROW(LabelStore(
                   batches(), dir / "l.jsonl", dir / "p.jsonl",
                   [] { return LabelStore::Clock::now(); }, 0s),
               ConfigError);
  fs::remove(dir / "l.jsonl");
  append_jsonl(dir / "l.jsonl", label_to_json({"batch-elsewhere", 0, Labeler::kHuman, "t"}));
  EXPECT_THROW(LabelStore(batches(), dir / "l.jsonl", dir / "p.jsonl"), ParseError);
  fs::remove_all(dir);
}

TEST(UtcTimestamp, FormatsIso8601) {
  const auto t = LabelStore::Clock::from_time_t(1704164645);
  EXPECT_EQ(utc_timestamp(t), "2024-01-02T03:04:05Z");
}
