#include "trlhf/service.hpp"

#include <httplib.h>

#include <ctime>

#include "trlhf/error.hpp"

namespace trlhf {

LabelStore::LabelStore(std::vector<ScenarioBatch> batches, std::filesystem::path labels_path,
                       std::filesystem::path pairs_path, NowFn now,
                       Clock::duration lease_timeout)
    : labels_path_(std::move(labels_path)), pairs_path_(std::move(pairs_path)),
      now_(std::move(now)), lease_timeout_(lease_timeout) {
  if (lease_timeout_ <= Clock::duration::zero()) throw ConfigError("lease timeout must be positive");
  for (auto& b : batches) {
    const std::string id = b.batch_id;
    if (!batches_.emplace(id, std::move(b)).second) {
      throw DataError("duplicate batch id " + id);
    }
  }
  if (std::filesystem::exists(labels_path_)) {
    for_each_jsonl(labels_path_, [&](const Json& record, int line) {
      Label label = label_from_json(record);
      if (!batches_.count(label.batch_id)) {
        throw ParseError(labels_path_.string(), line, "label for unknown batch " + label.batch_id);
      }
      labels_[label.batch_id] = std::move(label);
    });
  }
}

Json batch_payload(const ScenarioBatch& batch) {
  Json scenarios = Json::array();
  for (const auto& s : batch.scenarios) {
    scenarios.push_back({{"sample_id", s.sample_id}, {"agents", scenario_to_json(s).at("agents")}});
  }
  return {{"batch_id", batch.batch_id},
          {"map", map_to_json(*batch.map)},
          {"dt", batch.ground_truth.dt},
          {"scenarios", std::move(scenarios)}};
}

std::optional<Json> LabelStore::next_batch() {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto now = now_();
  for (const auto& [id, batch] : batches_) {
    if (labels_.count(id)) continue;
    const auto lease = leases_.find(id);
    if (lease == leases_.end() || now - lease->second >= lease_timeout_) {
      leases_[id] = now;
      return batch_payload(batch);
    }
  }
  return std::nullopt;
}

LabelStore::SubmitResult LabelStore::submit(const std::string& batch_id,
                                            const std::string& body) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = batches_.find(batch_id);
  if (it == batches_.end()) return {SubmitStatus::kUnknownBatch, "unknown batch " + batch_id};
  if (labels_.count(batch_id)) {
    return {SubmitStatus::kAlreadyLabeled, "batch " + batch_id + " is already labeled"};
  }
  const Json request = Json::parse(body, nullptr, false);
  if (request.is_discarded() || !request.is_object() || !request.contains("choice")) {
    return {SubmitStatus::kMalformed, "body must be a JSON object with a 'choice' field"};
  }
  const Json& choice = request.at("choice");
  Label label;
  label.batch_id = batch_id;
  label.labeler = Labeler::kHuman;
  label.timestamp = utc_timestamp(now_());
  if (!choice.is_null()) {
    if (!choice.is_number_integer()) {
      return {SubmitStatus::kMalformed, "'choice' must be an integer or null"};
    }
    const auto value = choice.get<long long>();
    if (value < 0 || value >= it->second.size()) {
      return {SubmitStatus::kMalformed, "'choice' out of range [0, " +
                                            std::to_string(it->second.size()) + ")"};
    }
    label.choice = static_cast<int>(value);
  }
  const auto pairs = pairs_from_label(it->second, label);
  append_jsonl(labels_path_, label_to_json(label));
  append_pairs(pairs_path_, pairs);
  labels_[batch_id] = label;
  leases_.erase(batch_id);
  return {SubmitStatus::kAccepted, {}};
}

LabelStore::Progress LabelStore::progress() const {
  std::lock_guard<std::mutex> lock(mutex_);
  const int labeled = static_cast<int>(labels_.size());
  return {labeled, static_cast<int>(batches_.size()) - labeled};
}

std::string utc_timestamp(LabelStore::Clock::time_point t) {
  const std::time_t seconds = LabelStore::Clock::to_time_t(t);
  std::tm utc{};
  gmtime_r(&seconds, &utc);
  char text[32];
  std::strftime(text, sizeof(text), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return text;
}

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(Json{{"error", message}}.dump(), "application/json");
}

}  // namespace

void configure_label_routes(httplib::Server& server, LabelStore& store,
                            const std::optional<std::filesystem::path>& ui_dir) {
  server.Get("/api/batch/next", [&store](const httplib::Request&, httplib::Response& res) {
    const auto payload = store.next_batch();
    if (!payload) {
      res.status = 204;
      return;
    }
    res.set_content(payload->dump(), "application/json");
  });
  server.Post(R"(/api/batch/([^/]+)/label)",
              [&store](const httplib::Request& req, httplib::Response& res) {
                const auto result = store.submit(req.matches[1], req.body);
                switch (result.status) {
                  case LabelStore::SubmitStatus::kAccepted: res.status = 204; break;
                  case LabelStore::SubmitStatus::kUnknownBatch:
                    send_error(res, 404, result.message);
                    break;
                  case LabelStore::SubmitStatus::kMalformed:
                    send_error(res, 400, result.message);
                    break;
                  case LabelStore::SubmitStatus::kAlreadyLabeled:
                    send_error(res, 409, result.message);
                    break;
                }
              });
  server.Get("/api/progress", [&store](const httplib::Request&, httplib::Response& res) {
    const auto p = store.progress();
    res.set_content(Json{{"labeled", p.labeled}, {"remaining", p.remaining}}.dump(),
                    "application/json");
  });
  if (ui_dir) {
    if (!server.set_mount_point("/", ui_dir->string())) {
      throw ConfigError("UI directory " + ui_dir->string() + " does not exist");
    }
  }
}

void run_label_service(LabelStore& store, const std::string& host, int port,
                       const std::optional<std::filesystem::path>& ui_dir) {
  httplib::Server server;
  configure_label_routes(server, store, ui_dir);
  if (!server.listen(host, port)) {
    throw Error("could not listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace trlhf
