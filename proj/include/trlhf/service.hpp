#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "trlhf/io.hpp"
#include "trlhf/preference.hpp"

namespace httplib {
class Server;
}

namespace trlhf {

// Annotation queue shared by the HTTP handlers. Batches are served oldest
// first by batch_id; each served batch is leased so concurrent annotators
// see different work. Labels and their pairs are appended to disk before a
// submission is acknowledged.
class LabelStore {
 public:
  using Clock = std::chrono::system_clock;
  using NowFn = std::function<Clock::time_point()>;

  static constexpr std::chrono::minutes kDefaultLeaseTimeout{10};

  LabelStore(std::vector<ScenarioBatch> batches, std::filesystem::path labels_path,
             std::filesystem::path pairs_path, NowFn now = [] { return Clock::now(); },
             Clock::duration lease_timeout = kDefaultLeaseTimeout);

  // Payload for the oldest unlabeled batch without an active lease. Empty
  // when everything is labeled or every remaining batch is leased.
  std::optional<Json> next_batch();

  enum class SubmitStatus { kAccepted, kUnknownBatch, kMalformed, kAlreadyLabeled };
  struct SubmitResult {
    SubmitStatus status;
    std::string message;
  };
  SubmitResult submit(const std::string& batch_id, const std::string& body);

  struct Progress {
    int labeled = 0;
    int remaining = 0;
  };
  Progress progress() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, ScenarioBatch> batches_;
  std::map<std::string, Label> labels_;
  std::map<std::string, Clock::time_point> leases_;
  std::filesystem::path labels_path_;
  std::filesystem::path pairs_path_;
  NowFn now_;
  Clock::duration lease_timeout_;
};

// Batch as sent to the annotation UI; never contains the ground truth.
Json batch_payload(const ScenarioBatch& batch);

std::string utc_timestamp(LabelStore::Clock::time_point t);

// Routes: GET /api/batch/next, POST /api/batch/{id}/label, GET /api/progress,
// and optionally static files from ui_dir under "/".
void configure_label_routes(httplib::Server& server, LabelStore& store,
                            const std::optional<std::filesystem::path>& ui_dir = std::nullopt);

// Blocks until the server stops.
void run_label_service(LabelStore& store, const std::string& host, int port,
                       const std::optional<std::filesystem::path>& ui_dir = std::nullopt);

}  // namespace trlhf
