#include "trlhf/io.hpp"

#include <openssl/sha.h>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "trlhf/error.hpp"

namespace trlhf {

namespace fs = std::filesystem;

Json scenario_to_json(const Scenario& scenario) {
  Json agents = Json::array();
  for (const auto& agent : scenario.agents) {
    Json states = Json::array();
    for (const auto& s : agent.states) states.push_back({s.x, s.y, s.v, s.theta});
    agents.push_back({{"id", agent.id},
                      {"length", agent.shape.length},
                      {"width", agent.shape.width},
                      {"states", std::move(states)}});
  }
  return {{"scene_id", scenario.scene_id},
          {"sample_id", scenario.sample_id},
          {"dt", scenario.dt},
          {"source", to_string(scenario.source)},
          {"agents", std::move(agents)}};
}

Scenario scenario_from_json(const Json& record) {
  Scenario scenario;
  try {
    scenario.scene_id = record.at("scene_id").get<std::string>();
    scenario.sample_id = record.at("sample_id").get<std::string>();
    scenario.dt = record.at("dt").get<double>();
    scenario.source =
        scenario_source_from_string(record.at("source").get<std::string>());
    for (const auto& a : record.at("agents")) {
      AgentTrack track;
      track.id = a.at("id").get<std::string>();
      track.shape = {a.at("length").get<double>(), a.at("width").get<double>()};
      for (const auto& s : a.at("states")) {
        if (s.size() != 4) throw DataError("state must have 4 components");
        track.states.push_back({s[0].get<double>(), s[1].get<double>(),
                                s[2].get<double>(), s[3].get<double>()});
      }
      scenario.agents.push_back(std::move(track));
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("scenario record: ") + e.what());
  }
  scenario.validate();
  return scenario;
}

Json map_to_json(const MapModel& map) {
  Json lanes = Json::array();
  for (const auto& lane : map.lanes) {
    Json points = Json::array();
    for (const auto& p : lane.centerline()) points.push_back({p.x(), p.y()});
    lanes.push_back({{"centerline", std::move(points)}, {"width", lane.width()}});
  }
  return {{"lanes", std::move(lanes)}, {"speed_limit", map.speed_limit}};
}

MapModel map_from_json(const Json& record) {
  MapModel map;
  try {
    for (const auto& l : record.at("lanes")) {
      std::vector<Eigen::Vector2d> points;
      for (const auto& p : l.at("centerline")) {
        if (p.size() != 2) throw DataError("centerline point must have 2 components");
        points.emplace_back(p[0].get<double>(), p[1].get<double>());
      }
      map.lanes.emplace_back(std::move(points), l.at("width").get<double>());
    }
    map.speed_limit = record.at("speed_limit").get<double>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("map record: ") + e.what());
  }
  map.validate();
  return map;
}

void for_each_jsonl(const fs::path& path,
                    const std::function<void(const Json&, int)>& visit) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json record;
    try {
      record = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(path.string(), number, e.what());
    }
    if (!record.is_object()) {
      throw ParseError(path.string(), number, "record is not an object");
    }
    try {
      visit(record, number);
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(path.string(), number, e.what());
    } catch (const Json::exception& e) {
      throw ParseError(path.string(), number, e.what());
    }
  }
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::vector<Json> records;
  for_each_jsonl(path, [&](const Json& r, int) { records.push_back(r); });
  return records;
}

void write_jsonl(const fs::path& path, const std::vector<Json>& records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  write_text_file(path, text);
}

void append_jsonl(const fs::path& path, const Json& record) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << record.dump() << '\n';
  out.flush();
}

Json read_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& value) {
  write_text_file(path, value.dump(1) + "\n");
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  std::ostringstream out;
  for (unsigned char c : digest) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  }
  return out.str();
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_text_file(path)); }

std::uint64_t stable_hash64(const std::string& text) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), digest);
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h = (h << 8) | digest[i];
  return h;
}

}  // namespace trlhf
