#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trlhf/world.hpp"

namespace trlhf {

using Json = nlohmann::json;

// Scenario log record: {scene_id, sample_id, dt, source,
// agents:[{id, length, width, states:[[x,y,v,theta],...]}]}.
Json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const Json& record);

// Map record: {lanes:[{centerline:[[x,y],...], width}], speed_limit}.
Json map_to_json(const MapModel& map);
MapModel map_from_json(const Json& record);

// Reads one JSON object per line. Blank lines are skipped; a malformed line
// raises ParseError with its line number.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, int line)>& visit);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);
void append_jsonl(const std::filesystem::path& path, const Json& record);

Json read_json_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see a partial file.
void write_json_file(const std::filesystem::path& path, const Json& value);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);
// Platform-independent 64-bit hash (leading bytes of SHA-256).
std::uint64_t stable_hash64(const std::string& text);

}  // namespace trlhf
