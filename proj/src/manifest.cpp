#include "parakit/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "parakit/errors.hpp"

namespace parakit {

namespace {

using nlohmann::json;

json to_json(const RunManifest& m) {
  json j;
  j["subcommand"] = m.subcommand;
  j["argv"] = m.argv;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["build_id"] = m.build_id;
  j["started"] = m.started;
  j["finished"] = m.finished;
  return j;
}

}  // namespace

std::string iso_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", &tm);
  return buf;
}

std::string manifest_json(const RunManifest& m) { return to_json(m).dump(2) + "\n"; }

std::string write_manifest(const std::string& dir, RunManifest m) {
  if (m.build_id.empty()) m.build_id = PARAKIT_BUILD_ID;
  if (m.finished.empty()) m.finished = iso_utc_now();
  std::filesystem::create_directories(dir);
  std::string path = dir + "/manifest.json";
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail_io("manifest: cannot open " + tmp);
    out << manifest_json(m);
    if (!out) fail_io("manifest: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail_io("manifest: rename failed for " + path + ": " + ec.message());
  return path;
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("manifest: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail_format("manifest: " + path + " is not valid JSON: " + e.what());
  }
  RunManifest m;
  try {
    m.subcommand = j.at("subcommand").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.at("inputs").get<std::vector<std::string>>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.build_id = j.at("build_id").get<std::string>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
  } catch (const json::exception& e) {
    fail_format("manifest: " + path + " has a bad field: " + e.what());
  }
  return m;
}

}  // namespace parakit
