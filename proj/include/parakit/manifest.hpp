#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace parakit {

// Provenance record written next to every artifact directory's outputs. The
// argv vector replayed through the CLI reproduces the outputs bit-exactly;
// the config map is the fully resolved flag set for human inspection.
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string build_id;  // stamped at write time when left empty
  std::string started;
  std::string finished;
};

std::string iso_utc_now();

std::string manifest_json(const RunManifest& m);

// Serializes to <dir>/manifest.json via a temp file renamed into place.
// Fills build_id and finished when they are still empty.
std::string write_manifest(const std::string& dir, RunManifest m);

RunManifest read_manifest(const std::string& path);

}  // namespace parakit
