#include "parakit/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "parakit/errors.hpp"

namespace parakit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint buffers are written as native little-endian floats");
static_assert(sizeof(float) == 4);

namespace {
constexpr const char* kMagic = "parakit-checkpoint";
}

void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& config,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
  for (const auto& [k, v] : config) {
    if (k.empty() || k.find('=') != std::string::npos || k.find('\n') != std::string::npos)
      fail_contract("save_checkpoint: bad config key '" + k + "'");
    if (v.find('\n') != std::string::npos)
      fail_contract("save_checkpoint: config value for '" + k + "' contains a newline");
  }
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp, std::ios::binary);
  if (!out) fail_io("save_checkpoint: cannot open '" + tmp + "' for writing");

  out << kMagic << " " << kCheckpointFormatVersion << "\n";
  out << "config " << config.size() << "\n";
  for (const auto& [k, v] : config) out << k << "=" << v << "\n";
  out << "params " << params.size() << "\n";
  for (const auto& [name, t] : params) {
    if (name.empty() || name.find(' ') != std::string::npos ||
        name.find('\n') != std::string::npos)
      fail_contract("save_checkpoint: bad parameter name '" + name + "'");
    out << name << " " << t.ndim();
    for (int d : t.shape()) out << " " << d;
    out << "\n";
  }
  out << "data\n";
  for (const auto& [name, t] : params) {
    const auto& d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(float)));
  }
  out.flush();
  if (!out) fail_io("save_checkpoint: write to '" + tmp + "' failed");
  out.close();
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    fail_io("save_checkpoint: cannot rename '" + tmp + "' to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("load_checkpoint: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) fail_format("load_checkpoint: empty file '" + path + "'");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = -1;
    hs >> magic >> version;
    if (magic != kMagic)
      fail_format("load_checkpoint: '" + path + "' is not a checkpoint (bad magic)");
    if (version != kCheckpointFormatVersion)
      fail_format("load_checkpoint: unsupported format version " + std::to_string(version));
  }

  Checkpoint ck;
  std::size_t n_config = 0;
  if (!std::getline(in, line)) fail_format("load_checkpoint: truncated header");
  {
    std::istringstream hs(line);
    std::string word;
    hs >> word >> n_config;
    if (word != "config") fail_format("load_checkpoint: expected config section");
  }
  for (std::size_t i = 0; i < n_config; ++i) {
    if (!std::getline(in, line)) fail_format("load_checkpoint: truncated config section");
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail_format("load_checkpoint: malformed config line '" + line + "'");
    ck.config[line.substr(0, eq)] = line.substr(eq + 1);
  }

  std::size_t n_params = 0;
  if (!std::getline(in, line)) fail_format("load_checkpoint: truncated header");
  {
    std::istringstream hs(line);
    std::string word;
    hs >> word >> n_params;
    if (word != "params") fail_format("load_checkpoint: expected params section");
  }
  for (std::size_t i = 0; i < n_params; ++i) {
    if (!std::getline(in, line)) fail_format("load_checkpoint: truncated manifest");
    std::istringstream ms(line);
    LoadedParam p;
    int ndim = 0;
    ms >> p.name >> ndim;
    if (p.name.empty() || ndim < 0) fail_format("load_checkpoint: malformed manifest line");
    p.shape.resize(ndim);
    std::size_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      if (!(ms >> p.shape[d]) || p.shape[d] < 0)
        fail_format("load_checkpoint: malformed shape in manifest for '" + p.name + "'");
      numel *= static_cast<std::size_t>(p.shape[d]);
    }
    p.data.resize(numel);
    ck.params.push_back(std::move(p));
  }
  if (!std::getline(in, line) || line != "data")
    fail_format("load_checkpoint: expected data section");
  for (auto& p : ck.params) {
    in.read(reinterpret_cast<char*>(p.data.data()),
            static_cast<std::streamsize>(p.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(p.data.size() * sizeof(float)))
      fail_format("load_checkpoint: truncated buffer for '" + p.name + "'");
  }
  return ck;
}

std::uint64_t hash_floats(const std::vector<float>& v) {
  std::uint64_t h = 1469598103934665603ULL;
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace parakit
