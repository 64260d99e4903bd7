#include "auxtune/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "auxtune/checkpoint.hpp"

namespace auxtune {

void RunManifest::add(const std::string& key, const std::string& value) {
  if (key.empty() || key.find('=') != std::string::npos || key.find('\n') != std::string::npos)
    throw std::invalid_argument("manifest key '" + key + "' must be non-empty without '=' or newlines");
  if (value.find('\n') != std::string::npos)
    throw std::invalid_argument("manifest value for '" + key + "' must not contain newlines");
  entries.emplace_back(key, value);
}

void RunManifest::add(const std::string& key, int64_t value) { add(key, std::to_string(value)); }

void RunManifest::add(const std::string& key, uint64_t value) { add(key, std::to_string(value)); }

void RunManifest::add(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  add(key, std::string(buf));
}

void RunManifest::add_input(const std::string& key, const std::string& path) {
  add(key, path);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_file(path)));
  add(key + ".hash", std::string(buf));
}

const std::string* RunManifest::find(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return &v;
  return nullptr;
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

RunManifest RunManifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  RunManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    m.entries.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return m;
}

uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  return h;
}

}  // namespace auxtune
