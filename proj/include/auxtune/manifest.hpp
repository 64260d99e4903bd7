#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace auxtune {

// key=value record of one command invocation, written before any computation
// so a run can be reproduced from its inputs alone
struct RunManifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::string& value);
  void add(const std::string& key, int64_t value);
  void add(const std::string& key, uint64_t value);
  void add(const std::string& key, double value);

  // records the path and a content hash of an input file
  void add_input(const std::string& key, const std::string& path);
  const std::string* find(const std::string& key) const;

  void write(const std::string& path) const;
  static RunManifest read(const std::string& path);
};

uint64_t hash_file(const std::string& path);

}  // namespace auxtune
