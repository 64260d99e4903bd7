#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace auxtune {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

// Container of named f32 tensors plus string metadata. On disk: "AUXT" magic,
// u16 version, u32 header length, a UTF-8 header listing metadata and tensor
// shapes, then the raw little-endian payloads in header order.
class Checkpoint {
 public:
  void set_meta(const std::string& key, std::string value);
  const std::string* find_meta(const std::string& key) const;
  const std::string& meta_at(const std::string& key) const;
  int64_t meta_int(const std::string& key) const;

  void add_tensor(std::string name, std::vector<int> shape, std::vector<float> data);
  const NamedTensor* find_tensor(const std::string& name) const;
  const NamedTensor& tensor_at(const std::string& name) const;

  const std::vector<std::pair<std::string, std::string>>& meta() const { return meta_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<NamedTensor> tensors_;
};

uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ull);
uint64_t hash_tensor_bytes(const std::vector<NamedTensor>& tensors);

}  // namespace auxtune
