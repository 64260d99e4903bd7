#include "auxtune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "auxtune/tensor.hpp"

namespace auxtune {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");

namespace {
constexpr char kMagic[4] = {'A', 'U', 'X', 'T'};
constexpr uint16_t kVersion = 1;

void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("checkpoint " + path + ": " + why);
}
}  // namespace

void Checkpoint::set_meta(const std::string& key, std::string value) {
  if (key.empty() || key.find('=') != std::string::npos || key.find('\n') != std::string::npos)
    throw std::invalid_argument("checkpoint meta key '" + key + "' must be non-empty without '=' or newline");
  if (value.find('\n') != std::string::npos)
    throw std::invalid_argument("checkpoint meta value for '" + key + "' contains a newline");
  for (auto& kv : meta_)
    if (kv.first == key) {
      kv.second = std::move(value);
      return;
    }
  meta_.emplace_back(key, std::move(value));
}

const std::string* Checkpoint::find_meta(const std::string& key) const {
  for (const auto& kv : meta_)
    if (kv.first == key) return &kv.second;
  return nullptr;
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  const std::string* v = find_meta(key);
  if (!v) throw std::out_of_range("checkpoint has no meta key '" + key + "'");
  return *v;
}

int64_t Checkpoint::meta_int(const std::string& key) const {
  const std::string& s = meta_at(key);
  size_t pos = 0;
  int64_t v = std::stoll(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("checkpoint meta '" + key + "'='" + s + "' is not an integer");
  return v;
}

void Checkpoint::add_tensor(std::string name, std::vector<int> shape, std::vector<float> data) {
  if (name.empty() || name.find(' ') != std::string::npos || name.find('\n') != std::string::npos)
    throw std::invalid_argument("checkpoint tensor name '" + name + "' must be non-empty without spaces");
  if (find_tensor(name)) throw std::invalid_argument("checkpoint already has tensor '" + name + "'");
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("checkpoint tensor '" + name + "': shape " + format_shape(shape) +
                                " does not match " + std::to_string(data.size()) + " values");
  tensors_.push_back(NamedTensor{std::move(name), std::move(shape), std::move(data)});
}

const NamedTensor* Checkpoint::find_tensor(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& Checkpoint::tensor_at(const std::string& name) const {
  const NamedTensor* t = find_tensor(name);
  if (!t) throw std::out_of_range("checkpoint has no tensor '" + name + "'");
  return *t;
}

void Checkpoint::save(const std::string& path) const {
  std::ostringstream header;
  for (const auto& kv : meta_) header << kv.first << "=" << kv.second << "\n";
  for (const auto& t : tensors_) {
    header << "tensor " << t.name;
    for (int d : t.shape) header << " " << d;
    header << "\n";
  }
  const std::string h = header.str();
  if (h.size() > UINT32_MAX) fail(path, "header too large");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(kMagic, 4);
  const uint16_t ver = kVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const uint32_t hlen = static_cast<uint32_t>(h.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& t : tensors_)
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  out.flush();
  if (!out) fail(path, "write failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[4];
  uint16_t ver = 0;
  uint32_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) fail(path, "truncated before header");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(path, "bad magic, not a checkpoint file");
  if (ver != kVersion) fail(path, "unsupported version " + std::to_string(ver));

  std::string h(hlen, '\0');
  in.read(h.data(), hlen);
  if (!in) fail(path, "truncated header");

  Checkpoint ck;
  std::istringstream hs(h);
  std::string line;
  std::vector<std::pair<std::string, std::vector<int>>> pending;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      std::string name;
      ls >> name;
      std::vector<int> shape;
      int d;
      while (ls >> d) {
        if (d <= 0) fail(path, "tensor '" + name + "' has non-positive dimension");
        shape.push_back(d);
      }
      if (name.empty() || shape.empty()) fail(path, "malformed tensor line '" + line + "'");
      pending.emplace_back(name, std::move(shape));
    } else {
      const size_t eq = line.find('=');
      if (eq == std::string::npos || eq == 0) fail(path, "malformed header line '" + line + "'");
      ck.set_meta(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  for (auto& [name, shape] : pending) {
    const int64_t n = shape_numel(shape);
    std::vector<float> data(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 4));
    if (!in) fail(path, "truncated payload for tensor '" + name + "'");
    ck.add_tensor(std::move(name), std::move(shape), std::move(data));
  }
  in.peek();
  if (!in.eof()) fail(path, "trailing bytes after last tensor");
  return ck;
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t hash_tensor_bytes(const std::vector<NamedTensor>& tensors) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& t : tensors) {
    h = fnv1a64(t.name.data(), t.name.size(), h);
    for (int d : t.shape) h = fnv1a64(&d, sizeof(d), h);
    h = fnv1a64(t.data.data(), t.data.size() * 4, h);
  }
  return h;
}

}  // namespace auxtune
