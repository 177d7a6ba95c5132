#pragma once

#include "mudec/signal.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace mudec::io {

// ---------------------------------------------------------------------------
// CRC32 (IEEE, reflected, poly 0xEDB88320)
// ---------------------------------------------------------------------------

inline const std::array<std::uint32_t, 256>& crc32_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1U) ? 0xEDB88320U ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

inline std::uint32_t crc32(const void* data, size_t len, std::uint32_t crc = 0) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  crc ^= 0xFFFFFFFFU;
  for (size_t i = 0; i < len; ++i) crc = crc32_table()[(crc ^ p[i]) & 0xFFU] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFU;
}

// ---------------------------------------------------------------------------
// Byte buffer helpers (little-endian on every supported target)
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const size_t n = buf_.size();
    buf_.resize(n + sizeof(T));
    std::memcpy(buf_.data() + n, &v, sizeof(T));
  }
  void put_bytes(const void* p, size_t len) {
    const size_t n = buf_.size();
    buf_.resize(n + len);
    std::memcpy(buf_.data() + n, p, len);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

  void write_with_crc(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    const std::uint32_t crc = crc32(buf_.data(), buf_.size());
    out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    if (!out) throw DataError("write failed: " + path);
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> buf) : buf_(std::move(buf)) {}

  static ByteReader from_file_with_crc(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open for reading: " + path);
    const auto size = static_cast<size_t>(in.tellg());
    if (size < 4) throw DataError("file too short: " + path);
    std::vector<std::uint8_t> buf(size);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!in) throw DataError("read failed: " + path);
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + size - 4, 4);
    buf.resize(size - 4);
    if (crc32(buf.data(), buf.size()) != stored)
      throw DataError("CRC mismatch: " + path);
    return ByteReader(std::move(buf));
  }

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > buf_.size()) throw DataError("container truncated");
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto len = get<std::uint32_t>();
    if (pos_ + len > buf_.size()) throw DataError("container truncated");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  void get_bytes(void* p, size_t len) {
    if (pos_ + len > buf_.size()) throw DataError("container truncated");
    std::memcpy(p, buf_.data() + pos_, len);
    pos_ += len;
  }
  size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// MDC1 signal container
// ---------------------------------------------------------------------------
// magic "MDC1" | u16 version | u32 channels | u64 samples | f64 rate |
// u8 units | label block | row-major f32 payload | u32 CRC32

inline constexpr std::uint16_t kMdcVersion = 1;

inline void write_signal(const MultiChannelSignal& sig, const std::string& path) {
  ByteWriter w;
  w.put_bytes("MDC1", 4);
  w.put<std::uint16_t>(kMdcVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sig.channels()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(sig.samples()));
  w.put<double>(sig.sample_rate_hz);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(sig.units));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sig.channel_labels.size()));
  for (const std::string& label : sig.channel_labels) w.put_string(label);
  for (Eigen::Index c = 0; c < sig.channels(); ++c)
    for (Eigen::Index n = 0; n < sig.samples(); ++n)
      w.put<float>(static_cast<float>(sig.data(c, n)));
  w.write_with_crc(path);
}

inline MultiChannelSignal read_signal(const std::string& path) {
  ByteReader r = ByteReader::from_file_with_crc(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "MDC1", 4) != 0) throw DataError("bad magic (not MDC1): " + path);
  const auto version = r.get<std::uint16_t>();
  if (version != kMdcVersion)
    throw DataError("unsupported MDC1 version " + std::to_string(version) + ": " + path);
  const auto channels = r.get<std::uint32_t>();
  const auto samples = r.get<std::uint64_t>();
  MultiChannelSignal sig;
  sig.sample_rate_hz = r.get<double>();
  sig.units = static_cast<SignalUnits>(r.get<std::uint8_t>());
  const auto n_labels = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_labels; ++i) sig.channel_labels.push_back(r.get_string());
  if (r.remaining() != static_cast<size_t>(channels) * samples * sizeof(float))
    throw DataError("payload size does not match declared dimensions: " + path);
  sig.data.resize(channels, static_cast<Eigen::Index>(samples));
  for (std::uint32_t c = 0; c < channels; ++c)
    for (std::uint64_t n = 0; n < samples; ++n)
      sig.data(c, static_cast<Eigen::Index>(n)) = static_cast<double>(r.get<float>());
  return sig;
}

// ---------------------------------------------------------------------------
// MDP1 parameter checkpoint
// ---------------------------------------------------------------------------
// magic "MDP1" | u16 version | json metadata string | u32 param count |
// per param: name, u32 ndims, u64 dims..., f32 values | u32 CRC32

struct Checkpoint {
  std::string metadata_json;
  std::vector<std::string> names;
  std::vector<std::vector<Eigen::Index>> shapes;
  std::vector<std::vector<float>> values;
};

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  ByteWriter w;
  w.put_bytes("MDP1", 4);
  w.put<std::uint16_t>(kMdcVersion);
  w.put_string(ck.metadata_json);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.names.size()));
  for (size_t p = 0; p < ck.names.size(); ++p) {
    w.put_string(ck.names[p]);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.shapes[p].size()));
    for (Eigen::Index d : ck.shapes[p]) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.put_bytes(ck.values[p].data(), ck.values[p].size() * sizeof(float));
  }
  w.write_with_crc(path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  ByteReader r = ByteReader::from_file_with_crc(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "MDP1", 4) != 0) throw DataError("bad magic (not MDP1): " + path);
  const auto version = r.get<std::uint16_t>();
  if (version != kMdcVersion)
    throw DataError("unsupported MDP1 version " + std::to_string(version) + ": " + path);
  Checkpoint ck;
  ck.metadata_json = r.get_string();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t p = 0; p < n; ++p) {
    ck.names.push_back(r.get_string());
    const auto ndims = r.get<std::uint32_t>();
    std::vector<Eigen::Index> shape;
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      const auto dim = r.get<std::uint64_t>();
      shape.push_back(static_cast<Eigen::Index>(dim));
      count *= dim;
    }
    ck.shapes.push_back(std::move(shape));
    std::vector<float> vals(count);
    r.get_bytes(vals.data(), count * sizeof(float));
    ck.values.push_back(std::move(vals));
  }
  return ck;
}

/// CRC of a whole file, for byte-identity checks.
inline std::uint32_t file_crc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open: " + path);
  const auto size = static_cast<size_t>(in.tellg());
  std::vector<std::uint8_t> buf(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  return crc32(buf.data(), buf.size());
}

}  // namespace mudec::io
