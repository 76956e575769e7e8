#include "ndfsr/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace ndfsr {

namespace {

constexpr char kMagic[4] = {'N', 'D', 'F', 'P'};

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf) : buf_(buf) {}
  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t pos() const { return pos_; }

  void need(std::size_t n, const char* what) {
    if (remaining() < n)
      throw CheckpointTruncationError(std::string("checkpoint truncated while reading ") +
                                      what);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(buf_[pos_]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_ + 1])) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
  static const auto table = make_crc_table();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::uint32_t crc32_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for checksum: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return crc32(buf.data(), buf.size());
}

void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, Checkpoint::kFormatVersion);
  std::string cfg = serialize_config(cp.config);
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const auto& [name, t] : cp.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u64(out, e);
    for (double v : t.values()) put_f64(out, v);
  }
  put_u32(out, crc32(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 + 2 + 4 + 4) throw CheckpointTruncationError("checkpoint file too short");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw CheckpointError("bad magic bytes, not a checkpoint file");

  // trailing CRC covers everything before it
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[buf.size() - 4 + i]))
              << (8 * i);
  std::uint32_t computed = crc32(buf.data(), buf.size() - 4);
  if (stored != computed)
    throw CheckpointChecksumError("checkpoint checksum mismatch (file corrupted)");

  std::string body = buf.substr(0, buf.size() - 4);
  Reader r(body);
  r.bytes(4, "magic");
  std::uint16_t version = r.u16("version");
  if (version != Checkpoint::kFormatVersion)
    throw CheckpointVersionError("unsupported checkpoint format version " +
                                 std::to_string(version));
  Checkpoint cp;
  std::uint32_t cfg_len = r.u32("config length");
  cp.config = parse_config_text(r.bytes(cfg_len, "config block"));
  while (r.remaining() > 0) {
    std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.bytes(name_len, "tensor name");
    std::uint32_t rank = r.u32("tensor rank");
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u64("tensor extent"));
      count *= shape.back();
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) values[i] = r.f64("tensor values");
    cp.tensors.emplace_back(std::move(name),
                            Tensor::leaf(std::move(shape), std::move(values), true));
  }
  return cp;
}

}  // namespace ndfsr
