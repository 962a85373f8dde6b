#include "pointkit/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pointkit {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint32_t u32() {
    if (pos_ + 4 > data_.size()) fail("truncated file");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(data_[pos_ + i]);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void magic(const char* expect) {
    if (pos_ + 4 > data_.size() || std::memcmp(data_.data() + pos_, expect, 4) != 0) {
      fail(std::string("bad magic, expected ") + expect);
    }
    pos_ += 4;
  }
  void done() {
    if (pos_ != data_.size()) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& msg) {
    throw std::runtime_error(path_ + ": " + msg);
  }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void dump(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void write_ptpc(const std::string& path, const PointCloud& cloud,
                const std::vector<std::uint32_t>* labels) {
  const std::size_t n = cloud.size();
  const std::size_t c = cloud.channels();
  if (labels && labels->size() != n) {
    throw std::invalid_argument("write_ptpc: " + std::to_string(labels->size()) +
                                " labels for " + std::to_string(n) + " points");
  }
  std::string buf;
  buf.reserve(20 + n * (3 + c) * 4 + (labels ? n * 4 : 0));
  buf.append("PTPC", 4);
  put_u32(buf, 1);                      // version
  put_u32(buf, labels ? 1u : 0u);       // flags
  put_u32(buf, static_cast<std::uint32_t>(n));
  put_u32(buf, static_cast<std::uint32_t>(c));
  for (std::size_t i = 0; i < n * 3; ++i) put_f32(buf, static_cast<float>(cloud.positions[i]));
  for (std::size_t i = 0; i < n * c; ++i) put_f32(buf, static_cast<float>(cloud.features[i]));
  if (labels) {
    for (std::uint32_t l : *labels) put_u32(buf, l);
  }
  dump(path, buf);
}

PtpcFile read_ptpc(const std::string& path) {
  Reader r(slurp(path), path);
  r.magic("PTPC");
  const std::uint32_t version = r.u32();
  if (version != 1) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t flags = r.u32();
  if (flags & ~1u) r.fail("unknown flag bits");
  const std::size_t n = r.u32();
  const std::size_t c = r.u32();
  Tensor pos({n, 3});
  for (std::size_t i = 0; i < n * 3; ++i) pos[i] = static_cast<double>(r.f32());
  Tensor feat({n, c});
  for (std::size_t i = 0; i < n * c; ++i) feat[i] = static_cast<double>(r.f32());
  PtpcFile file;
  if (flags & 1u) {
    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = r.u32();
    file.labels = std::move(labels);
  }
  r.done();
  file.cloud = PointCloud(std::move(pos), std::move(feat));
  return file;
}

void write_logits(const std::string& path, const Tensor& logits) {
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  std::string buf;
  buf.reserve(16 + n * classes * 4);
  buf.append("PTLG", 4);
  put_u32(buf, 1);
  put_u32(buf, static_cast<std::uint32_t>(n));
  put_u32(buf, static_cast<std::uint32_t>(classes));
  for (std::size_t i = 0; i < n * classes; ++i) put_f32(buf, static_cast<float>(logits[i]));
  dump(path, buf);
}

Tensor read_logits(const std::string& path) {
  Reader r(slurp(path), path);
  r.magic("PTLG");
  const std::uint32_t version = r.u32();
  if (version != 1) r.fail("unsupported version " + std::to_string(version));
  const std::size_t n = r.u32();
  const std::size_t classes = r.u32();
  Tensor out({n, classes});
  for (std::size_t i = 0; i < n * classes; ++i) out[i] = static_cast<double>(r.f32());
  r.done();
  return out;
}

}  // namespace pointkit
