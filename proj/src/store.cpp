#include "seg25d/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace seg25d {

namespace {

constexpr char kVolumeMagic[] = "MVOL1";
constexpr char kCheckpointMagic[] = "NPCK1";
constexpr std::size_t kMagicLen = 5;

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }
  void reserve(std::size_t n) { out_.reserve(n); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& in, const char* what) : in_(in), what_(what) {}

  void need(std::size_t n, const std::string& field) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string(what_) + ": truncated at byte offset " +
                        std::to_string(pos_) + " reading " + field + ": expected " +
                        std::to_string(n) + " bytes, got " +
                        std::to_string(in_.size() - pos_) + " (file length " +
                        std::to_string(in_.size()) + ", expected at least " +
                        std::to_string(pos_ + n) + ")");
    }
  }
  std::uint8_t u8(const std::string& field) {
    need(1, field);
    return in_[pos_++];
  }
  std::uint16_t u16(const std::string& field) {
    need(2, field);
    std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const std::string& field) { return std::bit_cast<float>(u32(field)); }
  std::string str(std::size_t n, const std::string& field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic(const char* expected) {
    if (in_.size() < kMagicLen ||
        std::memcmp(in_.data(), expected, kMagicLen) != 0) {
      throw FormatError(std::string(what_) + ": bad magic at byte offset 0, expected \"" +
                        expected + "\"");
    }
    pos_ = kMagicLen;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(std::string(what_) + ": " + msg + " at byte offset " +
                      std::to_string(pos_));
  }

 private:
  const std::vector<std::uint8_t>& in_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  const auto& d = v.dims();
  const bool as_u8 = v.modality() == Modality::MASK;
  ByteWriter w;
  w.reserve(32 + d.count() * (as_u8 ? 1 : 4));
  w.bytes(kVolumeMagic, kMagicLen);
  w.u8(as_u8 ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(d.x));
  w.u32(static_cast<std::uint32_t>(d.y));
  w.u32(static_cast<std::uint32_t>(d.z));
  w.f32(v.voxel_mm().x);
  w.f32(v.voxel_mm().y);
  w.f32(v.voxel_mm().z);
  w.u8(static_cast<std::uint8_t>(v.modality()));
  for (double x : v.data()) {
    if (as_u8) {
      w.u8(static_cast<std::uint8_t>(x));
    } else {
      w.f32(static_cast<float>(x));
    }
  }
  return w.take();
}

Volume decode_volume(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "MVOL1");
  r.magic(kVolumeMagic);
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype > 1) r.fail("unknown dtype " + std::to_string(dtype));
  Dims d{r.u32("dx"), r.u32("dy"), r.u32("dz")};
  if (d.count() == 0) r.fail("zero dimension");
  VoxelSize vs{r.f32("vx"), r.f32("vy"), r.f32("vz")};
  const std::uint8_t mod = r.u8("modality");
  if (mod > 3) r.fail("unknown modality " + std::to_string(mod));
  const auto modality = static_cast<Modality>(mod);
  if ((modality == Modality::MASK) != (dtype == 1)) {
    r.fail("dtype " + std::to_string(dtype) + " does not match modality " +
           to_string(modality));
  }
  const std::size_t elem = dtype == 1 ? 1 : 4;
  const std::size_t payload = d.count() * elem;
  if (r.remaining() != payload) {
    throw FormatError("MVOL1: payload at byte offset " + std::to_string(r.pos()) +
                      " has " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(payload) + " (file length " +
                      std::to_string(bytes.size()) + ", expected " +
                      std::to_string(r.pos() + payload) + ")");
  }
  std::vector<double> data(d.count());
  for (auto& x : data) x = dtype == 1 ? static_cast<double>(r.u8("voxel")) : r.f32("voxel");
  Volume v(d, vs, modality, std::move(data));
  try {
    v.validate();
  } catch (const DataError& e) {
    throw FormatError(std::string("MVOL1: ") + e.what());
  }
  return v;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  write_file_bytes(path, encode_volume(v));
}

Volume read_volume(const std::filesystem::path& path) {
  try {
    return decode_volume(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void ModelCheckpoint::add(std::string name, TensorF tensor) {
  if (find(name) != nullptr) throw FormatError("duplicate checkpoint entry " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
}

void ModelCheckpoint::set(const std::string& name, TensorF tensor) {
  for (auto& e : entries_) {
    if (e.name == name) {
      e.tensor = std::move(tensor);
      return;
    }
  }
  entries_.push_back({name, std::move(tensor)});
}

const TensorF* ModelCheckpoint::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

const TensorF& ModelCheckpoint::get(const std::string& name) const {
  const TensorF* t = find(name);
  if (t == nullptr) throw FormatError("checkpoint has no entry " + name);
  return *t;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& c) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, kMagicLen);
  w.u32(static_cast<std::uint32_t>(c.size()));
  std::unordered_set<std::string> names;
  for (const auto& e : c.entries()) {
    if (!names.insert(e.name).second) throw FormatError("duplicate checkpoint entry " + e.name);
    if (e.name.size() > 0xFFFF) throw FormatError("checkpoint name too long: " + e.name);
    if (e.tensor.rank() > 0xFF) throw FormatError("tensor rank too large: " + e.name);
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.tensor.data()) w.f32(v);
  }
  return w.take();
}

ModelCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "NPCK1");
  r.magic(kCheckpointMagic);
  const std::uint32_t count = r.u32("entry count");
  ModelCheckpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string field = "entry " + std::to_string(i);
    const std::uint16_t len = r.u16(field + " name length");
    const std::size_t name_at = r.pos();
    std::string name = r.str(len, field + " name");
    const std::uint8_t rank = r.u8(field + " rank");
    if (rank == 0) r.fail("zero rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32(field + " dims");
      if (d == 0) r.fail("zero extent for " + name);
    }
    const std::size_t n = shape_size(shape);
    r.need(n * 4, field + " payload (" + name + ")");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32("payload");
    if (c.find(name) != nullptr) {
      throw FormatError("NPCK1: duplicate entry " + name + " at byte offset " +
                        std::to_string(name_at));
    }
    c.add(std::move(name), TensorF(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void write_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(c));
}

ModelCheckpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace seg25d
