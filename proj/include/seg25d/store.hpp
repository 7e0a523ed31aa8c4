#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seg25d/tensor.hpp"
#include "seg25d/volume.hpp"

namespace seg25d {

// MVOL1 layout, all little-endian:
//   "MVOL1" | u8 dtype (0 = f32, 1 = u8) | u32 dx, dy, dz | f32 vx, vy, vz |
//   u8 modality | payload, x fastest
// MASK volumes are written as u8, everything else as f32.
std::vector<std::uint8_t> encode_volume(const Volume& v);
Volume decode_volume(const std::vector<std::uint8_t>& bytes);

void write_volume(const Volume& v, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

struct CheckpointEntry {
  std::string name;
  TensorF tensor;

  bool operator==(const CheckpointEntry&) const = default;
};

// Ordered named tensors. Names are unique.
class ModelCheckpoint {
 public:
  void add(std::string name, TensorF tensor);
  // Replaces an existing entry or appends a new one.
  void set(const std::string& name, TensorF tensor);

  const TensorF* find(const std::string& name) const;
  const TensorF& get(const std::string& name) const;  // throws FormatError

  const std::vector<CheckpointEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  bool operator==(const ModelCheckpoint&) const = default;

 private:
  std::vector<CheckpointEntry> entries_;
};

// NPCK1 layout, all little-endian:
//   "NPCK1" | u32 count | per entry: u16 name length | UTF-8 name | u8 rank |
//   u32 dims[rank] | f32 payload
std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& c);
ModelCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path);
ModelCheckpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& bytes);

}  // namespace seg25d
