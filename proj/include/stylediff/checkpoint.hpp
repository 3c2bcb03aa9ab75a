#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stylediff/tensor.hpp"

namespace stylediff {

// Single-file checkpoint: magic, version, record count, then per-tensor
// {name length, name, rank, dims, dtype tag, little-endian payload}. Extra
// metadata (config snapshot, trainable-set listing) rides along as u8 records
// under reserved "meta." names.
enum class DtypeTag : uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

struct TensorRecord {
  std::string name;
  Shape shape;
  DtypeTag dtype = DtypeTag::kF32;
  std::vector<uint8_t> payload;

  Tensorf as_f32() const;
  Tensord as_f64() const;
  std::string as_text() const;

  static TensorRecord from_f32(std::string name, const Tensorf& t);
  static TensorRecord from_f64(std::string name, const Tensord& t);
  static TensorRecord from_text(std::string name, const std::string& text);
};

inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const std::vector<TensorRecord>& records);

// verifies magic/version and that the byte stream is complete; throws
// CheckpointError otherwise
std::map<std::string, TensorRecord> read_checkpoint(const std::string& path);

// die with the full list of missing names
void require_names(const std::map<std::string, TensorRecord>& records,
                   const std::vector<std::string>& names);

}  // namespace stylediff
