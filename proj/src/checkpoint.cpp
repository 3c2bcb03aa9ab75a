#include "stylediff/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace stylediff {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'C', 'P'};

size_t dtype_size(DtypeTag t) {
  switch (t) {
    case DtypeTag::kF32: return 4;
    case DtypeTag::kF64: return 8;
    case DtypeTag::kU8: return 1;
  }
  throw CheckpointError("unknown dtype tag");
}

template <class T>
void put(std::vector<uint8_t>& b, T v) {
  // little-endian host assumed; payloads are byte-copied
  uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  b.insert(b.end(), raw, raw + sizeof(T));
}

template <class T>
T take(const std::vector<uint8_t>& b, size_t& off) {
  if (off + sizeof(T) > b.size()) throw CheckpointError("truncated checkpoint");
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

Tensorf TensorRecord::as_f32() const {
  if (dtype != DtypeTag::kF32) throw CheckpointError(name + " is not float32");
  Tensorf t = Tensorf::uninit(shape);
  std::memcpy(t.data(), payload.data(), payload.size());
  return t;
}

Tensord TensorRecord::as_f64() const {
  if (dtype != DtypeTag::kF64) throw CheckpointError(name + " is not float64");
  Tensord t = Tensord::uninit(shape);
  std::memcpy(t.data(), payload.data(), payload.size());
  return t;
}

std::string TensorRecord::as_text() const {
  if (dtype != DtypeTag::kU8) throw CheckpointError(name + " is not a text record");
  return std::string(payload.begin(), payload.end());
}

TensorRecord TensorRecord::from_f32(std::string name, const Tensorf& t) {
  TensorRecord r;
  r.name = std::move(name);
  r.shape = t.shape();
  r.dtype = DtypeTag::kF32;
  r.payload.resize(static_cast<size_t>(t.numel()) * 4);
  std::memcpy(r.payload.data(), t.data(), r.payload.size());
  return r;
}

TensorRecord TensorRecord::from_f64(std::string name, const Tensord& t) {
  TensorRecord r;
  r.name = std::move(name);
  r.shape = t.shape();
  r.dtype = DtypeTag::kF64;
  r.payload.resize(static_cast<size_t>(t.numel()) * 8);
  std::memcpy(r.payload.data(), t.data(), r.payload.size());
  return r;
}

TensorRecord TensorRecord::from_text(std::string name, const std::string& text) {
  TensorRecord r;
  r.name = std::move(name);
  r.shape = {static_cast<Index>(text.empty() ? 1 : text.size())};
  r.dtype = DtypeTag::kU8;
  r.payload.assign(text.begin(), text.end());
  if (r.payload.empty()) r.payload.push_back(0);
  return r;
}

void write_checkpoint(const std::string& path, const std::vector<TensorRecord>& records) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put<uint32_t>(buf, kCheckpointVersion);
  put<uint32_t>(buf, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    put<uint32_t>(buf, static_cast<uint32_t>(r.name.size()));
    buf.insert(buf.end(), r.name.begin(), r.name.end());
    put<uint32_t>(buf, static_cast<uint32_t>(r.shape.size()));
    for (Index d : r.shape) put<uint64_t>(buf, static_cast<uint64_t>(d));
    put<uint8_t>(buf, static_cast<uint8_t>(r.dtype));
    Index n = shape_numel(r.shape);
    if (r.payload.size() != static_cast<size_t>(n) * dtype_size(r.dtype))
      throw CheckpointError(r.name + ": payload does not match shape");
    buf.insert(buf.end(), r.payload.begin(), r.payload.end());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("short write on " + path);
}

std::map<std::string, TensorRecord> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t off = 0;
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw CheckpointError(path + " is not a checkpoint file");
  off = 4;
  uint32_t version = take<uint32_t>(buf, off);
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": version " + std::to_string(version) +
                          " incompatible with reader version " +
                          std::to_string(kCheckpointVersion));
  uint32_t count = take<uint32_t>(buf, off);
  std::map<std::string, TensorRecord> out;
  for (uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    uint32_t name_len = take<uint32_t>(buf, off);
    if (off + name_len > buf.size()) throw CheckpointError("truncated checkpoint");
    r.name.assign(reinterpret_cast<const char*>(buf.data() + off), name_len);
    off += name_len;
    uint32_t rank = take<uint32_t>(buf, off);
    if (rank > 8) throw CheckpointError(r.name + ": implausible rank");
    for (uint32_t k = 0; k < rank; ++k)
      r.shape.push_back(static_cast<Index>(take<uint64_t>(buf, off)));
    r.dtype = static_cast<DtypeTag>(take<uint8_t>(buf, off));
    size_t bytes = static_cast<size_t>(shape_numel(r.shape)) * dtype_size(r.dtype);
    if (off + bytes > buf.size()) throw CheckpointError("truncated checkpoint");
    r.payload.assign(buf.begin() + static_cast<long>(off), buf.begin() + static_cast<long>(off + bytes));
    off += bytes;
    out.emplace(r.name, std::move(r));
  }
  if (off != buf.size()) throw CheckpointError(path + ": trailing bytes after last record");
  return out;
}

void require_names(const std::map<std::string, TensorRecord>& records,
                   const std::vector<std::string>& names) {
  std::string missing;
  for (const auto& n : names)
    if (!records.count(n)) missing += (missing.empty() ? "" : ", ") + n;
  if (!missing.empty()) throw CheckpointError("checkpoint is missing tensors: " + missing);
}

}  // namespace stylediff
