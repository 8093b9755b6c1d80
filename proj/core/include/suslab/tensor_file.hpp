#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

// Binary container shared by model checkpoints and Fisher matrix dumps:
//
//   bytes 0..7    magic "SUSLABT1"
//   bytes 8..15   header length H, uint64 little-endian
//   next H bytes  JSON header: {"kind", "version", <scalar fields>...,
//                 "tensors": [{"name", "shape", "offset", "nbytes"}, ...],
//                 "payload_bytes"}
//   remainder     payload of little-endian IEEE-754 float64 values; each
//                 tensor's offset is relative to the payload start.
namespace suslab {

using HeaderValue = std::variant<std::int64_t, double, std::string>;

struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> values;
};

struct TensorContainer {
  std::string kind;
  int version = 1;
  std::map<std::string, HeaderValue> fields;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  std::int64_t int_field(const std::string& key) const;  // MalformedHeader if absent
};

inline constexpr char kTensorMagic[8] = {'S', 'U', 'S', 'L', 'A', 'B', 'T', '1'};

void write_tensor_container(const std::filesystem::path& path, const TensorContainer& container);

/// Throws MalformedHeader (bad magic, unparsable or inconsistent header),
/// TruncatedPayload (file shorter than the manifest) or Io.
TensorContainer read_tensor_container(const std::filesystem::path& path);

}  // namespace suslab
