#include "suslab/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "suslab/error.hpp"

namespace suslab {
namespace {

using nlohmann::json;

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f64_le(std::string& out, double x) { put_u64_le(out, std::bit_cast<std::uint64_t>(x)); }

double get_f64_le(const char* p) { return std::bit_cast<double>(get_u64_le(p)); }

std::int64_t numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

const TensorRecord* TensorContainer::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::int64_t TensorContainer::int_field(const std::string& key) const {
  auto it = fields.find(key);
  require(it != fields.end() && std::holds_alternative<std::int64_t>(it->second),
          ErrorKind::MalformedHeader, "header field '" + key + "' missing or not an integer");
  return std::get<std::int64_t>(it->second);
}

void write_tensor_container(const std::filesystem::path& path, const TensorContainer& c) {
  json header;
  header["kind"] = c.kind;
  header["version"] = c.version;
  for (const auto& [key, value] : c.fields) {
    std::visit([&](const auto& v) { header[key] = v; }, value);
  }
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    require(numel(t.shape) == static_cast<std::int64_t>(t.values.size()), ErrorKind::DimensionMismatch,
            "tensor '" + t.name + "' shape does not match its value count");
    const std::uint64_t nbytes = 8 * t.values.size();
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["tensors"] = manifest;
  header["payload_bytes"] = offset;
  const std::string header_text = header.dump();

  std::string blob(kTensorMagic, sizeof(kTensorMagic));
  put_u64_le(blob, header_text.size());
  blob += header_text;
  blob.reserve(blob.size() + offset);
  for (const auto& t : c.tensors) {
    for (double x : t.values) put_f64_le(blob, x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "short write to '" + path.string() + "'");
}

TensorContainer read_tensor_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  require(blob.size() >= 16 && std::memcmp(blob.data(), kTensorMagic, 8) == 0,
          ErrorKind::MalformedHeader, "'" + path.string() + "' is not a suslab tensor container");
  const std::uint64_t header_len = get_u64_le(blob.data() + 8);
  require(header_len <= blob.size() - 16, ErrorKind::MalformedHeader,
          "header length " + std::to_string(header_len) + " runs past end of file");
  json header;
  try {
    header = json::parse(blob.substr(16, header_len));
  } catch (const json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("unparsable header: ") + e.what());
  }

  TensorContainer c;
  const std::size_t payload_start = 16 + header_len;
  const std::size_t payload_have = blob.size() - payload_start;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.version = header.at("version").get<int>();
    for (const auto& [key, value] : header.items()) {
      if (key == "kind" || key == "version" || key == "tensors" || key == "payload_bytes") continue;
      if (value.is_number_integer()) {
        c.fields[key] = value.get<std::int64_t>();
      } else if (value.is_number()) {
        c.fields[key] = value.get<double>();
      } else if (value.is_string()) {
        c.fields[key] = value.get<std::string>();
      }
    }
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    require(payload_have >= payload_bytes, ErrorKind::TruncatedPayload,
            "payload has " + std::to_string(payload_have) + " bytes, manifest needs " +
                std::to_string(payload_bytes));
    for (const auto& entry : header.at("tensors")) {
      TensorRecord t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      require(static_cast<std::uint64_t>(numel(t.shape)) * 8 == nbytes, ErrorKind::DimensionMismatch,
              "tensor '" + t.name + "' shape disagrees with its byte count");
      require(offset + nbytes <= payload_have, ErrorKind::TruncatedPayload,
              "tensor '" + t.name + "' extends past end of payload");
      t.values.resize(nbytes / 8);
      const char* p = blob.data() + payload_start + offset;
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = get_f64_le(p + 8 * i);
      c.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("malformed header: ") + e.what());
  }
  return c;
}

}  // namespace suslab
