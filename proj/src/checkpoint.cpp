#include "promptcam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "promptcam/rng.hpp"

using nlohmann::json;

namespace pcam {

namespace {

// Buffers are stored little-endian regardless of host order.
void to_le_bytes(const double* src, std::size_t count, std::vector<std::uint8_t>& out) {
  const std::size_t start = out.size();
  out.resize(start + count * sizeof(double));
  std::memcpy(out.data() + start, src, count * sizeof(double));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint8_t* p = out.data() + start + i * sizeof(double);
      std::reverse(p, p + sizeof(double));
    }
  }
}

void from_le_bytes(const std::uint8_t* src, std::size_t count, double* out) {
  std::memcpy(out, src, count * sizeof(double));
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<std::uint8_t*>(out);
    for (std::size_t i = 0; i < count; ++i)
      std::reverse(bytes + i * sizeof(double), bytes + (i + 1) * sizeof(double));
  }
}

std::string checksum_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::uint64_t fields_checksum(
    const std::vector<std::pair<std::string, TensorPtr>>& fields) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::vector<std::uint8_t> bytes;
  for (const auto& [name, tensor] : fields) {
    bytes.clear();
    to_le_bytes(tensor->data.data(), tensor->size(), bytes);
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

void write_checkpoint(const std::string& path, const std::string& kind,
                      const json& meta,
                      const std::vector<std::pair<std::string, TensorPtr>>& fields) {
  json manifest;
  manifest["kind"] = kind;
  manifest["meta"] = meta;
  json field_list = json::array();
  for (const auto& [name, tensor] : fields)
    field_list.push_back(json{{"name", name}, {"shape", tensor->shape}});
  manifest["fields"] = field_list;
  manifest["checksum"] = checksum_hex(fields_checksum(fields));

  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  const std::string header = manifest.dump();  // compact: no embedded newlines
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  std::vector<std::uint8_t> bytes;
  for (const auto& [name, tensor] : fields) {
    bytes.clear();
    to_le_bytes(tensor->data.data(), tensor->size(), bytes);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error(path + ": missing manifest line");
  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": bad checkpoint manifest: " + e.what());
  }

  Checkpoint ck;
  ck.kind = manifest.at("kind").get<std::string>();
  ck.meta = manifest.at("meta");
  for (const auto& f : manifest.at("fields")) {
    auto shape = f.at("shape").get<std::vector<std::size_t>>();
    auto tensor = make_tensor(shape);
    const std::size_t n = tensor->size();
    std::vector<std::uint8_t> bytes(n * sizeof(double));
    in.read(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size())
      throw std::runtime_error(path + ": truncated buffer for field '" +
                               f.at("name").get<std::string>() + "'");
    from_le_bytes(bytes.data(), n, tensor->data.data());
    ck.fields.emplace_back(f.at("name").get<std::string>(), std::move(tensor));
  }
  const std::string want = manifest.at("checksum").get<std::string>();
  const std::string got = checksum_hex(fields_checksum(ck.fields));
  if (want != got)
    throw std::runtime_error(path + ": checksum mismatch: manifest " + want +
                             " vs buffers " + got);
  return ck;
}

const TensorPtr& Checkpoint::field(const std::string& name) const {
  for (const auto& [n, t] : fields)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: missing field '" + name + "'");
}

}  // namespace pcam
