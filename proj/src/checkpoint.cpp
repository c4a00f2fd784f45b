#include "xmac/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace xmac {

namespace {

using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'X', 'M', 'A', 'C'};
constexpr uint32_t kVersion = 1;

struct Entry {
  std::string name;
  std::vector<int64_t> shape;
  uint64_t byte_offset = 0;
  uint64_t byte_len = 0;
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  ordered_json manifest = ordered_json::array();
  uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const std::vector<int64_t>& shape, size_t n) {
    const uint64_t len = static_cast<uint64_t>(n) * sizeof(float);
    manifest.push_back({{"name", name},
                        {"shape", shape},
                        {"byte_offset", offset},
                        {"byte_len", len}});
    offset += len;
  };
  for (const auto& [name, t] : model.params) add_entry(name, t.shape, t.data->size());
  for (const auto& [name, buf] : model.buffers)
    add_entry(name, {static_cast<int64_t>(buf->size())}, buf->size());

  ordered_json header;
  header["config"] = ordered_json::parse(model.config.to_json());
  header["tensors"] = std::move(manifest);
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  const uint32_t version = kVersion;
  const uint32_t hlen = static_cast<uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, t] : model.params)
    out.write(reinterpret_cast<const char*>(t.data->data()),
              static_cast<std::streamsize>(t.data->size() * sizeof(float)));
  for (const auto& [name, buf] : model.buffers)
    out.write(reinterpret_cast<const char*>(buf->data()),
              static_cast<std::streamsize>(buf->size() * sizeof(float)));
  if (!out) throw IoError("short write while saving checkpoint: " + path);
}

Model load_checkpoint(const std::string& path, int expected_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12) throw ParseError("checkpoint truncated before header: " + path);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("checkpoint has bad magic: " + path);
  uint32_t version = 0, hlen = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&hlen, bytes.data() + 8, 4);
  if (version != kVersion)
    throw ParseError("checkpoint version " + std::to_string(version) + " unsupported (want " +
                     std::to_string(kVersion) + "): " + path);
  if (bytes.size() < 12 + static_cast<size_t>(hlen))
    throw ParseError("checkpoint truncated inside header: " + path);

  ordered_json header;
  try {
    header = ordered_json::parse(bytes.substr(12, hlen));
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  ModelConfig config;
  try {
    config = ModelConfig::from_json(header.at("config").dump());
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint header malformed: ") + e.what());
  }
  if (expected_classes >= 0 && config.num_classes != expected_classes)
    throw ConfigError("checkpoint declares " + std::to_string(config.num_classes) +
                      " classes but " + std::to_string(expected_classes) + " were requested");

  std::vector<Entry> entries;
  uint64_t blob_len = 0;
  try {
    for (const auto& e : header.at("tensors")) {
      Entry entry;
      entry.name = e.at("name").get<std::string>();
      entry.shape = e.at("shape").get<std::vector<int64_t>>();
      entry.byte_offset = e.at("byte_offset").get<uint64_t>();
      entry.byte_len = e.at("byte_len").get<uint64_t>();
      blob_len = std::max(blob_len, entry.byte_offset + entry.byte_len);
      entries.push_back(std::move(entry));
    }
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint manifest malformed: ") + e.what());
  }
  const char* blob = bytes.data() + 12 + hlen;
  const uint64_t avail = bytes.size() - 12 - hlen;
  if (avail != blob_len)
    throw ParseError("checkpoint blob length " + std::to_string(avail) +
                     " disagrees with manifest total " + std::to_string(blob_len) + ": " + path);

  Model model = build_model<float>(config, 0);
  for (const auto& entry : entries) {
    float* dst = nullptr;
    size_t want = 0;
    if (auto* p = model.find_param(entry.name)) {
      if (p->shape != entry.shape)
        throw ParseError("checkpoint tensor '" + entry.name + "' shape mismatch");
      dst = p->ptr();
      want = p->data->size();
    } else {
      for (auto& [bname, buf] : model.buffers)
        if (bname == entry.name) {
          dst = buf->data();
          want = buf->size();
          break;
        }
    }
    if (!dst) throw ParseError("checkpoint names unknown tensor '" + entry.name + "'");
    if (entry.byte_len != want * sizeof(float))
      throw ParseError("checkpoint tensor '" + entry.name + "' has byte_len " +
                       std::to_string(entry.byte_len) + ", expected " +
                       std::to_string(want * sizeof(float)));
    std::memcpy(dst, blob + entry.byte_offset, entry.byte_len);
  }
  return model;
}

}  // namespace xmac
