#include "flatlora/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "flatlora/errors.hpp"
#include "json.hpp"
#include "serialize_detail.hpp"

namespace flatlora {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'L', 'T', 'L', 'O', 'R', 'A', '1'};
constexpr int kVersion = 1;

void write_u64_le(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  char bytes[8];
  in.read(bytes, 8);
  if (!in) throw StateError("checkpoint: truncated while reading length field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i]))
         << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     std::uint64_t build_seed,
                     const std::vector<PerturbationRecord>& records,
                     const std::string& config_echo) {
  Model shared = model;  // tensor handles alias the caller's storage
  auto named = shared.named_tensors();

  json directory = json::array();
  std::uint64_t offset = 0;  // in doubles, from the start of the payload
  for (const auto& [name, t] : named) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["count"] = t.numel();
    directory.push_back(std::move(entry));
    offset += t.numel();
  }

  json header;
  header["version"] = kVersion;
  header["build_seed"] = build_seed;
  header["spec"] = detail::spec_to_json(model.spec);
  header["tensors"] = std::move(directory);
  json recs = json::array();
  for (const auto& r : records) recs.push_back(detail::record_to_json(r));
  header["records"] = std::move(recs);
  header["config"] = config_echo;
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, 8);
  write_u64_le(out, header_bytes.size());
  out.write(header_bytes.data(),
            static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, t] : named) {
    const auto& data = t.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw StateError("checkpoint: write to '" + path + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("checkpoint: cannot open '" + path + "'");

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw StateError("checkpoint: '" + path + "' is not a checkpoint file");

  const std::uint64_t header_len = read_u64_le(in);
  if (header_len == 0 || header_len > (1ull << 30))
    throw StateError("checkpoint: implausible header length");
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw StateError("checkpoint: truncated header");

  json header;
  try {
    header = json::parse(header_bytes);
  } catch (const json::parse_error& e) {
    throw StateError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  detail::reject_unknown_keys(
      header, {"version", "build_seed", "spec", "tensors", "records", "config"},
      "checkpoint header");
  if (header.at("version").get<int>() != kVersion)
    throw StateError("checkpoint: unsupported format version");

  LoadedCheckpoint loaded;
  loaded.build_seed = header.at("build_seed").get<std::uint64_t>();
  loaded.config_echo = header.value("config", "");
  const ModelSpec spec = detail::spec_from_json(header.at("spec"));
  loaded.model = build_model(spec, RngStream::from_seed(loaded.build_seed));

  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : loaded.model.named_tensors()) by_name.emplace(name, t);

  std::uint64_t expected_offset = 0;
  std::size_t covered = 0;
  for (const auto& entry : header.at("tensors")) {
    detail::reject_unknown_keys(entry, {"name", "shape", "offset", "count"},
                                "checkpoint tensor entry");
    const std::string name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw StateError("checkpoint: tensor '" + name +
                       "' does not exist in a model built from the stored spec");
    Tensor t = it->second;
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape())
      throw StateError("checkpoint: shape mismatch for tensor '" + name + "'");
    const auto count = entry.at("count").get<std::uint64_t>();
    const auto stored_offset = entry.at("offset").get<std::uint64_t>();
    if (count != t.numel() || stored_offset != expected_offset)
      throw StateError("checkpoint: inconsistent directory entry for '" + name +
                       "'");
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in)
      throw StateError("checkpoint: truncated payload at tensor '" + name + "'");
    expected_offset += count;
    ++covered;
  }
  if (covered != by_name.size())
    throw StateError("checkpoint: directory covers " + std::to_string(covered) +
                     " tensors but the model has " +
                     std::to_string(by_name.size()));
  if (in.peek() != std::char_traits<char>::eof())
    throw StateError("checkpoint: trailing bytes after payload");

  for (const auto& rj : header.at("records"))
    loaded.records.push_back(detail::record_from_json(rj));

  return loaded;
}

}  // namespace flatlora
