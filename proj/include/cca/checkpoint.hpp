#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cca/encoder.hpp"
#include "cca/error.hpp"

// Checkpoint container: magic "CCAE", format_version u32, a length-prefixed
// UTF-8 JSON header, then named float32 blobs with explicit shapes. All
// integers and floats are little-endian.

namespace cca {

inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

inline nlohmann::json config_to_json(const EncoderConfig& c) {
  return {{"family", to_string(c.family)},   {"num_layers", c.num_layers},
          {"hidden_size", c.hidden_size},    {"num_heads", c.num_heads},
          {"embed_size", c.embed_size},      {"vocab_size", c.vocab_size},
          {"max_len", c.max_len},            {"dropout", c.dropout}};
}

inline EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.family = parse_family(j.at("family").get<std::string>());
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.embed_size = j.at("embed_size").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

namespace detail {

template <class T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) raise(ErrorCode::CorruptBlob, std::string("truncated while reading ") + what);
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what,
                               std::uint32_t max_len = 1u << 24) {
  auto n = read_raw<std::uint32_t>(in, what);
  if (n > max_len)
    raise(ErrorCode::CorruptBlob, std::string("absurd length for ") + what);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) raise(ErrorCode::CorruptBlob, std::string("truncated while reading ") + what);
  return s;
}

inline constexpr std::uint8_t kDtypeF32 = 1;

} // namespace detail

/// Write a checkpoint whose blobs are taken from `store` (float32). The
/// header receives the config, a kind tag, and free-form provenance.
inline void save_checkpoint_store(const ParamStore<float>& store,
                                  const EncoderConfig& config,
                                  const std::string& kind,
                                  const nlohmann::json& provenance,
                                  const nlohmann::json& extra_header,
                                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write("CCAE", 4);
  detail::write_raw<std::uint32_t>(out, kCheckpointVersion);
  nlohmann::json header = extra_header;
  header["format_version"] = kCheckpointVersion;
  header["kind"] = kind;
  header["config"] = config_to_json(config);
  header["provenance"] = provenance;
  detail::write_string(out, header.dump());
  detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(store.names.size()));
  for (std::size_t i = 0; i < store.names.size(); ++i) {
    detail::write_string(out, store.names[i]);
    detail::write_raw<std::uint8_t>(out, detail::kDtypeF32);
    detail::write_raw<std::uint32_t>(out,
                                     static_cast<std::uint32_t>(store.shapes[i].size()));
    for (auto d : store.shapes[i])
      detail::write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(store.values[i].data()),
              static_cast<std::streamsize>(store.values[i].size() * sizeof(float)));
  }
  if (!out) raise(ErrorCode::IoFailure, "write failed for " + path.string());
}

struct LoadedStore {
  nlohmann::json header;
  ParamStore<float> store;
};

/// Read a checkpoint container and return header plus blobs in file order.
inline LoadedStore load_checkpoint_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::IoFailure, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CCAE", 4) != 0)
    raise(ErrorCode::CorruptBlob, "bad magic in " + path.string());
  auto version = detail::read_raw<std::uint32_t>(in, "format_version");
  if (version != kCheckpointVersion)
    raise(ErrorCode::VersionMismatch,
          "unsupported format_version " + std::to_string(version));
  LoadedStore out;
  const std::string header_text = detail::read_string(in, "header");
  out.header = nlohmann::json::parse(header_text, nullptr, false);
  if (out.header.is_discarded())
    raise(ErrorCode::CorruptBlob, "header is not valid JSON");
  if (out.header.value("format_version", 0u) != kCheckpointVersion)
    raise(ErrorCode::VersionMismatch, "header format_version disagrees");
  auto n_blobs = detail::read_raw<std::uint32_t>(in, "blob count");
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    std::string name = detail::read_string(in, "blob name", 4096);
    auto dtype = detail::read_raw<std::uint8_t>(in, "dtype");
    if (dtype != detail::kDtypeF32)
      raise(ErrorCode::CorruptBlob, "unsupported dtype for blob '" + name + "'");
    auto rank = detail::read_raw<std::uint32_t>(in, "rank");
    if (rank > 8) raise(ErrorCode::CorruptBlob, "absurd rank for '" + name + "'");
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      auto d = detail::read_raw<std::uint64_t>(in, "dim");
      shape.push_back(static_cast<std::size_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    std::vector<float> data(n);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!in)
      raise(ErrorCode::CorruptBlob, "truncated data for blob '" + name + "'");
    out.store.names.push_back(std::move(name));
    out.store.shapes.push_back(std::move(shape));
    out.store.values.push_back(std::move(data));
  }
  return out;
}

namespace detail {

// Blobs must match the expected table exactly: same names, same shapes,
// nothing missing, nothing extra. Order in the file is not significant.
inline void check_against_table(const ParamStore<float>& store,
                                const std::vector<ShapeEntry>& table) {
  if (store.names.size() != table.size())
    raise(ErrorCode::CorruptBlob,
          "blob count " + std::to_string(store.names.size()) + " != expected " +
              std::to_string(table.size()));
  for (const auto& entry : table) {
    int i = store.find(entry.name);
    if (i < 0)
      raise(ErrorCode::CorruptBlob, "missing blob '" + entry.name + "'");
    if (store.shapes[static_cast<std::size_t>(i)] != entry.shape)
      raise(ErrorCode::CorruptBlob, "shape mismatch for blob '" + entry.name + "'");
  }
}

} // namespace detail

/// Save an encoder with provenance (training objective, steps, seeds).
inline void save_checkpoint(const Encoder<float>& enc,
                            const std::filesystem::path& path,
                            const nlohmann::json& provenance = {}) {
  save_checkpoint_store(enc.params, enc.config, "encoder", provenance, {}, path);
}

struct LoadedEncoder {
  Encoder<float> encoder;
  nlohmann::json header;
};

inline LoadedEncoder load_checkpoint(const std::filesystem::path& path) {
  LoadedStore raw = load_checkpoint_store(path);
  if (raw.header.value("kind", "") != "encoder")
    raise(ErrorCode::CorruptBlob, "checkpoint kind is not 'encoder'");
  EncoderConfig config = config_from_json(raw.header.at("config"));
  auto table = shape_table(config);
  detail::check_against_table(raw.store, table);
  LoadedEncoder out;
  out.header = raw.header;
  out.encoder = build_encoder<float>(config, 0);
  for (std::size_t i = 0; i < out.encoder.params.names.size(); ++i) {
    int j = raw.store.find(out.encoder.params.names[i]);
    out.encoder.params.values[i] = raw.store.values[static_cast<std::size_t>(j)];
  }
  return out;
}

} // namespace cca
