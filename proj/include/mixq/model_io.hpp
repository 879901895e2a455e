#pragma once
// Model files: a JSON manifest plus a sidecar blob of little-endian float32
// tensors. The manifest records each tensor's byte offset and element count
// and a CRC-32 of the blob. All writes go to a temporary file first and are
// renamed into place.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mixq/nn.hpp"

namespace mixq {

namespace fs = std::filesystem;

inline constexpr std::string_view kModelFormat = "mixq-model";
inline constexpr int kModelFormatVersion = 1;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes p.tmp and renames it onto p; nothing is left behind on failure.
inline void atomic_write(const fs::path& p, std::string_view data) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw DataError("write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot move '" + tmp.string() + "' to '" + p.string() + "': " + ec.message());
  }
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }
inline std::string dump_json(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline fs::path blob_path_for(const fs::path& manifest) {
  fs::path b = manifest;
  b.replace_extension(".bin");
  return b;
}

namespace detail {

inline void append_f32(std::string& blob, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float read_f32(std::string_view blob, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= std::uint32_t{static_cast<unsigned char>(blob[offset + static_cast<std::size_t>(i)])} << (8 * i);
  return std::bit_cast<float>(bits);
}

inline nlohmann::json tensor_entry(const Tensor& t, std::string& blob) {
  nlohmann::json e{{"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}};
  for (double v : t.data()) append_f32(blob, v);
  return e;
}

inline Tensor read_tensor(const nlohmann::json& e, std::string_view blob, const std::string& what) {
  const auto shape = e.at("shape").get<Shape>();
  const auto offset = e.at("offset").get<std::size_t>();
  const auto count = e.at("count").get<std::size_t>();
  if (count != shape_volume(shape)) throw DataError(what + ": element count does not match shape");
  if (offset % 4 != 0 || offset > blob.size() || count > (blob.size() - offset) / 4)
    throw DataError(what + ": tensor range lies outside the blob");
  Tensor t(shape);
  for (std::size_t i = 0; i < count; ++i) t[i] = read_f32(blob, offset + 4 * i);
  return t;
}

inline nlohmann::json scheme_json(const QuantScheme& s) {
  if (const auto* fp = std::get_if<FixPParams>(&s))
    return {{"type", "fixp"}, {"n", fp->n},         {"int_bits", fp->int_bits}, {"frac_bits", fp->frac_bits},
            {"low", fp->low}, {"high", fp->high}, {"scale", fp->scale}};
  return {{"type", "posit"}, {"variant", to_string(std::get<PositScheme>(s).variant)}};
}

inline QuantScheme scheme_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "posit") {
    return PositScheme{parse_variant(j.at("variant").get<std::string>())};
  }
  if (type != "fixp") throw DataError("unknown scheme type '" + type + "'");
  FixPParams p;
  p.n = j.at("n").get<int>();
  p.int_bits = j.at("int_bits").get<int>();
  p.frac_bits = j.at("frac_bits").get<int>();
  p.low = j.at("low").get<double>();
  p.high = j.at("high").get<double>();
  p.scale = j.at("scale").get<double>();
  try {
    p.validate();
  } catch (const ContractError& e) {
    throw DataError(e.what());
  }
  return p;
}

}  // namespace detail

struct EncodedModel {
  std::string manifest;
  std::string blob;
};

inline EncodedModel encode_model(const Model& m, const std::string& blob_name) {
  EncodedModel out;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) {
    nlohmann::json e{{"name", l.name}, {"kind", to_string(l.kind)}};
    if (l.has_weights()) {
      e["weight"] = detail::tensor_entry(l.weight, out.blob);
      e["bias"] = detail::tensor_entry(l.bias, out.blob);
      e["scheme"] = l.scheme ? detail::scheme_json(*l.scheme) : nlohmann::json(nullptr);
      if (l.kind == LayerKind::Conv2d) e["padding"] = l.padding == Padding::Same ? "same" : "valid";
    }
    if (l.kind == LayerKind::Pact) e["pact"] = {{"alpha", l.pact.alpha}, {"bits", l.pact.bits}};
    layers.push_back(std::move(e));
  }
  nlohmann::json j{{"format", kModelFormat},
                   {"version", kModelFormatVersion},
                   {"input_shape", m.input_shape},
                   {"estimators", {{"fixp", to_string(m.fixp_estimator)}, {"posit", to_string(m.posit_estimator)}}},
                   {"layers", layers},
                   {"provenance", m.provenance},
                   {"blob", {{"file", blob_name}, {"bytes", out.blob.size()}, {"crc32", crc32_of(out.blob)}}}};
  out.manifest = dump_json(j);
  return out;
}

inline Model decode_model(std::string_view manifest_text, std::string_view blob) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model manifest is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw DataError("not a mixq model manifest");
    if (j.at("version").get<int>() != kModelFormatVersion)
      throw DataError("unsupported model format version " + std::to_string(j.at("version").get<int>()));
    const auto& b = j.at("blob");
    if (b.at("bytes").get<std::size_t>() != blob.size()) throw DataError("model blob size does not match the manifest");
    if (b.at("crc32").get<std::uint32_t>() != crc32_of(blob)) throw DataError("model blob checksum mismatch");
    Model m;
    m.input_shape = j.at("input_shape").get<Shape>();
    try {
      m.fixp_estimator = parse_estimator(j.at("estimators").at("fixp").get<std::string>());
      m.posit_estimator = parse_estimator(j.at("estimators").at("posit").get<std::string>());
    } catch (const UsageError& e) {
      throw DataError(e.what());
    }
    m.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    for (const auto& e : j.at("layers")) {
      Layer l;
      l.name = e.at("name").get<std::string>();
      l.kind = parse_layer_kind(e.at("kind").get<std::string>());
      if (l.has_weights()) {
        l.weight = detail::read_tensor(e.at("weight"), blob, l.name + ".weight");
        l.bias = detail::read_tensor(e.at("bias"), blob, l.name + ".bias");
        if (!e.at("scheme").is_null()) l.scheme = detail::scheme_from_json(e.at("scheme"));
        const std::size_t want_rank = l.kind == LayerKind::Dense ? 2 : 4;
        if (l.weight.rank() != want_rank || l.bias.rank() != 1 || l.bias.size() != l.weight.dim(0))
          throw DataError("layer '" + l.name + "' has inconsistent weight/bias shapes");
        if (l.kind == LayerKind::Conv2d) {
          const auto pad = e.at("padding").get<std::string>();
          if (pad != "same" && pad != "valid") throw DataError("unknown padding '" + pad + "'");
          l.padding = pad == "same" ? Padding::Same : Padding::Valid;
        }
      }
      if (l.kind == LayerKind::Pact) {
        l.pact.alpha = e.at("pact").at("alpha").get<double>();
        l.pact.bits = e.at("pact").at("bits").get<int>();
        try {
          l.pact.validate();
        } catch (const ContractError& err) {
          throw DataError("layer '" + l.name + "': " + err.what());
        }
      }
      m.layers.push_back(std::move(l));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model manifest: ") + e.what());
  }
}

// Writes <path> and its .bin sidecar.
inline void save_model(const Model& m, const fs::path& path) {
  const fs::path blob_path = blob_path_for(path);
  const auto enc = encode_model(m, blob_path.filename().string());
  atomic_write(blob_path, enc.blob);
  atomic_write(path, enc.manifest);
}

inline Model load_model(const fs::path& path) {
  const std::string manifest = read_file(path);
  std::string blob_name;
  try {
    blob_name = nlohmann::json::parse(manifest).at("blob").at("file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model manifest '" + path.string() + "' is unreadable: " + e.what());
  }
  if (fs::path(blob_name).has_parent_path()) throw DataError("model blob must sit next to its manifest");
  return decode_model(manifest, read_file(path.parent_path() / blob_name));
}

}  // namespace mixq
