#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wvsc/nn/params.hpp"

namespace wvsc::nn {

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_f32_le(std::vector<char>& buf, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((u >> (8 * b)) & 0xffu));
}

inline float get_f32_le(const char* p) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<float>(u);
}

}  // namespace detail

/// Writes every parameter as little-endian float32 to `path` and a manifest of
/// (name, shape, offset) to `path + ".json"`. `extra` lands under "meta".
template <typename T>
void save_weights(const ParamStore<T>& store, const std::string& path,
                  const nlohmann::json& extra = nlohmann::json::object()) {
  std::vector<char> buf;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, p] : store) {
    entries.push_back({{"name", name}, {"shape", p.value.shape()}, {"offset", buf.size()}});
    for (const T& v : p.value.values()) detail::put_f32_le(buf, static_cast<float>(v));
  }
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot open " + path + " for writing");
  bin.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!bin) throw std::runtime_error("write failed: " + path);
  nlohmann::json manifest = {{"format", "f32le"}, {"bytes", buf.size()}, {"tensors", entries}, {"meta", extra}};
  std::ofstream js(path + ".json", std::ios::trunc);
  if (!js) throw std::runtime_error("cannot open " + path + ".json for writing");
  js << manifest.dump(2) << '\n';
}

inline nlohmann::json read_manifest(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw WeightsFormatError("missing weights manifest " + path + ".json");
  try {
    return nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw WeightsFormatError("bad weights manifest " + path + ".json: " + e.what());
  }
}

/// Loads tensors into an existing store. Every manifest entry must name a
/// parameter with the same shape; store parameters absent from the file keep
/// their values. Returns the number of tensors loaded.
template <typename T>
std::size_t load_weights(ParamStore<T>& store, const std::string& path) {
  const nlohmann::json manifest = read_manifest(path);
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw WeightsFormatError("missing weights file " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto expected = manifest.at("bytes").get<std::size_t>();
  if (buf.size() != expected) {
    throw WeightsFormatError("weights file " + path + " holds " + std::to_string(buf.size()) +
                             " bytes, manifest says " + std::to_string(expected));
  }
  std::size_t loaded = 0;
  for (const auto& e : manifest.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    if (!store.contains(name)) throw WeightsFormatError("weights file has unknown tensor " + name);
    Parameter<T>& p = store.get(name);
    if (p.value.shape() != shape) {
      throw WeightsFormatError("tensor " + name + " has shape " + shape_string(shape) + ", model expects " +
                               shape_string(p.value.shape()));
    }
    if (offset + 4 * p.value.size() > buf.size()) throw WeightsFormatError("tensor " + name + " runs past end of file");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.value[i] = static_cast<T>(detail::get_f32_le(buf.data() + offset + 4 * i));
    }
    ++loaded;
  }
  return loaded;
}

}  // namespace wvsc::nn
