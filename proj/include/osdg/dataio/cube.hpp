#pragma once

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace osdg {

inline constexpr std::uint16_t kUnlabeled = 0;
inline constexpr std::uint16_t kUnknownLabel = 65535;

/// H x W x C reflectance grid with a per-pixel label grid.
struct HSICube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::size_t num_known = 0;  // K
  std::vector<std::string> class_names;
  std::vector<float> data;             // (row, col, band) row-major
  std::vector<std::uint16_t> labels;   // (row, col)

  std::size_t pixels() const { return height * width; }
  float* pixel(std::size_t r, std::size_t c) { return data.data() + (r * width + c) * bands; }
  const float* pixel(std::size_t r, std::size_t c) const { return data.data() + (r * width + c) * bands; }
  std::uint16_t label(std::size_t r, std::size_t c) const { return labels[r * width + c]; }

  bool valid_label(std::uint16_t l) const {
    return l == kUnlabeled || l == kUnknownLabel || l <= num_known;
  }
};

enum class CubeErrorCode {
  Io,
  BadMagic,
  BadHeader,
  TruncatedPayload,
  TrailingBytes,
  ShapeMismatch,
  LabelOutOfRange,
  NonFinite,
};

inline const char* to_string(CubeErrorCode c) {
  switch (c) {
    case CubeErrorCode::Io: return "i/o error";
    case CubeErrorCode::BadMagic: return "bad magic";
    case CubeErrorCode::BadHeader: return "bad header";
    case CubeErrorCode::TruncatedPayload: return "truncated payload";
    case CubeErrorCode::TrailingBytes: return "trailing bytes";
    case CubeErrorCode::ShapeMismatch: return "shape mismatch";
    case CubeErrorCode::LabelOutOfRange: return "label out of range";
    case CubeErrorCode::NonFinite: return "non-finite data";
  }
  return "?";
}

class CubeError : public std::runtime_error {
 public:
  CubeError(CubeErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}
  CubeErrorCode code() const { return code_; }

 private:
  CubeErrorCode code_;
};

/// Structural checks shared by load and save.
inline void validate_cube(const HSICube& cube) {
  if (cube.data.size() != cube.height * cube.width * cube.bands)
    throw CubeError(CubeErrorCode::ShapeMismatch, "data length " + std::to_string(cube.data.size()) +
                                                      " != H*W*C");
  if (cube.labels.size() != cube.height * cube.width)
    throw CubeError(CubeErrorCode::ShapeMismatch, "label length " + std::to_string(cube.labels.size()) +
                                                      " != H*W");
  for (std::size_t i = 0; i < cube.data.size(); ++i)
    if (!std::isfinite(cube.data[i]))
      throw CubeError(CubeErrorCode::NonFinite, "value index " + std::to_string(i));
  for (std::size_t i = 0; i < cube.labels.size(); ++i)
    if (!cube.valid_label(cube.labels[i]))
      throw CubeError(CubeErrorCode::LabelOutOfRange, "label " + std::to_string(cube.labels[i]) +
                                                          " at pixel " + std::to_string(i) + " with K=" +
                                                          std::to_string(cube.num_known));
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "cube i/o assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace detail

inline std::string encode_cube(const HSICube& cube) {
  validate_cube(cube);
  nlohmann::json header = {{"height", cube.height}, {"width", cube.width}, {"bands", cube.bands},
                           {"K", cube.num_known},   {"dtype", "f32"},     {"class_names", cube.class_names}};
  const std::string h = header.dump();
  std::string out = "HSIC";
  detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  const std::size_t off = out.size();
  out.resize(off + cube.data.size() * 4 + cube.labels.size() * 2);
  std::memcpy(out.data() + off, cube.data.data(), cube.data.size() * 4);
  std::memcpy(out.data() + off + cube.data.size() * 4, cube.labels.data(), cube.labels.size() * 2);
  return out;
}

inline HSICube decode_cube(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "HSIC") != 0)
    throw CubeError(CubeErrorCode::BadMagic, "expected \"HSIC\"");
  if (bytes.size() < 8) throw CubeError(CubeErrorCode::TruncatedPayload, "missing header length");
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  if (bytes.size() < 8 + static_cast<std::size_t>(hlen))
    throw CubeError(CubeErrorCode::TruncatedPayload, "header shorter than declared length");
  HSICube cube;
  try {
    const auto j = nlohmann::json::parse(bytes.substr(8, hlen));
    cube.height = j.at("height").get<std::size_t>();
    cube.width = j.at("width").get<std::size_t>();
    cube.bands = j.at("bands").get<std::size_t>();
    cube.num_known = j.at("K").get<std::size_t>();
    cube.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.at("dtype").get<std::string>() != "f32")
      throw CubeError(CubeErrorCode::BadHeader, "unsupported dtype");
  } catch (const nlohmann::json::exception& e) {
    throw CubeError(CubeErrorCode::BadHeader, e.what());
  }
  const std::size_t n = cube.height * cube.width;
  const std::size_t need = 8 + hlen + n * cube.bands * 4 + n * 2;
  if (bytes.size() < need)
    throw CubeError(CubeErrorCode::TruncatedPayload,
                    "have " + std::to_string(bytes.size()) + " bytes, need " + std::to_string(need));
  if (bytes.size() > need) throw CubeError(CubeErrorCode::TrailingBytes, std::to_string(bytes.size() - need));
  cube.data.resize(n * cube.bands);
  cube.labels.resize(n);
  const char* p = bytes.data() + 8 + hlen;
  std::memcpy(cube.data.data(), p, cube.data.size() * 4);
  std::memcpy(cube.labels.data(), p + cube.data.size() * 4, n * 2);
  validate_cube(cube);
  return cube;
}

inline void save_cube(const HSICube& cube, const std::filesystem::path& path) {
  const std::string bytes = encode_cube(cube);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CubeError(CubeErrorCode::Io, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CubeError(CubeErrorCode::Io, "write failed for " + path.string());
}

inline HSICube load_cube(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CubeError(CubeErrorCode::Io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_cube(bytes);
}

}  // namespace osdg
