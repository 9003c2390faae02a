#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wvsc/rng.hpp"

namespace wvsc {

/// 8-bit RGB video, planar per frame: [R plane][G plane][B plane], each
/// height x width row-major.
struct VideoClip {
  int width = 0;
  int height = 0;
  int frame_count = 0;
  int fps = 25;
  std::vector<std::uint8_t> data;

  std::size_t frame_bytes() const { return 3u * static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::span<const std::uint8_t> frame(int i) const {
    if (i < 0 || i >= frame_count) throw std::out_of_range("VideoClip: frame index out of range");
    return {data.data() + static_cast<std::size_t>(i) * frame_bytes(), frame_bytes()};
  }
  std::span<std::uint8_t> frame(int i) {
    if (i < 0 || i >= frame_count) throw std::out_of_range("VideoClip: frame index out of range");
    return {data.data() + static_cast<std::size_t>(i) * frame_bytes(), frame_bytes()};
  }
};

enum class ObjectKind { Rectangle, Sinusoid, Checker };
enum class BackgroundKind { Flat, Gradient, Noise };

struct MotionSpec {
  ObjectKind object = ObjectKind::Rectangle;
  int dx = 0;
  int dy = 0;
  BackgroundKind background = BackgroundKind::Flat;
  std::uint64_t seed = 0;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "kind:dx,dy[:background]" with kind in {rect, sine, checker} and
/// background in {flat, gradient, noise}.
inline MotionSpec parse_motion_spec(const std::string& text, std::uint64_t seed = 0) {
  auto fail = [&](const std::string& why) {
    return std::invalid_argument("bad motion spec '" + text + "': " + why);
  };
  MotionSpec spec;
  spec.seed = seed;
  const auto c1 = text.find(':');
  if (c1 == std::string::npos) throw fail("expected kind:dx,dy");
  const std::string kind = text.substr(0, c1);
  if (kind == "rect") {
    spec.object = ObjectKind::Rectangle;
  } else if (kind == "sine") {
    spec.object = ObjectKind::Sinusoid;
  } else if (kind == "checker") {
    spec.object = ObjectKind::Checker;
  } else {
    throw fail("unknown object kind '" + kind + "'");
  }
  const auto c2 = text.find(':', c1 + 1);
  const std::string vel = text.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1);
  const auto comma = vel.find(',');
  if (comma == std::string::npos) throw fail("velocity must be dx,dy");
  auto parse_int = [&](const std::string& part, const char* name) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc() || ptr != part.data() + part.size()) {
      throw fail(std::string(name) + " is not an integer");
    }
    return v;
  };
  spec.dx = parse_int(vel.substr(0, comma), "dx");
  spec.dy = parse_int(vel.substr(comma + 1), "dy");
  if (c2 != std::string::npos) {
    const std::string bg = text.substr(c2 + 1);
    if (bg == "flat") {
      spec.background = BackgroundKind::Flat;
    } else if (bg == "gradient") {
      spec.background = BackgroundKind::Gradient;
    } else if (bg == "noise") {
      spec.background = BackgroundKind::Noise;
    } else {
      throw fail("unknown background '" + bg + "'");
    }
  }
  return spec;
}

namespace detail {

/// Integer sine of an angle in degrees, scaled to [-127, 127] (Bhaskara I).
inline int isin127(int degrees) {
  int d = ((degrees % 360) + 360) % 360;
  const int sign = d >= 180 ? -1 : 1;
  if (d >= 180) d -= 180;
  const int p = d * (180 - d);
  return sign * (127 * 4 * p) / (40500 - p);
}

inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v)); }

inline int positive_mod(int a, int m) { return ((a % m) + m) % m; }

}  // namespace detail

/// Deterministic synthetic clip: a textured object over a background on a
/// canvas that translates by (dx, dy) per frame with wraparound, so frame t+1
/// is frame t circularly shifted. Only integer arithmetic touches pixels.
inline VideoClip generate_clip(const MotionSpec& spec, int width, int height, int frame_count) {
  if (width <= 0 || height <= 0 || width % 8 != 0 || height % 8 != 0) {
    throw std::invalid_argument("generate_clip: width and height must be positive multiples of 8");
  }
  if (frame_count <= 0) throw std::invalid_argument("generate_clip: frame_count must be positive");
  const int side = std::min(width, height);
  if (16 * (spec.dx * spec.dx + spec.dy * spec.dy) > side * side) {
    throw std::invalid_argument("generate_clip: velocity magnitude exceeds min(W, H) / 4");
  }
  Rng rng(mix_seed(spec.seed));
  auto pick = [&](int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); };

  const std::size_t plane = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<std::uint8_t> canvas(3 * plane);
  int bg[3], fg[3], fg2[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = pick(40, 215);
    fg[c] = pick(0, 255);
    fg2[c] = pick(0, 255);
  }
  const int gx = pick(-3, 3), gy = pick(-3, 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        int v = bg[c];
        switch (spec.background) {
          case BackgroundKind::Flat:
            break;
          case BackgroundKind::Gradient:
            v += (gx * (2 * x - width) * 48) / width + (gy * (2 * y - height) * 48) / height;
            break;
          case BackgroundKind::Noise:
            v += pick(-16, 16);
            break;
        }
        canvas[c * plane + static_cast<std::size_t>(y) * width + x] = detail::clamp_u8(v);
      }
    }
  }
  const int ow = pick(width / 4, width / 2), oh = pick(height / 4, height / 2);
  const int ox = pick(0, width - 1), oy = pick(0, height - 1);
  const int period = pick(6, 16);
  const int cell = pick(2, 6);
  for (int j = 0; j < oh; ++j) {
    for (int i = 0; i < ow; ++i) {
      const int x = detail::positive_mod(ox + i, width);
      const int y = detail::positive_mod(oy + j, height);
      for (int c = 0; c < 3; ++c) {
        int v = fg[c];
        switch (spec.object) {
          case ObjectKind::Rectangle:
            break;
          case ObjectKind::Sinusoid: {
            const int s = detail::isin127((360 * (i + j)) / period);
            v = (fg[c] + fg2[c]) / 2 + (s * (fg[c] - fg2[c])) / 254;
            break;
          }
          case ObjectKind::Checker:
            v = ((i / cell) + (j / cell)) % 2 == 0 ? fg[c] : fg2[c];
            break;
        }
        canvas[c * plane + static_cast<std::size_t>(y) * width + x] = detail::clamp_u8(v);
      }
    }
  }

  VideoClip clip;
  clip.width = width;
  clip.height = height;
  clip.frame_count = frame_count;
  clip.data.resize(static_cast<std::size_t>(frame_count) * 3 * plane);
  for (int t = 0; t < frame_count; ++t) {
    std::uint8_t* dst = clip.data.data() + static_cast<std::size_t>(t) * 3 * plane;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < height; ++y) {
        const int sy = detail::positive_mod(y - t * spec.dy, height);
        for (int x = 0; x < width; ++x) {
          const int sx = detail::positive_mod(x - t * spec.dx, width);
          dst[c * plane + static_cast<std::size_t>(y) * width + x] =
              canvas[c * plane + static_cast<std::size_t>(sy) * width + sx];
        }
      }
    }
  }
  return clip;
}

inline std::string sidecar_path(const std::string& path) { return path + ".meta.json"; }

inline void write_clip(const VideoClip& clip, const std::string& path) {
  if (clip.data.size() != static_cast<std::size_t>(clip.frame_count) * clip.frame_bytes()) {
    throw std::invalid_argument("write_clip: buffer length does not match frame_count * 3 * width * height");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(clip.data.data()), static_cast<std::streamsize>(clip.data.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
  const nlohmann::json meta = {
      {"width", clip.width}, {"height", clip.height}, {"frame_count", clip.frame_count}, {"fps", clip.fps}};
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw std::runtime_error("cannot open " + sidecar_path(path) + " for writing");
  side << meta.dump(2) << '\n';
}

inline VideoClip read_clip(const std::string& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw FormatError("missing sidecar " + sidecar_path(path));
  VideoClip clip;
  try {
    const auto meta = nlohmann::json::parse(side);
    clip.width = meta.at("width").get<int>();
    clip.height = meta.at("height").get<int>();
    clip.frame_count = meta.at("frame_count").get<int>();
    clip.fps = meta.value("fps", 25);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad sidecar " + sidecar_path(path) + ": " + e.what());
  }
  if (clip.width <= 0 || clip.height <= 0 || clip.frame_count <= 0) {
    throw FormatError("sidecar " + sidecar_path(path) + " has non-positive dimensions");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing payload " + path);
  clip.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const std::size_t expected = static_cast<std::size_t>(clip.frame_count) * clip.frame_bytes();
  if (clip.data.size() != expected) {
    throw FormatError("payload " + path + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(clip.data.size()));
  }
  return clip;
}

}  // namespace wvsc
