#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spherebg/error.hpp"
#include "spherebg/fields.hpp"
#include "spherebg/image.hpp"
#include "spherebg/losses.hpp"
#include "spherebg/renderer.hpp"
#include "spherebg/synthetic.hpp"

namespace spherebg {

namespace fs = std::filesystem;

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorCode::IoFailure, "read error on '" + path + "'");
  return bytes;
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      fail(ErrorCode::IoFailure, "write error on '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::IoFailure, "cannot rename onto '" + path + "'");
  }
}

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto b = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(b.begin(), b.end());
    return std::bit_cast<T>(b);
  }
  return v;
}

template <class T>
void put_le(std::string& out, T v) {
  const T le = to_little(v);
  char b[sizeof(T)];
  std::memcpy(b, &le, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos, const std::string& what) {
  require(pos + sizeof(T) <= in.size(), ErrorCode::ParseError, what + ": truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return to_little(v);
}

}  // namespace detail

// ---- PFM ----

/// PFM with 1 ("Pf") or 3 ("PF") channels, little-endian float32, rows
/// stored bottom to top as the format prescribes.
inline std::string encode_pfm(const Image& img) {
  require(img.channels == 1 || img.channels == 3, ErrorCode::InvalidArgument, "pfm needs 1 or 3 channels");
  std::string out = img.channels == 3 ? "PF\n" : "Pf\n";
  out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
  out.reserve(out.size() + img.data.size() * 4);
  for (int r = img.height - 1; r >= 0; --r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < img.channels; ++ch) detail::put_le(out, static_cast<float>(img.at(r, c, ch)));
  return out;
}

inline Image decode_pfm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  require(in && (magic == "PF" || magic == "Pf") && w >= 1 && h >= 1 && scale != 0.0, ErrorCode::ParseError,
          "pfm: malformed header");
  in.get();
  const int channels = magic == "PF" ? 3 : 1;
  std::size_t pos = static_cast<std::size_t>(in.tellg());
  require(bytes.size() - pos == static_cast<std::size_t>(w) * h * channels * 4, ErrorCode::ParseError,
          "pfm: payload size does not match the header");
  const bool little = scale < 0.0;
  Image img(w, h, channels);
  for (int r = h - 1; r >= 0; --r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch) {
        std::uint32_t u = detail::get_le<std::uint32_t>(bytes, pos, "pfm");
        if (!little) u = __builtin_bswap32(u);
        img.at(r, c, ch) = static_cast<double>(std::bit_cast<float>(u)) * std::abs(scale);
      }
  return img;
}

inline void write_pfm(const std::string& path, const Image& img) { write_file_atomic(path, encode_pfm(img)); }
inline Image read_pfm(const std::string& path) { return decode_pfm(read_file(path)); }

// ---- PNG ----

inline double linear_to_srgb(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x <= 0.0031308 ? 12.92 * x : 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
}
inline double srgb_to_linear(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x <= 0.04045 ? x / 12.92 : std::pow((x + 0.055) / 1.055, 2.4);
}

inline std::uint8_t quantize8(double x) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
}

/// 8-bit PNG, gray or RGB. Color data goes through the sRGB transfer curve;
/// pass `srgb = false` for maps such as alpha that are stored as is.
inline std::string encode_png(const Image& img, bool srgb = true) {
  require(img.channels == 1 || img.channels == 3, ErrorCode::InvalidArgument, "png needs 1 or 3 channels");
  std::vector<std::uint8_t> px(img.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize8(srgb ? linear_to_srgb(img.data[i]) : img.data[i]);
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  const png_int_32 stride = img.width * img.channels;
  require(png_image_write_to_memory(&im, nullptr, &size, 0, px.data(), stride, nullptr) != 0, ErrorCode::IoFailure,
          std::string("png: ") + im.message);
  std::string out(size, '\0');
  require(png_image_write_to_memory(&im, out.data(), &size, 0, px.data(), stride, nullptr) != 0,
          ErrorCode::IoFailure, std::string("png: ") + im.message);
  out.resize(size);
  return out;
}

/// Decodes to `channels` (1 or 3) values in [0, 1], linearized when `srgb`.
inline Image decode_png(const std::string& bytes, int channels = 3, bool srgb = true) {
  require(channels == 1 || channels == 3, ErrorCode::InvalidArgument, "png needs 1 or 3 channels");
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  require(png_image_begin_read_from_memory(&im, bytes.data(), bytes.size()) != 0, ErrorCode::ParseError,
          std::string("png: ") + im.message);
  im.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(im));
  if (png_image_finish_read(&im, nullptr, px.data(), 0, nullptr) == 0) {
    const std::string msg = im.message;
    png_image_free(&im);
    fail(ErrorCode::ParseError, "png: " + msg);
  }
  Image img(static_cast<int>(im.width), static_cast<int>(im.height), channels);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = px[i] / 255.0;
    img.data[i] = srgb ? srgb_to_linear(v) : v;
  }
  return img;
}

inline void write_png(const std::string& path, const Image& img, bool srgb = true) {
  write_file_atomic(path, encode_png(img, srgb));
}
inline Image read_png(const std::string& path, int channels = 3, bool srgb = true) {
  return decode_png(read_file(path), channels, srgb);
}

// ---- network specs and checkpoints ----

inline nlohmann::json spec_to_json(const MlpSpec& s) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : s.heads)
    heads.push_back({{"name", h.name},
                     {"width", h.width},
                     {"activation", to_string(h.activation)},
                     {"uses_direction", h.uses_direction}});
  return {{"input_dim", s.input_dim},
          {"input_levels", s.input_levels},
          {"direction_levels", s.direction_levels},
          {"layer_widths", s.layer_widths},
          {"hidden_activation", to_string(s.hidden_activation)},
          {"heads", heads}};
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<int>();
  s.input_levels = j.at("input_levels").get<int>();
  s.direction_levels = j.at("direction_levels").get<int>();
  s.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  s.hidden_activation = activation_from_string(j.at("hidden_activation").get<std::string>());
  for (const auto& h : j.at("heads"))
    s.heads.push_back({h.at("name").get<std::string>(), h.at("width").get<int>(),
                       activation_from_string(h.at("activation").get<std::string>()),
                       h.at("uses_direction").get<bool>()});
  s.validate();
  return s;
}

inline nlohmann::json sampling_to_json(const SamplingConfig& c) {
  return {{"near", c.near}, {"far", c.far}, {"coarse_count", c.coarse_count}, {"fine_count", c.fine_count}};
}

inline SamplingConfig sampling_from_json(const nlohmann::json& j) {
  SamplingConfig c;
  c.near = j.at("near").get<double>();
  c.far = j.at("far").get<double>();
  c.coarse_count = j.at("coarse_count").get<int>();
  c.fine_count = j.at("fine_count").get<int>();
  return c;
}

/// Trained scene plus the sampling it was trained with.
struct Checkpoint {
  SceneParameters params;
  SamplingConfig sampling;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'H', 'B', 'G', 'C', 'K', '1'};

/// Layout: 8-byte magic, uint64 LE header length, UTF-8 JSON header, then
/// `count` float64 LE parameter values in flat order.
inline std::string encode_checkpoint(const Checkpoint& ck) {
  ck.params.validate();
  const nlohmann::json header{{"format", 1},
                              {"sphere_radius", ck.params.sphere_radius},
                              {"foreground", spec_to_json(ck.params.foreground.spec)},
                              {"background", spec_to_json(ck.params.background.spec)},
                              {"sampling", sampling_to_json(ck.sampling)},
                              {"count", ck.params.flat.size()}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint64_t>(out, h.size());
  out += h;
  out.reserve(out.size() + ck.params.flat.size() * 8);
  for (double v : ck.params.flat) detail::put_le(out, v);
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorCode::ParseError,
          "checkpoint: bad magic");
  std::size_t pos = 8;
  const auto hlen = detail::get_le<std::uint64_t>(bytes, pos, "checkpoint");
  require(hlen <= bytes.size() - pos, ErrorCode::ParseError, "checkpoint: truncated header");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    require(header.at("format").get<int>() == 1, ErrorCode::ParseError, "checkpoint: unsupported format");
    ck.params = make_scene_parameters(spec_from_json(header.at("foreground")), spec_from_json(header.at("background")),
                                      header.at("sphere_radius").get<double>());
    ck.sampling = sampling_from_json(header.at("sampling"));
    require(header.at("count").get<std::size_t>() == ck.params.flat.size(), ErrorCode::ParseError,
            "checkpoint: value count does not match the network shapes");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("checkpoint header: ") + e.what());
  }
  require(bytes.size() - pos == ck.params.flat.size() * 8, ErrorCode::ParseError,
          "checkpoint: payload size does not match the header");
  for (double& v : ck.params.flat) v = detail::get_le<double>(bytes, pos, "checkpoint");
  ck.params.validate();
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}
inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

// ---- datasets ----

/// Directory with dataset.json, one PFM per rgb/alpha/depth map and an
/// sRGB PNG preview per view.
inline void save_dataset(const std::string& dir, const SsoDataset& d, const SceneSpec* scene = nullptr) {
  d.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(fs::is_directory(dir), ErrorCode::IoFailure, "cannot create directory '" + dir + "'");
  nlohmann::json views = nlohmann::json::array();
  for (std::size_t i = 0; i < d.views.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "view_%03zu", i);
    const std::string s = stem;
    const View& v = d.views[i];
    write_pfm((fs::path(dir) / (s + "_rgb.pfm")).string(), v.rgb);
    write_pfm((fs::path(dir) / (s + "_alpha.pfm")).string(), v.alpha);
    write_pfm((fs::path(dir) / (s + "_depth.pfm")).string(), v.depth);
    write_png((fs::path(dir) / (s + ".png")).string(), v.rgb);
    views.push_back({{"camera", camera_to_json(v.camera)},
                     {"rgb", s + "_rgb.pfm"},
                     {"alpha", s + "_alpha.pfm"},
                     {"depth", s + "_depth.pfm"}});
  }
  nlohmann::json j{{"views", views}, {"train", d.train}, {"heldout", d.heldout}};
  if (scene) j["scene"] = scene_to_json(*scene);
  write_file_atomic((fs::path(dir) / "dataset.json").string(), j.dump(2) + "\n");
}

inline SsoDataset load_dataset(const std::string& dir) {
  const std::string text = read_file((fs::path(dir) / "dataset.json").string());
  SsoDataset d;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& v : j.at("views")) {
      View view;
      view.camera = camera_from_json(v.at("camera"));
      view.rgb = read_pfm((fs::path(dir) / v.at("rgb").get<std::string>()).string());
      view.alpha = read_pfm((fs::path(dir) / v.at("alpha").get<std::string>()).string());
      view.depth = read_pfm((fs::path(dir) / v.at("depth").get<std::string>()).string());
      d.views.push_back(std::move(view));
    }
    d.train = j.at("train").get<std::vector<int>>();
    d.heldout = j.at("heldout").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("dataset.json: ") + e.what());
  }
  d.validate();
  return d;
}

// ---- loss log ----

struct LossRecord {
  int step = 0;
  LossBreakdown loss;
};

inline std::string loss_csv(const std::vector<LossRecord>& rows) {
  std::string out = "step,recon,l_fg,l_bg,lambda_fg,lambda_bg,total\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.loss.recon, r.loss.l_fg,
                  r.loss.l_bg, r.loss.lambda_fg, r.loss.lambda_bg, r.loss.total);
    out += line;
  }
  return out;
}

inline std::vector<LossRecord> parse_loss_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  require(line == "step,recon,l_fg,l_bg,lambda_fg,lambda_bg,total", ErrorCode::ParseError, "loss csv: bad header");
  std::vector<LossRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    const int n = std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.loss.recon, &r.loss.l_fg,
                              &r.loss.l_bg, &r.loss.lambda_fg, &r.loss.lambda_bg, &r.loss.total);
    require(n == 7, ErrorCode::ParseError, "loss csv: malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& rows) {
  write_file_atomic(path, loss_csv(rows));
}

}  // namespace spherebg
