#pragma once

// On-disk dataset layout:
//   <root>/manifest.json                 geometry, channels, units, frame index
//   <root>/<channel>/<timestamp>.raw     rows*cols float32, little-endian, row-major, no header

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"

namespace nowcast {

using ChannelSet = std::map<Channel, FrameSequence>;

struct FrameEntry {
  EpochMinutes timestamp = 0;
  Channel channel = Channel::precip_mm_per_h;
  std::string path;  // relative to the dataset root

  friend bool operator==(const FrameEntry&, const FrameEntry&) = default;
};

struct ChannelInfo {
  Channel channel = Channel::precip_mm_per_h;
  std::int64_t cadence_min = 15;

  friend bool operator==(const ChannelInfo&, const ChannelInfo&) = default;
};

struct DatasetManifest {
  GridGeometry geometry;
  std::vector<ChannelInfo> channels;
  std::vector<FrameEntry> frame_index;  // sorted by (channel, timestamp)
  std::map<std::string, std::string> units;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kManifestFormat = "nowcast-raw-f32le";

namespace io {

inline void write_f32le(const std::filesystem::path& path, std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

inline std::vector<float> read_f32le(const std::filesystem::path& path, std::size_t count) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) throw Error("missing frame file " + path.string());
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw Error("cannot stat " + path.string());
  if (size != count * 4) {
    throw Error("size mismatch in " + path.string() + ": " + std::to_string(size) +
                " bytes, expected " + std::to_string(count * 4));
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes(count * 4);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error("cannot read " + path.string());
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

/// Write `text` to `path` through a temporary file and rename.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace io

inline nlohmann::json to_json(const GridGeometry& g) {
  return {{"rows", g.rows},       {"cols", g.cols},       {"lat_min", g.lat_min},
          {"lat_max", g.lat_max}, {"lon_min", g.lon_min}, {"lon_max", g.lon_max},
          {"resolution", g.resolution}};
}

inline GridGeometry geometry_from_json(const nlohmann::json& j) {
  GridGeometry g;
  g.rows = j.at("rows").get<std::size_t>();
  g.cols = j.at("cols").get<std::size_t>();
  g.lat_min = j.at("lat_min").get<double>();
  g.lat_max = j.at("lat_max").get<double>();
  g.lon_min = j.at("lon_min").get<double>();
  g.lon_max = j.at("lon_max").get<double>();
  g.resolution = j.at("resolution").get<double>();
  g.validate();
  return g;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json channels = nlohmann::json::array();
  for (const auto& c : m.channels) {
    channels.push_back({{"name", std::string(to_string(c.channel))}, {"cadence_min", c.cadence_min}});
  }
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : m.frame_index) {
    frames.push_back(
        {{"timestamp", f.timestamp}, {"channel", std::string(to_string(f.channel))}, {"path", f.path}});
  }
  return {{"format", kManifestFormat},
          {"geometry", to_json(m.geometry)},
          {"channels", channels},
          {"units", m.units},
          {"frame_index", frames}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kManifestFormat) {
    throw Error("manifest format is not " + std::string(kManifestFormat));
  }
  DatasetManifest m;
  m.geometry = geometry_from_json(j.at("geometry"));
  for (const auto& c : j.at("channels")) {
    m.channels.push_back({parse_channel(c.at("name").get<std::string>()),
                          c.at("cadence_min").get<std::int64_t>()});
  }
  m.units = j.at("units").get<std::map<std::string, std::string>>();
  for (const auto& f : j.at("frame_index")) {
    m.frame_index.push_back({f.at("timestamp").get<EpochMinutes>(),
                             parse_channel(f.at("channel").get<std::string>()),
                             f.at("path").get<std::string>()});
  }
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& root) {
  const auto path = root / kManifestName;
  if (!std::filesystem::exists(path)) throw Error("no manifest at " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest " + path.string() + ": " + e.what());
  }
}

inline std::string frame_relative_path(Channel c, EpochMinutes t) {
  return std::string(to_string(c)) + "/" + std::to_string(t) + ".raw";
}

/// Write every channel as one raw file per frame plus the manifest.
inline DatasetManifest write_dataset(const ChannelSet& channels, const std::filesystem::path& root) {
  if (channels.empty()) throw Error("no frames");
  const GridGeometry& geometry = channels.begin()->second.geometry;
  for (const auto& [channel, seq] : channels) {
    if (seq.frames.empty()) throw Error("no frames");
    if (!(seq.geometry == geometry)) {
      throw Error("geometry mismatch between channels: " + std::string(to_string(channel)));
    }
    detail::require(seq.channel == channel, "channel key does not match sequence channel");
    seq.validate();
    for (const auto& f : seq.frames) validate_frame_values(f);
  }
  geometry.validate();

  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw Error("cannot create " + root.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.geometry = geometry;
  for (const auto& [channel, seq] : channels) {
    manifest.channels.push_back({channel, seq.cadence_min});
    manifest.units[std::string(to_string(channel))] = std::string(default_units(channel));
    std::filesystem::create_directories(root / std::string(to_string(channel)), ec);
    if (ec) throw Error("cannot create channel directory under " + root.string());
    for (const auto& f : seq.frames) {
      const auto rel = frame_relative_path(channel, f.timestamp);
      io::write_f32le(root / rel, f.values.values());
      manifest.frame_index.push_back({f.timestamp, channel, rel});
    }
  }
  std::sort(manifest.frame_index.begin(), manifest.frame_index.end(),
            [](const FrameEntry& a, const FrameEntry& b) {
              return std::tie(a.channel, a.timestamp) < std::tie(b.channel, b.timestamp);
            });
  io::write_text_atomic(root / kManifestName, to_json(manifest).dump(1) + "\n");
  return manifest;
}

/// Load every channel; frames come back in timestamp order with payload sizes and cadence checked.
inline ChannelSet read_dataset(const std::filesystem::path& root) {
  const DatasetManifest manifest = read_manifest(root);
  const auto& geo = manifest.geometry;

  std::set<std::pair<Channel, EpochMinutes>> seen;
  for (std::size_t i = 0; i < manifest.frame_index.size(); ++i) {
    const auto& e = manifest.frame_index[i];
    if (!seen.insert({e.channel, e.timestamp}).second) {
      throw Error("duplicate frame " + std::string(to_string(e.channel)) + " t=" +
                  std::to_string(e.timestamp));
    }
    if (i > 0) {
      const auto& p = manifest.frame_index[i - 1];
      if (std::tie(p.channel, p.timestamp) > std::tie(e.channel, e.timestamp)) {
        throw Error("manifest frame_index is not sorted by (channel, timestamp)");
      }
    }
  }

  ChannelSet out;
  for (const auto& info : manifest.channels) {
    FrameSequence seq;
    seq.channel = info.channel;
    seq.geometry = geo;
    seq.cadence_min = info.cadence_min;
    out.emplace(info.channel, std::move(seq));
  }
  for (const auto& e : manifest.frame_index) {
    auto it = out.find(e.channel);
    if (it == out.end()) {
      throw Error("frame references undeclared channel " + std::string(to_string(e.channel)));
    }
    RasterFrame frame{e.timestamp, e.channel,
                      Field(geo.rows, geo.cols, io::read_f32le(root / e.path, geo.rows * geo.cols))};
    it->second.frames.push_back(std::move(frame));
  }
  for (auto& [channel, seq] : out) {
    std::sort(seq.frames.begin(), seq.frames.end(),
              [](const RasterFrame& a, const RasterFrame& b) { return a.timestamp < b.timestamp; });
    seq.validate();
  }
  return out;
}

/// Subsample a fine-cadence sequence onto the target cadence. Each target timestamp (a multiple of
/// `target_min` inside the input span) takes the nearest input frame in time, earlier on ties.
inline FrameSequence resample_to_cadence(const FrameSequence& seq, std::int64_t target_min) {
  detail::require_config(target_min > 0, "target cadence must be positive");
  detail::require_config(seq.cadence_min > 0, "cannot resample a static channel");
  if (target_min % seq.cadence_min != 0) {
    throw UsageError("input cadence " + std::to_string(seq.cadence_min) +
                     " min does not divide target cadence " + std::to_string(target_min) + " min");
  }
  seq.validate();
  if (target_min == seq.cadence_min && seq.frames.front().timestamp % target_min == 0) return seq;

  const EpochMinutes first = seq.frames.front().timestamp;
  const EpochMinutes last = seq.frames.back().timestamp;
  auto floor_div = [](EpochMinutes a, EpochMinutes b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); };
  EpochMinutes t = (floor_div(first - 1, target_min) + 1) * target_min;

  FrameSequence out;
  out.channel = seq.channel;
  out.geometry = seq.geometry;
  out.cadence_min = target_min;
  for (; t <= last; t += target_min) {
    const auto offset = static_cast<double>(t - first) / static_cast<double>(seq.cadence_min);
    auto idx = static_cast<std::size_t>(std::floor(offset));
    const double frac = offset - static_cast<double>(idx);
    if (frac > 0.5 && idx + 1 < seq.frames.size()) ++idx;
    RasterFrame f = seq.frames[idx];
    f.timestamp = t;
    out.frames.push_back(std::move(f));
  }
  if (out.frames.empty()) throw Error("no target timestamps inside the input span");
  return out;
}

/// Bilinear sample at fractional cell coordinates, clamped to the grid.
template <typename T>
double bilinear_sample(const Grid<T>& g, double r, double c) {
  const double rmax = static_cast<double>(g.rows() - 1);
  const double cmax = static_cast<double>(g.cols() - 1);
  r = std::clamp(r, 0.0, rmax);
  c = std::clamp(c, 0.0, cmax);
  const auto r0 = static_cast<std::size_t>(std::floor(r));
  const auto c0 = static_cast<std::size_t>(std::floor(c));
  const std::size_t r1 = std::min(r0 + 1, g.rows() - 1);
  const std::size_t c1 = std::min(c0 + 1, g.cols() - 1);
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  const double top = (1.0 - fc) * g(r0, c0) + fc * g(r0, c1);
  const double bottom = (1.0 - fc) * g(r1, c0) + fc * g(r1, c1);
  return (1.0 - fr) * top + fr * bottom;
}

/// Bilinear regridding of a static relief field onto `target` (cell centres to cell centres).
inline Field interpolate_relief(const Field& source, const GridGeometry& source_geo,
                                const GridGeometry& target) {
  detail::require(source.rows() == source_geo.rows && source.cols() == source_geo.cols,
                  "relief grid does not match its geometry");
  constexpr double eps = 1e-9;
  if (target.lat_min < source_geo.lat_min - eps || target.lat_max > source_geo.lat_max + eps ||
      target.lon_min < source_geo.lon_min - eps || target.lon_max > source_geo.lon_max + eps) {
    throw Error("target extent lies outside the relief source extent");
  }
  Field out(target.rows, target.cols);
  for (std::size_t i = 0; i < target.rows; ++i) {
    const double lat = target.cell_center_lat(static_cast<double>(i));
    const double sr = (source_geo.lat_max - lat) / source_geo.resolution - 0.5;
    for (std::size_t j = 0; j < target.cols; ++j) {
      const double lon = target.cell_center_lon(static_cast<double>(j));
      const double sc = (lon - source_geo.lon_min) / source_geo.resolution - 0.5;
      out(i, j) = static_cast<float>(bilinear_sample(source, sr, sc));
    }
  }
  return out;
}

inline FrameSequence interpolate_relief(const FrameSequence& relief, const GridGeometry& target) {
  relief.validate();
  FrameSequence out;
  out.channel = Channel::relief_m;
  out.geometry = target;
  out.cadence_min = 0;
  out.frames.push_back(
      {0, Channel::relief_m, interpolate_relief(relief.frames.front().values, relief.geometry, target)});
  return out;
}

}  // namespace nowcast
