#pragma once

// Experiment configuration: a sectioned INI file, `section.key=value` overrides on top, and typed
// views of each section. Unknown sections and keys are rejected so typos do not pass silently.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/version.hpp>
#include <json.hpp>

#include "nowcast/dataset.hpp"
#include "nowcast/losses.hpp"
#include "nowcast/models/config.hpp"
#include "nowcast/partition.hpp"
#include "nowcast/synthgen.hpp"
#include "nowcast/trainer.hpp"

namespace nowcast::config {

using Table = std::map<std::string, std::map<std::string, std::string>>;

inline const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"scene",
       {"seed", "n_cells", "u", "v", "u_shear", "v_shear", "growth_lo", "growth_hi", "amplitude_lo", "amplitude_hi",
        "radius_lo", "radius_hi", "lifetime_lo", "lifetime_hi", "fade_frames", "frame_count", "rows", "cols",
        "aux_cadence_min"}},
      {"split", {"block_size", "seed"}},
      {"window", {"s_in", "s_out", "stride"}},
      {"view", {"mode", "isize", "tsize", "step", "freq", "resize_side"}},
      {"model",
       {"kind", "base_width", "seed", "h_dim", "g_dim", "z_dim", "lstm_cells", "kl_weight", "deterministic_latent"}},
      {"loss",
       {"preset", "alpha", "beta", "threshold", "rain_weight", "k1", "k2", "dynamic_range", "window", "window_sigma",
        "weighted_ssim"}},
      {"train",
       {"learning_rate", "batch_size", "max_steps", "eval_interval", "patience", "max_eval_samples", "clip_norm",
        "seed"}},
  };
  return s;
}

inline void set(Table& t, const std::string& section, const std::string& key, const std::string& value) {
  auto sec = schema().find(section);
  if (sec == schema().end()) throw UsageError("unknown config section [" + section + "]");
  if (!sec->second.count(key)) throw UsageError("unknown config key " + section + "." + key);
  t[section][key] = value;
}

/// "section.key=value".
inline void apply_override(Table& t, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw UsageError("override '" + assignment + "' is not of the form section.key=value");
  }
  set(t, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
}

inline Table load_ini(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UsageError("config file " + path.string() + " does not exist");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError("malformed config " + path.string() + ": " + e.message() + " (line " +
                     std::to_string(e.line()) + ")");
  }
  Table t;
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) throw UsageError("config entry '" + section + "' is outside any section");
    for (const auto& [key, node] : keys) set(t, section, key, node.data());
  }
  return t;
}

inline nlohmann::json to_json(const Table& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [section, keys] : t) {
    for (const auto& [key, value] : keys) j[section][key] = value;
  }
  return j;
}

/// Typed read access with defaults; conversion failures are usage errors naming the key.
class Reader {
 public:
  Reader(const Table& t, std::string section) : t_(t), section_(std::move(section)) {}

  bool has(const std::string& key) const {
    auto s = t_.find(section_);
    return s != t_.end() && s->second.count(key);
  }

  std::string str(const std::string& key, const std::string& fallback) const {
    return has(key) ? t_.at(section_).at(key) : fallback;
  }

  template <typename T>
  T num(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = t_.at(section_).at(key);
    try {
      std::size_t used = 0;
      T v{};
      if constexpr (std::is_floating_point_v<T>) {
        v = static_cast<T>(std::stod(s, &used));
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!s.empty() && s.front() == '-') throw std::invalid_argument(s);
        v = static_cast<T>(std::stoull(s, &used));
      } else {
        v = static_cast<T>(std::stoll(s, &used));
      }
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw UsageError("config " + section_ + "." + key + " = '" + s + "' is not a valid number");
    }
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = t_.at(section_).at(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw UsageError("config " + section_ + "." + key + " = '" + s + "' is not a boolean");
  }

 private:
  const Table& t_;
  std::string section_;
};

inline synth::SceneConfig scene(const Table& t) {
  const Reader r(t, "scene");
  synth::SceneConfig c;
  c.seed = r.num("seed", c.seed);
  c.n_cells = r.num("n_cells", c.n_cells);
  c.u = r.num("u", c.u);
  c.v = r.num("v", c.v);
  c.u_shear = r.num("u_shear", c.u_shear);
  c.v_shear = r.num("v_shear", c.v_shear);
  c.growth_rate = {r.num("growth_lo", c.growth_rate.lo), r.num("growth_hi", c.growth_rate.hi)};
  c.cell_amplitude = {r.num("amplitude_lo", c.cell_amplitude.lo), r.num("amplitude_hi", c.cell_amplitude.hi)};
  c.cell_radius = {r.num("radius_lo", c.cell_radius.lo), r.num("radius_hi", c.cell_radius.hi)};
  c.lifetime = {r.num("lifetime_lo", c.lifetime.lo), r.num("lifetime_hi", c.lifetime.hi)};
  c.fade_frames = r.num("fade_frames", c.fade_frames);
  c.frame_count = r.num("frame_count", c.frame_count);
  c.rows = r.num("rows", c.rows);
  c.cols = r.num("cols", c.cols);
  c.aux_cadence_min = r.num("aux_cadence_min", c.aux_cadence_min);
  c.validate();
  return c;
}

struct SplitSettings {
  int block_size = 47;
  std::uint64_t seed = 1;
};

inline SplitSettings split(const Table& t) {
  const Reader r(t, "split");
  SplitSettings s;
  s.block_size = r.num("block_size", s.block_size);
  s.seed = r.num("seed", s.seed);
  detail::require_config(s.block_size >= 1, "split.block_size must be positive");
  return s;
}

inline partition::WindowConfig window(const Table& t) {
  const Reader r(t, "window");
  partition::WindowConfig w;
  w.s_in = r.num("s_in", w.s_in);
  w.s_out = r.num("s_out", w.s_out);
  w.stride = r.num("stride", w.stride);
  detail::require_config(w.s_in >= 1 && w.s_out >= 1 && w.stride >= 1, "window sizes and stride must be positive");
  return w;
}

inline data::ViewConfig view(const Table& t) {
  const Reader r(t, "view");
  data::ViewConfig v;
  v.mode = data::parse_view_mode(r.str("mode", "ring"));
  v.isize = r.num("isize", v.isize);
  v.tsize = r.num("tsize", v.tsize);
  v.step = r.num("step", v.step);
  v.freq = r.num("freq", v.freq);
  v.resize_side = r.num("resize_side", v.resize_side);
  v.validate();
  return v;
}

inline models::ModelConfig model(const Table& t) {
  const Reader r(t, "model");
  models::ModelConfig c;
  c.kind = models::parse_model_kind(r.str("kind", "unet"));
  c.base_width = r.num("base_width", 0.125);
  c.seed = r.num("seed", c.seed);
  c.h_dim = r.num("h_dim", c.h_dim);
  c.g_dim = r.num("g_dim", c.g_dim);
  c.z_dim = r.num("z_dim", c.z_dim);
  c.lstm_cells = r.num("lstm_cells", c.lstm_cells);
  c.kl_weight = r.num("kl_weight", c.kl_weight);
  c.deterministic_latent = r.flag("deterministic_latent", c.deterministic_latent);
  return c;
}

/// Loss settings; `threshold` stays in mm/h (the trainer converts it to model units).
inline loss::LossConfig loss(const Table& t) {
  const Reader r(t, "loss");
  loss::LossConfig c = loss::LossConfig::preset(r.str("preset", "total"));
  c.alpha = r.num("alpha", c.alpha);
  c.beta = r.num("beta", c.beta);
  c.threshold = r.num("threshold", c.threshold);
  c.rain_weight = r.num("rain_weight", c.rain_weight);
  c.k1 = r.num("k1", c.k1);
  c.k2 = r.num("k2", c.k2);
  c.dynamic_range = r.num("dynamic_range", c.dynamic_range);
  c.window = r.num("window", c.window);
  c.window_sigma = r.num("window_sigma", c.window_sigma);
  c.weighted_ssim = r.flag("weighted_ssim", c.weighted_ssim);
  c.validate();
  detail::require_config(c.threshold > 0.0, "loss.threshold is a rain rate in mm/h and must be positive");
  return c;
}

inline train::TrainConfig training(const Table& t) {
  const Reader r(t, "train");
  train::TrainConfig c;
  c.learning_rate = r.num("learning_rate", c.learning_rate);
  c.batch_size = r.num("batch_size", c.batch_size);
  c.max_steps = r.num("max_steps", c.max_steps);
  c.eval_interval = r.num("eval_interval", c.eval_interval);
  c.patience = r.num("patience", c.patience);
  c.max_eval_samples = r.num("max_eval_samples", c.max_eval_samples);
  c.clip_norm = r.num("clip_norm", c.clip_norm);
  c.seed = r.num("seed", c.seed);
  return c;
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json versions() {
  return {{"nowcast", NOWCAST_VERSION},
          {"compiler", __VERSION__},
          {"cplusplus", __cplusplus},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) + "." +
                        std::to_string(BOOST_VERSION % 100)}};
}

/// Record of one run. The hash covers the command and its effective settings, not the versions.
inline nlohmann::json provenance(const std::string& command, const nlohmann::json& settings, std::uint64_t seed,
                                 const std::vector<std::string>& argv) {
  const nlohmann::json hashed{{"command", command}, {"settings", settings}};
  return {{"command", command},
          {"argv", argv},
          {"settings", settings},
          {"config_hash", fnv1a_hex(hashed.dump())},
          {"seed", seed},
          {"versions", versions()}};
}

inline void write_provenance(const std::filesystem::path& path, const nlohmann::json& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_text_atomic(path, record.dump(2) + "\n");
}

}  // namespace nowcast::config
