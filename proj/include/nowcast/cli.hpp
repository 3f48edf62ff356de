#pragma once

// Command-line surface: synth, split, patchify, train, predict, evaluate, plot.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nowcast/config.hpp"
#include "nowcast/models/checkpoint.hpp"
#include "nowcast/trainer.hpp"
#include "nowcast/verify.hpp"

namespace nowcast::cli {

namespace fs = std::filesystem;

inline std::string file_fingerprint(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  return config::fnv1a_hex(std::string(std::istreambuf_iterator<char>(in), {}));
}

/// Config file, `--set` overrides and per-command flags bound to config keys, applied in that order.
class Settings {
 public:
  void attach(CLI::App* sub) {
    sub->add_option("--config", file_, "experiment config file (INI)");
    sub->add_option("--set", sets_, "override a config entry: section.key=value")->type_name("KEY=VALUE");
  }

  /// Binds `--name` to config key `key` ("section.key").
  CLI::Option* bind(CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    auto& slot = storage_.emplace_back();
    auto* opt = sub->add_option(name, slot, help);
    bound_.push_back({opt, key, &slot});
    return opt;
  }

  config::Table resolve() const {
    config::Table t = file_.empty() ? config::Table{} : config::load_ini(file_);
    for (const auto& s : sets_) config::apply_override(t, s);
    for (const auto& b : bound_) {
      if (b.opt->count() > 0) config::apply_override(t, b.key + "=" + *b.value);
    }
    return t;
  }

  const std::string& file() const { return file_; }

 private:
  struct Binding {
    CLI::Option* opt;
    std::string key;
    const std::string* value;
  };
  std::string file_;
  std::vector<std::string> sets_;
  std::deque<std::string> storage_;
  std::vector<Binding> bound_;
};

struct Inputs {
  nlohmann::json entries = nlohmann::json::object();

  void add(const std::string& name, const fs::path& path, const std::string& fingerprint) {
    entries[name] = {{"path", path.string()}, {"fingerprint", fingerprint}};
  }
  void add_dataset(const std::string& name, const fs::path& dir) {
    add(name, dir, file_fingerprint(dir / kManifestName));
  }
};

inline void record(const fs::path& path, const std::string& command, const config::Table& table, const Inputs& in,
                   std::uint64_t seed, const std::vector<std::string>& argv) {
  nlohmann::json settings = config::to_json(table);
  nlohmann::json fingerprints = nlohmann::json::object();
  for (const auto& [name, e] : in.entries.items()) fingerprints[name] = e.at("fingerprint");
  auto rec = config::provenance(command, {{"config", settings}, {"inputs", fingerprints}}, seed, argv);
  rec["inputs"] = in.entries;
  config::write_provenance(path, rec);
}

inline data::Scene load_scene(const fs::path& dir) {
  if (!fs::exists(dir / kManifestName)) throw UsageError("no dataset at " + dir.string() + " (manifest.json missing)");
  return data::scene_from_channels(read_dataset(dir));
}

inline partition::SplitPlan load_plan_for(const fs::path& path, const data::Scene& scene) {
  if (!fs::exists(path)) throw UsageError("split plan " + path.string() + " does not exist");
  auto plan = partition::load_plan(path);
  if (plan.total_frames != scene.frames()) {
    throw Error("split plan covers " + std::to_string(plan.total_frames) + " frames but the dataset has " +
                std::to_string(scene.frames()));
  }
  return plan;
}

/// Nominal geometry of an n x n grid placed at (row0, col0) of `g` with g's resolution.
inline GridGeometry sub_geometry(const GridGeometry& g, long row0, long col0, std::size_t n) {
  const double r = g.resolution;
  const double top = g.lat_max - static_cast<double>(row0) * r;
  const double left = g.lon_min + static_cast<double>(col0) * r;
  return GridGeometry::from_extent(top - static_cast<double>(n) * r, top, left, left + static_cast<double>(n) * r, r);
}

inline GridGeometry square_geometry(const GridGeometry& g, std::size_t n) {
  const double r = (g.lat_max - g.lat_min) / static_cast<double>(n);
  return GridGeometry::from_extent(g.lat_min, g.lat_max, g.lon_min, g.lon_min + static_cast<double>(n) * r, r);
}

/// Applies `fn` to every frame of every channel, producing a dataset on `geo`.
template <typename Fn>
ChannelSet map_channels(const ChannelSet& in, const GridGeometry& geo, Fn&& fn) {
  ChannelSet out;
  for (const auto& [ch, seq] : in) {
    FrameSequence s{ch, geo, seq.cadence_min, {}};
    for (const auto& f : seq.frames) s.frames.push_back({f.timestamp, ch, fn(ch, f.values)});
    out.emplace(ch, std::move(s));
  }
  return out;
}

class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) {
    app_.name("nowcast");
    app_.description("Precipitation nowcasting experiments on gridded radar data.");
    app_.require_subcommand(1);
    app_.set_version_flag("--version", std::string(NOWCAST_VERSION));
    add_synth();
    add_split();
    add_patchify();
    add_train();
    add_predict();
    add_evaluate();
    add_plot();
  }

  int run(int argc, const char* const* argv) {
    argv_.assign(argv, argv + argc);
    try {
      app_.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out_ << help_for_failure();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app_.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::CallForVersion&) {
      out_ << NOWCAST_VERSION << "\n";
      return 0;
    } catch (const CLI::ParseError& e) {
      err_ << "nowcast: error: " << e.what() << "\n" << help_for_failure();
      return 2;
    }
    try {
      action_();
      return 0;
    } catch (const UsageError& e) {
      err_ << "nowcast: error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      err_ << "nowcast: error: " << e.what() << "\n";
      return 1;
    }
  }

 private:
  std::string help_for_failure() const {
    for (const auto* sub : app_.get_subcommands()) return sub->help();
    return app_.help();
  }

  CLI::App* sub(const std::string& name, const std::string& help, Settings& s) {
    auto* c = app_.add_subcommand(name, help);
    s.attach(c);
    return c;
  }

  void add_synth() {
    auto* c = sub("synth", "generate a synthetic radar dataset", synth_);
    c->add_option("--out", synth_out_, "output dataset directory")->required();
    synth_.bind(c, "--seed", "scene.seed", "scene seed");
    c->callback([this] {
      action_ = [this] {
        const auto table = synth_.resolve();
        const auto cfg = config::scene(table);
        write_dataset(synth::generate_scene(cfg), synth_out_);
        Inputs in;
        if (!synth_.file().empty()) in.add("config", synth_.file(), file_fingerprint(synth_.file()));
        record(fs::path(synth_out_) / "provenance.json", "synth", table, in, cfg.seed, argv_);
        out_ << "wrote " << cfg.frame_count << " frames of " << cfg.rows << "x" << cfg.cols << " to " << synth_out_
             << "\n";
      };
    });
  }

  void add_split() {
    auto* c = sub("split", "assign blocks of frames to train/val/test", split_);
    c->add_option("--data", split_data_, "dataset directory")->required();
    c->add_option("--out", split_out_, "split plan file (JSON)")->required();
    split_.bind(c, "--k", "split.block_size", "frames per block");
    split_.bind(c, "--seed", "split.seed", "assignment seed");
    c->callback([this] {
      action_ = [this] {
        const auto table = split_.resolve();
        const auto s = config::split(table);
        const auto manifest = read_manifest(split_data_);
        int frames = 0;
        for (const auto& e : manifest.frame_index) frames += e.channel == Channel::precip_mm_per_h;
        const auto plan = partition::build_split(frames, s.block_size, s.seed);
        partition::save_plan(plan, split_out_);
        Inputs in;
        in.add_dataset("data", split_data_);
        record(fs::path(split_out_ + ".provenance.json"), "split", table, in, s.seed, argv_);
        out_ << plan.n_sequences() << " block sequences of 6 x " << plan.block_size << " frames, " << plan.discarded
             << " frames discarded\n";
      };
    });
  }

  void add_patchify() {
    auto* c = sub("patchify", "cut the map into model patches (ring, crop or resize)", patch_);
    c->add_option("--data", patch_data_, "dataset directory")->required();
    c->add_option("--out", patch_out_, "output directory")->required();
    patch_.bind(c, "--mode", "view.mode", "ring (alias patch), crop or resize");
    patch_.bind(c, "--isize", "view.isize", "input patch side");
    patch_.bind(c, "--tsize", "view.tsize", "target tile side");
    patch_.bind(c, "--step", "view.step", "ring width increment");
    patch_.bind(c, "--freq", "view.freq", "rings between width increments");
    patch_.bind(c, "--resize-side", "view.resize_side", "side of the resized map");
    c->callback([this] { action_ = [this] { patchify(); }; });
  }

  void patchify() {
    const auto table = patch_.resolve();
    const auto view = config::view(table);
    if (!fs::exists(fs::path(patch_data_) / kManifestName)) throw UsageError("no dataset at " + patch_data_);
    const ChannelSet channels = read_dataset(patch_data_);
    const GridGeometry& geo = channels.begin()->second.geometry;
    const fs::path out(patch_out_);
    nlohmann::json index{{"view", data::to_json(view)}, {"map_rows", geo.rows}, {"map_cols", geo.cols}};
    nlohmann::json tiles = nlohmann::json::array();

    if (view.mode == data::ViewMode::resize) {
      const auto n = static_cast<std::size_t>(view.resize_side);
      write_dataset(map_channels(channels, square_geometry(geo, n),
                                 [n](Channel ch, const Field& f) {
                                   return is_categorical(ch) ? patch::resize_nearest(f, n, n)
                                                             : patch::resize_full_map(f, n, n);
                                 }),
                    out / "resized");
      tiles.push_back({{"dir", "resized"}});
    } else {
      for (const auto& slot : patch::tile_layout(geo.rows, geo.cols, view.spec())) {
        const std::string name = "tile_" + std::to_string(slot.tile_row) + "_" + std::to_string(slot.tile_col);
        const auto sub_geo = sub_geometry(geo, slot.spec.origin_row, slot.spec.origin_col,
                                          static_cast<std::size_t>(view.isize));
        write_dataset(map_channels(channels, sub_geo,
                                   [&](Channel ch, const Field& f) {
                                     if (view.mode == data::ViewMode::crop) return patch::crop_patch(f, slot.spec).values;
                                     return patch::extract_patch(f, slot.spec, is_categorical(ch) ? patch::Resample::nearest
                                                                                                 : patch::Resample::area)
                                         .values;
                                   }),
                      out / name);
        tiles.push_back({{"dir", name},
                         {"tile_row", slot.tile_row},
                         {"tile_col", slot.tile_col},
                         {"target", {slot.target.row0, slot.target.col0, slot.target.rows, slot.target.cols}},
                         {"origin", {slot.spec.origin_row, slot.spec.origin_col}}});
      }
    }
    index["tiles"] = tiles;
    io::write_text_atomic(out / "tiles.json", index.dump(1) + "\n");
    Inputs in;
    in.add_dataset("data", patch_data_);
    record(out / "provenance.json", "patchify", table, in, 0, argv_);
    out_ << "wrote " << tiles.size() << " " << (tiles.size() == 1 ? "dataset" : "tiles") << " to " << patch_out_ << "\n";
  }

  void add_train() {
    auto* c = sub("train", "train a model on the train split", train_);
    c->add_option("--data", train_data_, "dataset directory")->required();
    c->add_option("--plan", train_plan_, "split plan file")->required();
    c->add_option("--out", train_out_, "run directory")->required();
    train_.bind(c, "--model", "model.kind", "unet, convlstm or svglp");
    train_.bind(c, "--scale", "model.base_width", "filter-count multiplier (1 = full size)");
    train_.bind(c, "--loss", "loss.preset", "total, wssim, ssim, wmse or mse");
    train_.bind(c, "--mode", "view.mode", "ring (alias patch), crop or resize");
    train_.bind(c, "--isize", "view.isize", "input patch side");
    train_.bind(c, "--tsize", "view.tsize", "target tile side");
    train_.bind(c, "--steps", "train.max_steps", "optimisation steps");
    train_.bind(c, "--lr", "train.learning_rate", "Adam learning rate");
    train_.bind(c, "--batch", "train.batch_size", "samples per step");
    c->add_option("--seed", train_seed_, "seed for initialisation and sampling");
    c->add_flag("--quiet", train_quiet_, "do not print the learning curve");
    c->callback([this] { action_ = [this] { train(); }; });
  }

  void train() {
    auto table = train_.resolve();
    if (train_seed_) {
      config::set(table, "model", "seed", std::to_string(*train_seed_));
      config::set(table, "train", "seed", std::to_string(*train_seed_));
    }
    const auto view = config::view(table);
    const auto wc = config::window(table);
    auto mcfg = config::model(table);
    const auto lcfg = config::loss(table);
    auto tcfg = config::training(table);
    tcfg.out_dir = train_out_;

    const auto scene = load_scene(train_data_);
    const auto plan = load_plan_for(train_plan_, scene);
    const data::Views views(scene, view, data::fit_norm(scene, plan.frames(partition::Split::train)));
    mcfg.in_frames = wc.s_in;
    mcfg.out_frames = wc.s_out;
    auto model = models::make_model(views.model_shape(mcfg));

    const auto res = train::train(*model, views, plan, wc, lcfg, tcfg, [this](const train::CurveRow& r) {
      if (!train_quiet_) {
        out_ << "step " << r.step << " " << r.split << " loss " << r.loss_total << " (1-wssim " << r.loss_wssim
             << ", wmse " << r.loss_wmse << ")\n";
      }
    });
    Inputs in;
    in.add_dataset("data", train_data_);
    in.add("plan", train_plan_, file_fingerprint(train_plan_));
    record(fs::path(train_out_) / "provenance.json", "train", table, in, tcfg.seed, argv_);
    out_ << "best validation loss " << res.best_val << " at step " << res.best_step << "; checkpoint "
         << res.best_checkpoint.string() << "\n";
  }

  void add_predict() {
    auto* c = sub("predict", "forecast every window of a split in mm/h", predict_);
    c->add_option("--data", predict_data_, "dataset directory")->required();
    c->add_option("--plan", predict_plan_, "split plan file")->required();
    c->add_option("--out", predict_out_, "forecast directory")->required();
    auto* ck = c->add_option("--ckpt", predict_ckpt_, "model checkpoint");
    auto* base = c->add_option("--baseline", predict_baseline_, "reference forecast instead of a model")
                     ->check(CLI::IsMember({"persistence"}));
    ck->excludes(base);
    c->add_option("--split", predict_split_, "split to forecast")->check(CLI::IsMember({"train", "val", "test"}));
    c->add_option("--max-windows", predict_max_, "evenly spaced subset of at most N windows (0 = all)")
        ->check(CLI::NonNegativeNumber);
    c->callback([this] { action_ = [this] { predict(); }; });
  }

  void predict() {
    const auto table = predict_.resolve();
    if (predict_ckpt_.empty() == predict_baseline_.empty()) {
      throw UsageError("predict needs exactly one of --ckpt or --baseline");
    }
    const auto split = partition::parse_split(predict_split_);
    const auto scene = load_scene(predict_data_);
    const auto plan = load_plan_for(predict_plan_, scene);
    const data::FrameGuard guard(plan, {split});
    auto wc = config::window(table);
    Inputs in;
    in.add_dataset("data", predict_data_);
    in.add("plan", predict_plan_, file_fingerprint(predict_plan_));

    std::vector<verify::Forecast> forecasts;
    if (!predict_ckpt_.empty()) {
      if (!fs::exists(predict_ckpt_)) throw UsageError("checkpoint " + predict_ckpt_ + " does not exist");
      auto ck = models::load_checkpoint(predict_ckpt_);
      detail::require(ck.extra.contains("view"), "checkpoint does not record its data view");
      const data::Views views(scene, data::view_config_from_json(ck.extra.at("view")), ck.norm);
      wc.s_in = ck.model->config().in_frames;
      wc.s_out = ck.model->config().out_frames;
      forecasts = train::predict(*ck.model, views, windows(plan, split, wc), guard);
      in.add("ckpt", predict_ckpt_, file_fingerprint(predict_ckpt_));
    } else {
      for (const auto& w : windows(plan, split, wc)) forecasts.push_back(verify::persistence_forecast(scene, w, guard));
    }
    detail::require(!forecasts.empty(), "the " + predict_split_ + " split has no windows");
    verify::write_forecasts(forecasts, scene.geometry, predict_out_);
    record(fs::path(predict_out_) / "provenance.json", "predict", table, in, 0, argv_);
    out_ << "wrote " << forecasts.size() << " forecasts to " << predict_out_ << "\n";
  }

  std::vector<partition::WindowSample> windows(const partition::SplitPlan& plan, partition::Split split,
                                               const partition::WindowConfig& wc) const {
    auto all = partition::enumerate_windows(plan, split, wc);
    if (predict_max_ == 0 || all.size() <= predict_max_) return all;
    std::vector<partition::WindowSample> out;
    for (std::size_t k = 0; k < predict_max_; ++k) out.push_back(all[all.size() * k / predict_max_]);
    return out;
  }

  void add_evaluate() {
    auto* c = sub("evaluate", "score forecasts per lead time against observations", eval_);
    c->add_option("--pred", eval_pred_, "forecast directory")->required();
    c->add_option("--truth", eval_truth_, "observed dataset directory")->required();
    c->add_option("--out", eval_out_, "scores CSV")->required();
    c->callback([this] {
      action_ = [this] {
        const auto table = eval_.resolve();
        if (!fs::exists(fs::path(eval_pred_) / "forecasts.json")) {
          throw UsageError("no forecasts at " + eval_pred_ + " (forecasts.json missing)");
        }
        const auto forecasts = verify::read_forecasts(eval_pred_);
        const auto truth_set = read_dataset(eval_truth_);
        const auto it = truth_set.find(Channel::precip_mm_per_h);
        detail::require(it != truth_set.end(), "truth dataset has no precipitation channel");
        const auto scores = verify::score_run(forecasts, verify::truth_index(it->second));
        const std::string csv = verify::format_scores(scores);
        const fs::path out(eval_out_);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        io::write_text_atomic(out, csv);
        Inputs in;
        in.add("pred", eval_pred_, file_fingerprint(fs::path(eval_pred_) / "forecasts.json"));
        in.add_dataset("truth", eval_truth_);
        record(fs::path(eval_out_ + ".provenance.json"), "evaluate", table, in, 0, argv_);
        out_ << csv;
      };
    });
  }

  void add_plot() {
    auto* c = sub("plot", "draw metric-vs-lead-time charts from score files", plot_);
    c->add_option("--scores", plot_scores_, "scores CSV, optionally labelled as LABEL=PATH")->required();
    c->add_option("--out", plot_out_, "figure directory")->required();
    c->callback([this] {
      action_ = [this] {
        const auto table = plot_.resolve();
        std::vector<std::pair<std::string, fs::path>> inputs;
        Inputs in;
        for (const auto& s : plot_scores_) {
          const auto eq = s.find('=');
          fs::path path = eq == std::string::npos ? fs::path(s) : fs::path(s.substr(eq + 1));
          std::string label = eq == std::string::npos ? path.stem().string() : s.substr(0, eq);
          if (!fs::exists(path)) throw UsageError("scores file " + path.string() + " does not exist");
          in.add(label, path, file_fingerprint(path));
          inputs.emplace_back(label, path);
        }
        const auto written = verify::plot_scores(inputs, plot_out_);
        record(fs::path(plot_out_) / "provenance.json", "plot", table, in, 0, argv_);
        for (const auto& p : written) out_ << "wrote " << p.string() << "\n";
      };
    });
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_;
  std::vector<std::string> argv_;
  std::function<void()> action_;

  Settings synth_, split_, patch_, train_, predict_, eval_, plot_;
  std::string synth_out_;
  std::string split_data_, split_out_;
  std::string patch_data_, patch_out_;
  std::string train_data_, train_plan_, train_out_;
  std::optional<std::uint64_t> train_seed_;
  bool train_quiet_ = false;
  std::string predict_data_, predict_plan_, predict_out_, predict_ckpt_, predict_baseline_, predict_split_ = "test";
  std::size_t predict_max_ = 0;
  std::string eval_pred_, eval_truth_, eval_out_;
  std::vector<std::string> plot_scores_;
  std::string plot_out_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  App app(out, err);
  return app.run(argc, argv);
}

}  // namespace nowcast::cli
