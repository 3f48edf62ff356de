// Acceptance run: one PASS/FAIL line per criterion. Criteria 7 and 8 are directional claims and are
// reported without failing the run.
//
//   acceptance [--only 1,2,...] [--work DIR] [--steps N] [--ablation-steps N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "model_oracles.hpp"
#include "nowcast/nowcast.hpp"
#include "test_helpers.hpp"

using namespace nowcast;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  std::string out(static_cast<std::size_t>(std::snprintf(nullptr, 0, f, args...)), '\0');
  std::snprintf(out.data(), out.size() + 1, f, args...);
  return out;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1: loss

double relative_gradient_error(const Grid<double>& x, const Grid<double>& y, const loss::LossConfig& cfg) {
  const auto analytic = loss::frame_loss(x, y, cfg, true).grad;
  const double h = 1e-4;
  double diff = 0.0, norm = 0.0;
  Grid<double> yy = y;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double orig = yy.values()[k];
    yy.values()[k] = orig + h;
    const double up = loss::frame_loss(x, yy, cfg, false).combined;
    yy.values()[k] = orig - h;
    const double down = loss::frame_loss(x, yy, cfg, false).combined;
    yy.values()[k] = orig;
    const double fd = (up - down) / (2 * h);
    diff += (fd - analytic.values()[k]) * (fd - analytic.values()[k]);
    norm += fd * fd;
  }
  return std::sqrt(diff / norm);
}

Outcome loss_correctness() {
  std::mt19937_64 rng(101);
  loss::LossConfig cfg;  // alpha 0.84, beta 1e-3
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = testing::random_grid<double>(rng, 16, 16, -1.0, 2.0);
    const auto y = testing::random_grid<double>(rng, 16, 16, -1.0, 2.0);
    worst = std::max(worst, relative_gradient_error(x, y, cfg));
  }
  // The beta term: d/dtheta of beta * sum theta^2 against central differences of total_loss.
  const auto x = testing::random_grid<double>(rng, 16, 16, 0.0, 1.0);
  const auto y = testing::random_grid<double>(rng, 16, 16, 0.0, 1.0);
  std::vector<std::vector<double>> theta{{0.3, -1.2, 2.0}, {0.7}};
  double theta_err = 0.0;
  for (auto& t : theta) {
    for (auto& v : t) {
      const double orig = v, h = 1e-4;
      v = orig + h;
      const double up = loss::total_loss(std::span<const Grid<double>>(&x, 1), std::span<const Grid<double>>(&y, 1), theta, cfg);
      v = orig - h;
      const double down = loss::total_loss(std::span<const Grid<double>>(&x, 1), std::span<const Grid<double>>(&y, 1), theta, cfg);
      v = orig;
      theta_err = std::max(theta_err, std::abs((up - down) / (2 * h) - 2.0 * cfg.beta * orig) / (2.0 * cfg.beta * std::abs(orig)));
    }
  }
  bool self_one = true;
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = testing::random_grid<double>(rng, 16, 16, -3.0, 3.0);
    self_one = self_one && loss::weighted_ssim(g, g, cfg) == 1.0 && loss::mean_ssim(g, g, cfg) == 1.0;
  }
  double degenerate = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Grid<double> flat(16, 16, 0.1 * trial);
    const auto cand = testing::random_grid<double>(rng, 16, 16, 0.0, 1.0);
    degenerate = std::max(degenerate, std::abs(loss::weighted_ssim(flat, cand, cfg) - loss::mean_ssim(flat, cand, cfg)));
  }
  const Grid<double> p(1, 2, std::vector<double>{0.0, 1.0});
  const Grid<double> q(1, 2, std::vector<double>{0.1, 0.8});
  const double wmse = loss::weighted_mse(p, q, cfg);
  const bool pass = worst < 1e-4 && theta_err < 1e-4 && self_one && degenerate < 1e-9 && std::abs(wmse - 0.0325) < 1e-9;
  return {pass, fmt("grad rel err %.2e (theta %.2e), SSIM(X,X)==1 %s, |WSSIM-SSIM| flat ref %.1e, WMSE %.12f", worst,
                    theta_err, self_one ? "yes" : "no", degenerate, wmse)};
}

// ---------------------------------------------------------------- 2: ring patch extraction

long simulate_reach(int isize, int tsize, int step, int freq) {
  long up = 0;
  int w = 1;
  for (int k = 1; k <= (isize - tsize) / 2; ++k) {
    up -= w;
    if (k % freq == 0) w += step;
  }
  return -up;
}

Outcome patch_suite() {
  std::mt19937_64 rng(202);
  bool centre = true, coverage = true;
  double ring_err = 0.0;
  for (int trial = 0; trial < 12; ++trial) {
    const auto image = testing::random_grid<double>(rng, 200, 200, 0.0, 80.0);
    patch::PatchSpec s;
    s.isize = 64;
    s.tsize = 32;
    s.step = 1 + trial % 2;
    s.freq = 2 + trial % 3;
    s.origin_row = static_cast<long>(rng() % 260) - 30;
    s.origin_col = static_cast<long>(rng() % 260) - 30;
    patch::PatchTrace trace;
    const auto p = patch::extract_patch(image, s, patch::Resample::area, &trace);
    const int m = s.margin();
    for (int i = 0; i < s.tsize; ++i) {
      for (int j = 0; j < s.tsize; ++j) {
        centre = centre && p.values(static_cast<std::size_t>(m + i), static_cast<std::size_t>(m + j)) ==
                               image.value_or_zero(s.origin_row + m + i, s.origin_col + m + j);
      }
    }
    // One surviving write per cell: the only double writes are ring corners, last taken by left/right.
    for (int r = 0; r < s.isize; ++r) {
      for (int c = 0; c < s.isize; ++c) {
        const auto rr = static_cast<std::size_t>(r), cc = static_cast<std::size_t>(c);
        const int ring = std::max({m - r, r - (s.isize - 1 - m), m - c, c - (s.isize - 1 - m), 0});
        const bool corner = ring > 0 && (r == m - ring || r == s.isize - 1 - m + ring) &&
                            (c == m - ring || c == s.isize - 1 - m + ring);
        const int owner_side = (trace.owner(rr, cc) - 1) % 4;
        coverage = coverage && trace.owner(rr, cc) >= 0 && trace.writes(rr, cc) == (corner ? 2 : 1) &&
                   (!corner || owner_side == static_cast<int>(c < m ? patch::Side::left : patch::Side::right));
      }
    }
    for (const auto& rec : trace.rings) {
      for (int side = 0; side < 4; ++side) {
        const auto& src = rec.source[static_cast<std::size_t>(side)];
        double sum = 0.0;
        for (long i = 0; i < src.rows; ++i) {
          for (long j = 0; j < src.cols; ++j) sum += image.value_or_zero(src.row0 + i, src.col0 + j);
        }
        const auto& vals = rec.resampled[static_cast<std::size_t>(side)];
        double dst = 0.0;
        for (double v : vals) dst += v;
        ring_err = std::max(ring_err, std::abs(dst / static_cast<double>(vals.size()) - sum / static_cast<double>(src.area())));
      }
    }
  }
  const long simulated = simulate_reach(256, 128, 1, 20);
  const long library = patch::reach(patch::PatchSpec{});

  bool round_trip = true;
  for (auto [rows, cols, t] : {std::tuple{128, 128, 128}, std::tuple{150, 170, 32}, std::tuple{97, 64, 16}}) {
    const auto image = testing::random_grid(rng, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    patch::PatchSpec s;
    s.isize = t + 16;
    s.tsize = t;
    s.freq = 3;
    std::vector<std::pair<patch::Rect, Field>> tiles;
    for (const auto& tile : patch::tile_map(image, s)) {
      tiles.emplace_back(tile.slot.target, patch::center_block(tile.patch.values, s.isize, s.tsize));
    }
    round_trip = round_trip && patch::reassemble(tiles, image.rows(), image.cols()) == image;
  }
  const bool pass = centre && coverage && ring_err < 1e-5 && simulated == 136 && library == 136 && round_trip;
  return {pass, fmt("centre exact %s, one surviving write per cell %s, ring mean err %.1e, reach %ld (simulated %ld), "
                    "tile round trip %s",
                    centre ? "yes" : "no", coverage ? "yes" : "no", ring_err, library, simulated,
                    round_trip ? "yes" : "no")};
}

// ---------------------------------------------------------------- 3: partition

Outcome partition_suite() {
  bool disjoint = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto plan = partition::build_split(20352, 47, seed);
    std::vector<int> owner(20352, -1);
    for (auto s : {partition::Split::train, partition::Split::val, partition::Split::test}) {
      for (int f : plan.frames(s)) {
        disjoint = disjoint && owner[static_cast<std::size_t>(f)] == -1;
        owner[static_cast<std::size_t>(f)] = static_cast<int>(s);
      }
      for (const auto& w : partition::enumerate_windows(plan, s)) {
        for (int f = w.start; f < w.start + 12; ++f) disjoint = disjoint && plan.role(f / 47) == s;
      }
    }
  }
  const auto one = partition::build_split(282, 47, 1);
  long per_block = -1;
  for (int b = 0; b < 6; ++b) {
    long n = 0;
    for (auto s : {partition::Split::train, partition::Split::val, partition::Split::test}) {
      for (const auto& w : partition::enumerate_windows(one, s)) n += w.block_id == b;
    }
    if (per_block == -1) per_block = n;
    if (n != per_block) per_block = -2;
  }
  const auto full = partition::build_split(20352, 47, 9);
  const bool pass = disjoint && per_block == 36 && full.n_sequences() == 72 && full.discarded == 48;
  return {pass, fmt("disjoint over 100 seeds %s, windows per block %ld, sequences %d, discarded %d",
                    disjoint ? "yes" : "no", per_block, full.n_sequences(), full.discarded)};
}

// ---------------------------------------------------------------- 4: transforms

Outcome transform_suite() {
  std::mt19937_64 rng(404);
  double round_trip = 0.0, mean_err = 0.0, sd_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Grid<double>> train;
    for (int i = 0; i < 4; ++i) {
      auto g = testing::random_grid<double>(rng, 24, 31, 0.0, 1.0);
      for (auto& v : g.values()) v = v < 0.6 ? 0.0 : 300.0 * std::pow(v, 4.0);
      train.push_back(g);
    }
    const auto m = transform::fit_precip_moments(std::span<const Grid<double>>(train));
    const auto x = testing::random_grid<double>(rng, 33, 29, 0.0, 300.0);
    const auto back = transform::precip_inverse(transform::precip_forward(x, m), m);
    for (std::size_t i = 0; i < x.size(); ++i) round_trip = std::max(round_trip, std::abs(back.values()[i] - x.values()[i]));
    double s = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (const auto& g : train) {
      const auto z = transform::precip_forward(g, m);
      for (double v : z.values()) {
        s += v;
        ss += v * v;
        ++n;
      }
    }
    const double mean = s / static_cast<double>(n);
    mean_err = std::max(mean_err, std::abs(mean));
    sd_err = std::max(sd_err, std::abs(std::sqrt(ss / static_cast<double>(n) - mean * mean) - 1.0));
  }
  const bool pass = round_trip < 1e-6 && mean_err < 1e-6 && sd_err < 1e-6;
  return {pass, fmt("round trip err %.1e mm/h, train mean %.1e, stdev-1 %.1e", round_trip, mean_err, sd_err)};
}

// ---------------------------------------------------------------- 5: model contracts

Outcome model_contracts() {
  int checked = 0;
  std::string failures;
  for (auto kind : {models::ModelKind::unet, models::ModelKind::convlstm, models::ModelKind::svglp}) {
    for (double bw : {0.125, 0.25}) {
      for (int spatial : {64, 128}) {
        models::ModelConfig c;
        c.kind = kind;
        c.base_width = bw;
        c.spatial = spatial;
        c.seed = 7;
        auto m = models::make_model(c);
        std::mt19937_64 rng(5);
        std::normal_distribution<double> d;
        auto fill = [&](nn::Shape s) {
          nn::Tensor t(std::move(s));
          for (auto& v : t.data) v = static_cast<float>(d(rng));
          return t;
        };
        const models::Batch batch{fill({2, 6, 5, spatial, spatial}), fill({2, 6, 5, spatial, spatial}),
                                  fill({2, 1, spatial, spatial})};
        const auto out = m->forward(batch, models::Phase::train);
        bool ok = out.prediction->value.shape == nn::Shape{2, 6, spatial, spatial} && out.prediction->value.all_finite();
        ok = ok && static_cast<long>(m->params().count()) == testing::count_for(c);
        const auto il = models::image_loss(out.prediction, batch.target(), loss::LossConfig{});
        nn::backward(out.aux_loss ? nn::add(il.value, out.aux_loss) : il.value);
        for (const auto& p : m->params().params()) {
          ok = ok && !p.var->grad.empty() && p.var->grad.all_finite() && p.var->grad.sum_squares() > 0.0;
        }
        nn::NoGradGuard no_grad;
        const auto ev = m->forward(batch, models::Phase::eval);
        ok = ok && ev.prediction->value.shape == nn::Shape{2, 6, spatial, spatial} && ev.prediction->value.all_finite();
        ++checked;
        if (!ok) failures += fmt(" %s/bw%.3g/S%d", std::string(models::to_string(kind)).c_str(), bw, spatial);
      }
    }
  }
  return {failures.empty(), fmt("%d configurations: shape, closed-form count, finiteness, gradient coverage%s", checked,
                                failures.empty() ? "" : (" FAILED:" + failures).c_str())};
}

// ---------------------------------------------------------------- shared experiment harness

struct Experiment {
  synth::SceneConfig scene_cfg;
  data::ViewConfig view;
  std::string loss_preset = "total";
  int steps = 1000;
  std::uint64_t seed = 1;
  fs::path out;
};

struct ExperimentResult {
  std::vector<train::CurveRow> curve;
  verify::ScoreTable model;
  verify::ScoreTable persistence;
  double seconds = 0.0;
};

synth::SceneConfig toy_scene(std::uint64_t seed, int side) {
  synth::SceneConfig s;
  s.seed = seed;
  s.rows = s.cols = side;
  s.frame_count = 282;
  s.n_cells = side == 64 ? 10 : 32;
  s.u = 1.5;
  s.v = 0.75;
  s.aux_cadence_min = 5;
  return s;
}

ExperimentResult run_experiment(const Experiment& e) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto scene = data::scene_from_channels(synth::generate_scene(e.scene_cfg));
  const auto plan = partition::build_split(scene.frames(), 47, e.seed);
  const data::Views views(scene, e.view, data::fit_norm(scene, plan.frames(partition::Split::train)));
  models::ModelConfig mc;
  mc.base_width = 0.125;
  mc.seed = e.seed;
  auto model = models::make_model(views.model_shape(mc));
  train::TrainConfig tc;
  tc.max_steps = e.steps;
  tc.eval_interval = std::max(1, e.steps / 5);
  tc.max_eval_samples = 16;
  tc.seed = e.seed;
  tc.out_dir = e.out;
  const partition::WindowConfig wc;
  ExperimentResult r;
  r.curve = train::train(*model, views, plan, wc, loss::LossConfig::preset(e.loss_preset), tc).curve;

  auto best = models::load_checkpoint(e.out / "best.ckpt");
  const data::FrameGuard guard(plan, {partition::Split::test});
  const auto windows = partition::enumerate_windows(plan, partition::Split::test, wc);
  const auto truth = verify::truth_index(scene, guard);
  r.model = verify::score_run(train::predict(*best.model, views, windows, guard), truth);
  std::vector<verify::Forecast> pers;
  for (const auto& w : windows) pers.push_back(verify::persistence_forecast(scene, w, guard));
  r.persistence = verify::score_run(pers, truth);
  io::write_text_atomic(e.out / "scores.csv", verify::format_scores(r.model));
  io::write_text_atomic(e.out / "persistence.csv", verify::format_scores(r.persistence));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

data::ViewConfig ring64() {
  data::ViewConfig v;
  v.isize = 64;
  v.tsize = 32;
  v.freq = 4;
  return v;
}

double mean_mae(const verify::ScoreTable& t) {
  double s = 0.0;
  for (const auto& r : t.rows) s += r.mae();
  return s / static_cast<double>(t.rows.size());
}

// ---------------------------------------------------------------- 6: training efficacy

Outcome training_efficacy(const fs::path& work, int steps) {
  Experiment e{toy_scene(7, 64), ring64(), "total", steps, 1, work / "c6"};
  const auto r = run_experiment(e);
  const double first = r.curve.front().loss_total;
  double last = first;
  for (const auto& row : r.curve) {
    if (row.split == "train") last = row.loss_total;
  }
  const bool a = last <= 0.5 * first;
  bool b = true;
  std::string leads;
  for (int lead : {45, 60, 75, 90}) {
    const double mm = r.model.at_lead(lead).mae(), mp = r.persistence.at_lead(lead).mae();
    b = b && mm < mp;
    leads += fmt(" +%d %.3f/%.3f", lead, mm, mp);
  }
  const double m15 = r.model.at_lead(15).mae(), m90 = r.model.at_lead(90).mae();
  const bool c = m90 >= m15;
  return {a && b && c, fmt("(a) train loss %.3f -> %.3f (%.0f%% drop) %s; (b) MAE model/persistence%s %s; "
                           "(c) MAE +90 %.3f >= +15 %.3f %s; %d steps, %.0f s",
                           first, last, 100.0 * (1.0 - last / first), a ? "ok" : "FAIL", leads.c_str(), b ? "ok" : "FAIL",
                           m90, m15, c ? "ok" : "FAIL", steps, r.seconds)};
}

// ---------------------------------------------------------------- 7: loss ablation (report only)

Outcome loss_ablation(const fs::path& work, int steps) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    double f1[2];
    int k = 0;
    for (const char* preset : {"total", "mse"}) {
      Experiment e{toy_scene(10 + seed, 64), ring64(), preset, steps, seed,
                   work / fmt("c7_%s_seed%llu", preset, static_cast<unsigned long long>(seed))};
      f1[k++] = run_experiment(e).model.at_lead(90).at[1].f1();
    }
    wins += f1[0] >= f1[1];
    detail += fmt(" seed %llu: %.3f vs %.3f;", static_cast<unsigned long long>(seed), f1[0], f1[1]);
  }
  return {wins >= 2, fmt("F1@1mm/h at +90 min, WSSIM+WMSE vs MSE:%s %d/3 seeds favour WSSIM+WMSE (%d steps)",
                         detail.c_str(), wins, steps)};
}

// ---------------------------------------------------------------- 8: patch ablation (report only)

Outcome patch_ablation(const fs::path& work, int steps) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    data::ViewConfig naive;
    naive.mode = data::ViewMode::crop;
    naive.isize = 64;
    naive.tsize = 32;
    double mae[2];
    int k = 0;
    for (const auto& view : {ring64(), naive}) {
      Experiment e{toy_scene(20 + seed, 128), view, "total", steps, seed,
                   work / fmt("c8_%s_seed%llu", k == 0 ? "ring" : "naive", static_cast<unsigned long long>(seed))};
      mae[k++] = mean_mae(run_experiment(e).model);
    }
    wins += mae[0] <= mae[1];
    detail += fmt(" seed %llu: %.4f vs %.4f;", static_cast<unsigned long long>(seed), mae[0], mae[1]);
  }
  return {wins >= 2, fmt("test MAE (mean over leads), ring 64/32 vs plain crop 64/32:%s %d/3 seeds favour ring (%d steps)",
                         detail.c_str(), wins, steps)};
}

// ---------------------------------------------------------------- 9: determinism

Outcome determinism(const fs::path& work) {
  bool scenes = true, splits = true, curves = true, ckpts = true;
  auto sc = toy_scene(5, 48);
  sc.frame_count = 90;
  const auto a = synth::generate_scene(sc), b = synth::generate_scene(sc);
  for (const auto& [ch, seq] : a) {
    for (std::size_t f = 0; f < seq.frames.size(); ++f) scenes = scenes && seq.frames[f].values == b.at(ch).frames[f].values;
  }
  for (std::uint64_t s = 0; s < 20; ++s) splits = splits && partition::build_split(20352, 47, s) == partition::build_split(20352, 47, s);

  const auto scene = data::scene_from_channels(a);
  const auto plan = partition::build_split(scene.frames(), 15, 3);
  data::ViewConfig v;
  v.isize = 32;
  v.tsize = 16;
  v.freq = 4;
  for (auto kind : {models::ModelKind::unet, models::ModelKind::convlstm, models::ModelKind::svglp}) {
    std::string curve[2], ckpt[2];
    for (int run = 0; run < 2; ++run) {
      const data::Views views(scene, v, data::fit_norm(scene, plan.frames(partition::Split::train)));
      models::ModelConfig mc;
      mc.kind = kind;
      mc.base_width = 0.125;
      auto model = models::make_model(views.model_shape(mc));
      train::TrainConfig tc;
      tc.max_steps = 6;
      tc.eval_interval = 3;
      tc.batch_size = 2;
      tc.max_eval_samples = 4;
      tc.clip_norm = kind == models::ModelKind::unet ? 0.0 : 1.0;
      tc.out_dir = work / fmt("c9_%s_%d", std::string(models::to_string(kind)).c_str(), run);
      fs::remove_all(tc.out_dir);
      const auto res = train::train(*model, views, plan, {}, loss::LossConfig{}, tc);
      curve[run] = bytes(res.curve_csv);
      ckpt[run] = bytes(res.best_checkpoint) + bytes(res.last_checkpoint);
    }
    curves = curves && !curve[0].empty() && curve[0] == curve[1];
    ckpts = ckpts && !ckpt[0].empty() && ckpt[0] == ckpt[1];
  }
  return {scenes && splits && curves && ckpts,
          fmt("identical scenes %s, splits %s, curves %s, checkpoints %s (all three models)", scenes ? "yes" : "no",
              splits ? "yes" : "no", curves ? "yes" : "no", ckpts ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria 1-9");
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "nowcast_acceptance").string();
  int steps = 1000, ablation_steps = 400;
  app.add_option("--only", only, "criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--work", work, "scratch directory");
  app.add_option("--steps", steps, "training steps for criterion 6")->check(CLI::Range(200, 1000));
  app.add_option("--ablation-steps", ablation_steps, "training steps per run for criteria 7 and 8")
      ->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    bool report_only;
    std::function<Outcome()> run;
  };
  const fs::path w(work);
  const std::vector<Criterion> criteria{
      {1, "loss correctness", false, loss_correctness},
      {2, "ring patch extraction", false, patch_suite},
      {3, "partitioning", false, partition_suite},
      {4, "transforms", false, transform_suite},
      {5, "model contracts", false, model_contracts},
      {6, "training efficacy", false, [&] { return training_efficacy(w, steps); }},
      {7, "loss-ablation direction", true, [&] { return loss_ablation(w, ablation_steps); }},
      {8, "patch-ablation direction", true, [&] { return patch_ablation(w, ablation_steps); }},
      {9, "determinism", false, [&] { return determinism(w); }},
  };

  std::ofstream report(w / "report.txt");
  int hard_failures = 0;
  for (const auto& c : criteria) {
    if (!selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* verdict = o.pass ? "PASS" : (c.report_only ? "NOT MET (report only)" : "FAIL");
    const std::string line =
        fmt("criterion %d %s: %s | %s [%.1f s]", c.id, c.name, verdict, o.detail.c_str(), secs);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << '\n' << std::flush;
    hard_failures += !o.pass && !c.report_only;
  }
  return hard_failures == 0 ? 0 : 1;
}
