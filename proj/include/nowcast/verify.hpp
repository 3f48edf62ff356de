#pragma once

// Forecast scoring in mm/h: pixel-pooled MAE and F1 per lead time, a persistence control, forecast
// storage, the scores CSV and simple line plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nowcast/dataset.hpp"
#include "nowcast/grid_store.hpp"

namespace nowcast::verify {

inline constexpr double kThresholds[2] = {0.1, 1.0};

inline void require_same_shape(const Field& a, const Field& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error("shape mismatch: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

inline double abs_error_sum(const Field& pred, const Field& truth) {
  require_same_shape(pred, truth);
  double s = 0.0;
  const auto p = pred.values();
  const auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(static_cast<double>(p[i]) - static_cast<double>(t[i]));
  return s;
}

inline double mae(const Field& pred, const Field& truth) {
  const double s = abs_error_sum(pred, truth);
  return pred.size() == 0 ? 0.0 : s / static_cast<double>(pred.size());
}

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;

  long total() const { return tp + fp + fn + tn; }
  /// 2TP / (2TP + FP + FN); 0 when there is no true positive (including the all-dry case).
  double f1() const { return tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn); }

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Both grids binarised with value >= threshold.
inline Confusion confusion(const Field& pred, const Field& truth, double threshold) {
  detail::require_config(threshold > 0.0, "F1 threshold must be positive");
  require_same_shape(pred, truth);
  Confusion c;
  const auto p = pred.values();
  const auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool yp = p[i] >= threshold;
    const bool yt = t[i] >= threshold;
    if (yp && yt) ++c.tp;
    else if (yp) ++c.fp;
    else if (yt) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f1(const Field& pred, const Field& truth, double threshold) {
  return confusion(pred, truth, threshold).f1();
}

/// Forecast of one window as full-map mm/h frames, one per lead time.
struct Forecast {
  partition::WindowSample window;
  EpochMinutes issue_time = 0;
  std::vector<EpochMinutes> valid_times;
  std::vector<Field> frames;
};
/// Repeats the last observed frame for every lead time.
inline Forecast persistence_forecast(const data::Scene& scene, const partition::WindowSample& w,
                                     const data::FrameGuard& guard) {
  const int last = w.start + w.s_in - 1;
  guard.check(last);
  Forecast f;
  f.window = w;
  f.issue_time = w.issue_time(scene.t0(), scene.cadence_min);
  for (int t = 1; t <= w.s_out; ++t) {
    f.valid_times.push_back(f.issue_time + t * scene.cadence_min);
    f.frames.push_back(scene.precip.at(static_cast<std::size_t>(last)));
  }
  return f;
}

/// Forecasts on disk: one grid_store dataset per issue time plus an index with lead-time labels.
inline void write_forecasts(const std::vector<Forecast>& forecasts, const GridGeometry& geometry,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& f : forecasts) {
    FrameSequence seq;
    seq.channel = Channel::precip_mm_per_h;
    seq.geometry = geometry;
    seq.cadence_min = f.valid_times.size() > 1 ? f.valid_times[1] - f.valid_times[0] : 15;
    nlohmann::json leads = nlohmann::json::array();
    for (std::size_t t = 0; t < f.frames.size(); ++t) {
      seq.frames.push_back({f.valid_times[t], Channel::precip_mm_per_h, f.frames[t]});
      leads.push_back(f.valid_times[t] - f.issue_time);
    }
    const std::string name = "issue_" + std::to_string(f.issue_time);
    write_dataset(ChannelSet{{Channel::precip_mm_per_h, seq}}, dir / name);
    index.push_back({{"issue_time", f.issue_time}, {"dir", name}, {"lead_time_min", leads}});
  }
  io::write_text_atomic(dir / "forecasts.json", nlohmann::json{{"forecasts", index}}.dump(2));
}

inline std::vector<Forecast> read_forecasts(const std::filesystem::path& dir) {
  const auto j = nlohmann::json::parse(io::read_text(dir / "forecasts.json"));
  std::vector<Forecast> out;
  for (const auto& e : j.at("forecasts")) {
    Forecast f;
    f.issue_time = e.at("issue_time").get<EpochMinutes>();
    const auto set = read_dataset(dir / e.at("dir").get<std::string>());
    const auto& seq = set.at(Channel::precip_mm_per_h);
    const auto leads = e.at("lead_time_min").get<std::vector<EpochMinutes>>();
    detail::require(leads.size() == seq.frames.size(), "forecast index does not match its frames");
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      detail::require(seq.frames[t].timestamp == f.issue_time + leads[t], "forecast lead times are misaligned");
      f.valid_times.push_back(seq.frames[t].timestamp);
      f.frames.push_back(seq.frames[t].values);
    }
    out.push_back(std::move(f));
  }
  return out;
}

struct LeadScore {
  int lead_time_min = 0;
  double abs_error = 0.0;  // summed over all pixels of all forecasts
  long pixels = 0;
  Confusion at[2];         // per entry of kThresholds

  double mae() const { return pixels == 0 ? 0.0 : abs_error / static_cast<double>(pixels); }
};

struct ScoreTable {
  std::vector<LeadScore> rows;

  const LeadScore& at_lead(int minutes) const {
    for (const auto& r : rows) {
      if (r.lead_time_min == minutes) return r;
    }
    throw Error("no scores at lead time " + std::to_string(minutes) + " min");
  }
};

/// Observed mm/h frames by timestamp.
using Truth = std::map<EpochMinutes, const Field*>;

inline Truth truth_index(const data::Scene& scene, const data::FrameGuard& guard) {
  Truth t;
  for (int f = 0; f < scene.frames(); ++f) {
    if (!guard.allows(f)) continue;
    t[scene.times[static_cast<std::size_t>(f)]] = &scene.precip[static_cast<std::size_t>(f)];
  }
  return t;
}

inline Truth truth_index(const FrameSequence& seq) {
  Truth t;
  for (const auto& f : seq.frames) t[f.timestamp] = &f.values;
  return t;
}

/// Pools metrics per lead time over all forecasts (pixel-pooled MAE, summed confusion counts).
inline ScoreTable score_run(const std::vector<Forecast>& forecasts, const Truth& truth) {
  detail::require(!forecasts.empty(), "no forecasts to score");
  ScoreTable table;
  const std::size_t T = forecasts.front().frames.size();
  for (std::size_t t = 0; t < T; ++t) {
    LeadScore row;
    row.lead_time_min = static_cast<int>(forecasts.front().valid_times.at(t) - forecasts.front().issue_time);
    table.rows.push_back(row);
  }
  for (const auto& f : forecasts) {
    detail::require(f.frames.size() == T && f.valid_times.size() == T, "forecasts have different lengths");
    for (std::size_t t = 0; t < T; ++t) {
      auto& row = table.rows[t];
      if (f.valid_times[t] - f.issue_time != row.lead_time_min) {
        throw Error("misaligned lead time at issue " + std::to_string(f.issue_time));
      }
      auto it = truth.find(f.valid_times[t]);
      if (it == truth.end()) throw Error("no observation at t=" + std::to_string(f.valid_times[t]));
      row.abs_error += abs_error_sum(f.frames[t], *it->second);
      row.pixels += static_cast<long>(f.frames[t].size());
      for (int k = 0; k < 2; ++k) row.at[k] += confusion(f.frames[t], *it->second, kThresholds[k]);
    }
  }
  return table;
}

/// Columns lead_time_min, mae, f1_0.1, f1_1.0, tp, fp, fn, tn; counts are at the 0.1 mm/h threshold.
inline std::string format_scores(const ScoreTable& table) {
  std::ostringstream os;
  os << "lead_time_min,mae,f1_0.1,f1_1.0,tp,fp,fn,tn\n" << std::setprecision(9);
  for (const auto& r : table.rows) {
    os << r.lead_time_min << ',' << r.mae() << ',' << r.at[0].f1() << ',' << r.at[1].f1() << ',' << r.at[0].tp << ','
       << r.at[0].fp << ',' << r.at[0].fn << ',' << r.at[0].tn << '\n';
  }
  return os.str();
}

struct ScoreRow {
  int lead_time_min = 0;
  double mae = 0.0;
  double f1_low = 0.0;
  double f1_high = 0.0;
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline std::vector<ScoreRow> read_scores(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("lead_time_min,mae,f1_0.1,f1_1.0", 0) != 0) throw Error(path.string() + " is not a scores CSV");
  std::vector<ScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ScoreRow r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%ld,%ld,%ld,%ld", &r.lead_time_min, &r.mae, &r.f1_low, &r.f1_high,
                    &r.tp, &r.fp, &r.fn, &r.tn) != 8) {
      throw Error("malformed scores row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line chart (one polyline per series, axes with min/max labels).
inline std::string line_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series) {
  const double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">lead time (min)</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  for (double v : {x0, x1}) {
    os << "<text x=\"" << px(v) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << v << "</text>\n";
  }
  for (double v : {y0, y1}) {
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << v << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colours[k % 6];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }
    const double ly = T + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly << "\" stroke=\"" << c
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Writes mae.svg, f1_0.1.svg and f1_1.0.svg comparing the labelled score files.
inline std::vector<std::filesystem::path> plot_scores(const std::vector<std::pair<std::string, std::filesystem::path>>& inputs,
                                                      const std::filesystem::path& out_dir) {
  struct Metric {
    const char* file;
    const char* title;
    double ScoreRow::*field;
  };
  const Metric metrics[] = {{"mae.svg", "MAE (mm/h)", &ScoreRow::mae},
                            {"f1_0.1.svg", "F1 at 0.1 mm/h", &ScoreRow::f1_low},
                            {"f1_1.0.svg", "F1 at 1 mm/h", &ScoreRow::f1_high}};
  std::vector<std::pair<std::string, std::vector<ScoreRow>>> tables;
  for (const auto& [label, path] : inputs) tables.emplace_back(label, read_scores(path));
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& m : metrics) {
    std::vector<Series> series;
    for (const auto& [label, rows] : tables) {
      Series s{label, {}, {}};
      for (const auto& r : rows) {
        s.x.push_back(r.lead_time_min);
        s.y.push_back(r.*(m.field));
      }
      series.push_back(std::move(s));
    }
    io::write_text_atomic(out_dir / m.file, line_chart_svg(m.title, m.title, series));
    written.push_back(out_dir / m.file);
  }
  return written;
}

}  // namespace nowcast::verify
