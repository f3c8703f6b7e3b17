#include "mixlab/plots.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

namespace mixlab {
namespace {

constexpr Rgb8 kAxis{40, 40, 40};
constexpr Rgb8 kGrid{225, 225, 225};

const std::vector<Rgb8> kPalette = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {20, 20, 20}};

// 3x5 glyphs, one row per entry, MSB = left column.
const std::map<char, std::array<uint8_t, 5>> kGlyphs = {
    {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
    {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
    {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}},
    {'+', {0, 2, 7, 2, 0}}, {'e', {0, 7, 7, 4, 7}}};

struct Frame {
  int left = 36, right, top = 12, bottom;
  double x0, x1, y0, y1;

  int px(double x) const { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (right - left))); }
  int py(double y) const { return bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (bottom - top))); }
};

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    const double d = std::max(std::abs(lo) * 0.1, 0.5);
    lo -= d;
    hi += d;
  }
}

void draw_frame(Canvas& cv, const Frame& f) {
  for (int k = 1; k < 4; ++k) {
    const int y = f.top + (f.bottom - f.top) * k / 4;
    cv.line(y, f.left, y, f.right, kGrid);
  }
  cv.line(f.bottom, f.left, f.bottom, f.right, kAxis);
  cv.line(f.top, f.left, f.bottom, f.left, kAxis);
  cv.text(f.top - 2, 2, short_number(f.y1), kAxis);
  cv.text(f.bottom - 4, 2, short_number(f.y0), kAxis);
  cv.text(f.bottom + 4, f.left, short_number(f.x0), kAxis);
  const std::string xr = short_number(f.x1);
  cv.text(f.bottom + 4, f.right - 4 * static_cast<int>(xr.size()), xr, kAxis);
}

void save(const Raster& r, const std::filesystem::path& path, PlotResult& out) {
  write_png(path.string(), r);
  out.files.push_back(path.string());
}

}  // namespace

Canvas::Canvas(int height, int width) : r_(height, width, 3, 255) {}

void Canvas::set(int y, int x, Rgb8 c) {
  if (y < 0 || x < 0 || y >= r_.height || x >= r_.width) return;
  uint8_t* p = r_.px(y, x);
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

void Canvas::line(int y0, int x0, int y1, int x1, Rgb8 c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(y0, x0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::fill_rect(int y0, int x0, int y1, int x1, Rgb8 c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(y, x, c);
  }
}

void Canvas::text(int y, int x, const std::string& s, Rgb8 c) {
  for (char ch : s) {
    const auto it = kGlyphs.find(ch);
    if (it != kGlyphs.end()) {
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (it->second[row] & (4 >> col)) set(y + row, x + col, c);
        }
      }
    }
    x += 4;
  }
}

Raster plot_lines(const std::vector<std::vector<std::pair<double, double>>>& series,
                  const std::vector<Rgb8>& colors, int height, int width) {
  Canvas cv(height, width);
  Frame f;
  f.right = width - 10;
  f.bottom = height - 14;
  f.x0 = f.y0 = INFINITY;
  f.x1 = f.y1 = -INFINITY;
  for (const auto& s : series) {
    for (const auto& [x, y] : s) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      f.x0 = std::min(f.x0, x);
      f.x1 = std::max(f.x1, x);
      f.y0 = std::min(f.y0, y);
      f.y1 = std::max(f.y1, y);
    }
  }
  if (!std::isfinite(f.x0)) {
    f.x0 = f.y0 = 0.0;
    f.x1 = f.y1 = 1.0;
  }
  pad_range(f.x0, f.x1);
  pad_range(f.y0, f.y1);
  draw_frame(cv, f);
  for (size_t k = 0; k < series.size(); ++k) {
    const Rgb8 c = colors[k % colors.size()];
    const auto& s = series[k];
    for (size_t i = 0; i < s.size(); ++i) {
      if (!std::isfinite(s[i].second)) continue;
      const int x = f.px(s[i].first), y = f.py(s[i].second);
      if (s.size() == 1) cv.fill_rect(y - 1, x - 1, y + 1, x + 1, c);
      if (i > 0 && std::isfinite(s[i - 1].second)) cv.line(f.py(s[i - 1].second), f.px(s[i - 1].first), y, x, c);
    }
  }
  return cv.raster();
}

Raster plot_bars(const std::vector<double>& values, Rgb8 color, int height, int width) {
  Canvas cv(height, width);
  Frame f;
  f.right = width - 10;
  f.bottom = height - 14;
  f.x0 = 0.0;
  f.x1 = static_cast<double>(std::max<size_t>(values.size(), 1));
  f.y0 = 0.0;
  f.y1 = 0.0;
  for (double v : values) f.y1 = std::max(f.y1, v);
  pad_range(f.y0, f.y1);
  f.y0 = 0.0;
  draw_frame(cv, f);
  for (size_t i = 0; i < values.size(); ++i) {
    const int xa = f.px(static_cast<double>(i) + 0.15);
    const int xb = f.px(static_cast<double>(i) + 0.85);
    cv.fill_rect(f.py(std::max(values[i], 0.0)), xa, f.bottom - 1, xb, color);
  }
  return cv.raster();
}

void parse_plot_log(const std::string& text, PlotLog& log) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw std::runtime_error("not an object");
      if (j.contains("total")) {
        MetricsRecord r;
        r.iter = j.at("iter").get<int>();
        r.lr = j.at("lr").get<double>();
        r.loss.l_s = j.at("l_s").get<double>();
        r.loss.l_st = j.at("l_st").get<double>();
        r.loss.l_hts = j.at("l_hts").get<double>();
        r.loss.l_pro = j.at("l_pro").get<double>();
        r.loss.l_pixel = j.at("l_pixel").get<double>();
        r.loss.total = j.at("total").get<double>();
        log.losses.push_back(r);
      } else if (j.contains("eval_miou")) {
        log.evals.push_back({j.at("iter").get<int>(), j.at("eval_miou").get<double>()});
      } else if (j.contains("tau") && j.contains("miou")) {
        log.tau_sweep.emplace_back(j.at("tau").get<double>(), j.at("miou").get<double>());
      } else if (j.contains("boundary_hist")) {
        log.boundary_hist = j.at("boundary_hist").get<std::vector<uint64_t>>();
      } else {
        ++log.corrupt_lines;
      }
    } catch (const std::exception&) {
      ++log.corrupt_lines;
    }
  }
}

PlotLog read_plot_logs(const std::vector<std::string>& paths) {
  PlotLog log;
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read log " + p);
    std::ostringstream ss;
    ss << in.rdbuf();
    parse_plot_log(ss.str(), log);
  }
  return log;
}

PlotResult emit_plots(const PlotLog& log, const std::string& out_dir) {
  PlotResult out;
  if (log.corrupt_lines > 0) {
    out.warnings += log.corrupt_lines;
    out.messages.push_back("skipped " + std::to_string(log.corrupt_lines) + " corrupt log line(s)");
  }
  const bool any = !log.losses.empty() || !log.evals.empty() || !log.tau_sweep.empty() ||
                   !log.boundary_hist.empty();
  if (!any) {
    ++out.warnings;
    out.messages.push_back("log holds no plottable records; no plots written");
    return out;
  }
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);

  if (!log.losses.empty()) {
    std::vector<std::vector<std::pair<double, double>>> series(6);
    for (const auto& r : log.losses) {
      const double x = r.iter;
      const double v[6] = {r.loss.l_s, r.loss.l_st, r.loss.l_hts, r.loss.l_pro, r.loss.l_pixel, r.loss.total};
      for (size_t k = 0; k < 6; ++k) series[k].emplace_back(x, v[k]);
    }
    save(plot_lines(series, kPalette), dir / "loss_curves.png", out);
  }
  if (!log.evals.empty()) {
    std::vector<std::pair<double, double>> s;
    for (const auto& e : log.evals) s.emplace_back(e.iter, e.miou);
    save(plot_lines({s}, {kPalette[0]}), dir / "miou_curve.png", out);
  }
  if (!log.tau_sweep.empty()) {
    std::vector<double> v;
    for (const auto& t : log.tau_sweep) v.push_back(t.second);
    save(plot_bars(v, kPalette[2]), dir / "tau_sweep.png", out);
  }
  if (!log.boundary_hist.empty()) {
    std::vector<double> v(log.boundary_hist.begin(), log.boundary_hist.end());
    save(plot_bars(v, kPalette[3]), dir / "boundary_hist.png", out);
  }
  return out;
}

PlotResult emit_plots(const std::vector<std::string>& log_paths, const std::string& out_dir) {
  return emit_plots(read_plot_logs(log_paths), out_dir);
}

}  // namespace mixlab
