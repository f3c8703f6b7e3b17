#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixlab/image_io.hpp"
#include "mixlab/train.hpp"

namespace mixlab {

/// Records recovered from one or more JSONL logs. A line is classified by its
/// keys: "total" (loss record), "eval_miou" (evaluation point), "tau" + "miou"
/// (threshold sweep entry), "boundary_hist" (error-distance histogram).
struct PlotLog {
  std::vector<MetricsRecord> losses;
  std::vector<EvalPoint> evals;
  std::vector<std::pair<double, double>> tau_sweep;  // (tau, mIoU) in file order
  std::vector<uint64_t> boundary_hist;
  int corrupt_lines = 0;
};

void parse_plot_log(const std::string& text, PlotLog& log);
PlotLog read_plot_logs(const std::vector<std::string>& paths);

struct PlotResult {
  std::vector<std::string> files;
  int warnings = 0;
  std::vector<std::string> messages;
};

/// Writes loss_curves.png, miou_curve.png, tau_sweep.png and boundary_hist.png
/// into out_dir for whichever record kinds are present.
PlotResult emit_plots(const PlotLog& log, const std::string& out_dir);
PlotResult emit_plots(const std::vector<std::string>& log_paths, const std::string& out_dir);

// ---- rasterization ---------------------------------------------------------

struct Rgb8 {
  uint8_t r, g, b;
};

class Canvas {
 public:
  Canvas(int height, int width);

  void set(int y, int x, Rgb8 c);
  void line(int y0, int x0, int y1, int x1, Rgb8 c);
  void fill_rect(int y0, int x0, int y1, int x1, Rgb8 c);
  /// Digits, '.', '-', '+', 'e' in a 3x5 pixel font.
  void text(int y, int x, const std::string& s, Rgb8 c);

  const Raster& raster() const { return r_; }

 private:
  Raster r_;
};

/// Line chart of several series over shared axes.
Raster plot_lines(const std::vector<std::vector<std::pair<double, double>>>& series,
                  const std::vector<Rgb8>& colors, int height = 240, int width = 360);
/// One bar per value, left to right.
Raster plot_bars(const std::vector<double>& values, Rgb8 color, int height = 240, int width = 360);

}  // namespace mixlab
