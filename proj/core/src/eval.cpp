#include "mixlab/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <limits>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "mixlab/kvconfig.hpp"
#include "mixlab/pseudo.hpp"

namespace mixlab {

ConfusionMatrix::ConfusionMatrix(int class_count)
    : classes_(class_count), counts_(static_cast<size_t>(class_count) * class_count, 0) {
  if (class_count < 1) throw ArgumentError("ConfusionMatrix: class_count must be >= 1");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("confusion: shape mismatch");
  for (size_t i = 0; i < gt.ids.size(); ++i) {
    const int g = gt.ids[i];
    if (g < 0 || g >= classes_) continue;
    const int p = pred.ids[i];
    if (p < 0 || p >= classes_) throw ArgumentError("confusion: predicted id out of range");
    ++counts_[static_cast<size_t>(g) * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

EvalReport report_from_confusion(const ConfusionMatrix& cm) {
  EvalReport r;
  r.confusion = cm;
  const int c_count = cm.class_count();
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < c_count; ++c) {
    uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int k = 0; k < c_count; ++k) {
      if (k == c) continue;
      fp += cm.at(k, c);
      fn += cm.at(c, k);
    }
    const uint64_t denom = tp + fp + fn;
    if (denom == 0) {
      r.per_class_iou.emplace_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class_iou.emplace_back(iou);
    sum += iou;
    ++defined;
  }
  r.miou = defined ? sum / defined : 0.0;
  return r;
}

EvalReport compute_miou(const std::vector<LabelMap>& predictions,
                        const std::vector<LabelMap>& ground_truths, int class_count) {
  if (predictions.empty()) throw ArgumentError("compute_miou: empty prediction list");
  if (predictions.size() != ground_truths.size()) throw ShapeError("compute_miou: list sizes differ");
  ConfusionMatrix cm(class_count);
  for (size_t i = 0; i < predictions.size(); ++i) cm.add(predictions[i], ground_truths[i]);
  EvalReport r = report_from_confusion(cm);
  r.boundary_error_fraction = boundary_error_stats(predictions, ground_truths, 2, class_count).value;
  return r;
}

std::vector<int> boundary_distance(const LabelMap& gt) {
  const int h = gt.height, w = gt.width;
  const int inf = std::numeric_limits<int>::max();
  std::vector<int> dist(gt.size(), inf);
  std::deque<int> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = gt.at(y, x);
      const bool edge = (x > 0 && gt.at(y, x - 1) != id) || (x + 1 < w && gt.at(y, x + 1) != id) ||
                        (y > 0 && gt.at(y - 1, x) != id) || (y + 1 < h && gt.at(y + 1, x) != id);
      if (edge) {
        dist[static_cast<size_t>(y) * w + x] = 0;
        queue.push_back(y * w + x);
      }
    }
  }
  // 8-connected BFS yields Chebyshev distance.
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    const int cy = cur / w, cx = cur % w;
    const int d = dist[static_cast<size_t>(cur)];
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = cy + dy, nx = cx + dx;
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        auto& nd = dist[static_cast<size_t>(ny) * w + nx];
        if (nd > d + 1) {
          nd = d + 1;
          queue.push_back(ny * w + nx);
        }
      }
    }
  }
  return dist;
}

MixMask boundary_band(const LabelMap& gt, int radius) {
  const auto dist = boundary_distance(gt);
  MixMask m(gt.height, gt.width);
  for (size_t i = 0; i < dist.size(); ++i) m.bits[i] = dist[i] <= radius ? 1 : 0;
  return m;
}

ScalarResult boundary_error_stats(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                                  int radius, int class_count) {
  if (radius < 1) throw ArgumentError("boundary_error_stats: radius must be >= 1");
  if (preds.size() != gts.size()) throw ShapeError("boundary_error_stats: list sizes differ");
  uint64_t errors = 0, near = 0;
  for (size_t k = 0; k < preds.size(); ++k) {
    const auto& pred = preds[k];
    const auto& gt = gts[k];
    if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("boundary_error_stats: shape mismatch");
    const auto dist = boundary_distance(gt);
    for (size_t i = 0; i < gt.size(); ++i) {
      const int g = gt.ids[i];
      if (g < 0 || g >= class_count || pred.ids[i] == g) continue;
      ++errors;
      if (dist[i] <= radius) ++near;
    }
  }
  if (errors == 0) return {0.0, true};
  return {static_cast<double>(near) / static_cast<double>(errors), false};
}

ScalarResult boundary_error_stats(const LabelMap& pred, const LabelMap& gt, int radius, int class_count) {
  return boundary_error_stats(std::vector<LabelMap>{pred}, std::vector<LabelMap>{gt}, radius, class_count);
}

LabelMap predict_labels(const ModelParams<float>& params, const Image& image) {
  return pseudo_label(forward(params, image).pred).labels;
}

EvalReport evaluate_model(const ModelParams<float>& params, const std::vector<LabeledImage>& scenes,
                          int boundary_radius) {
  std::vector<LabelMap> preds, gts;
  for (const auto& s : scenes) {
    preds.push_back(predict_labels(params, s.pixels));
    gts.push_back(s.labels);
  }
  EvalReport r = compute_miou(preds, gts, params.arch.class_count);
  r.boundary_error_fraction = boundary_error_stats(preds, gts, boundary_radius, params.arch.class_count).value;
  return r;
}

ConfidenceErrorStats confidence_error_stats(const ModelParams<float>& params,
                                            const std::vector<LabeledImage>& scenes, double tau,
                                            int radius, int max_distance) {
  ConfidenceErrorStats st;
  st.distance_histogram.assign(static_cast<size_t>(max_distance) + 2, 0);
  uint64_t total = 0, wrong = 0, confident = 0, confident_wrong = 0, near = 0;
  const int c_count = params.arch.class_count;
  for (const auto& s : scenes) {
    const auto pl = pseudo_label(forward(params, s.pixels).pred);
    const auto dist = boundary_distance(s.labels);
    for (size_t i = 0; i < s.labels.size(); ++i) {
      const int g = s.labels.ids[i];
      if (g < 0 || g >= c_count) continue;
      ++total;
      const bool err = pl.labels.ids[i] != g;
      const bool conf = pl.confidence[i] > tau;
      confident += conf ? 1 : 0;
      if (!err) continue;
      ++wrong;
      confident_wrong += conf ? 1 : 0;
      if (dist[i] <= radius) ++near;
      const size_t bin = std::min(static_cast<size_t>(std::max(dist[i], 0)), static_cast<size_t>(max_distance) + 1);
      ++st.distance_histogram[bin];
    }
  }
  if (total) {
    st.overall_error_rate = static_cast<double>(wrong) / static_cast<double>(total);
    st.confident_fraction = static_cast<double>(confident) / static_cast<double>(total);
  }
  if (confident) st.confident_error_rate = static_cast<double>(confident_wrong) / static_cast<double>(confident);
  if (wrong) st.boundary_error_fraction = static_cast<double>(near) / static_cast<double>(wrong);
  return st;
}

TrainConfig Variant::apply(TrainConfig cfg) const {
  cfg.use_htcm = htcm;
  cfg.use_picl = picl;
  cfg.use_procl = procl;
  cfg.tau = tau;
  cfg.contrast_on = contrast_on;
  return cfg;
}

std::vector<Variant> table3_variants() {
  // Row order follows the component ablation: CMix, +PiCL, +ProCL, +HTCM,
  // +PiCL+ProCL, +PiCL+HTCM, +ProCL+HTCM, full.
  return {
      {"CMix only", false, false, false},
      {"CMix+PiCL", false, true, false},
      {"CMix+ProCL", false, false, true},
      {"CMix+HTCM", true, false, false},
      {"CMix+PiCL+ProCL", false, true, true},
      {"CMix+PiCL+HTCM", true, true, false},
      {"CMix+ProCL+HTCM", true, false, true},
      {"CMix+PiCL+ProCL+HTCM", true, true, true},
  };
}

std::vector<Variant> table4_variants(const std::vector<double>& taus) {
  std::vector<Variant> out;
  for (double t : taus) out.push_back({"tau=" + format_double(t), true, false, false, t});
  return out;
}

std::vector<Variant> table5_variants() {
  return {
      {"x_hts", true, true, true, 0.95, ContrastTarget::kHighConfidenceMix},
      {"x_st", true, true, true, 0.95, ContrastTarget::kClassMix},
  };
}

const AblationRow* AblationTable::row(const std::string& variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant) return &r;
  }
  return nullptr;
}

std::vector<AblationRow> aggregate_runs(const std::vector<AblationRun>& runs,
                                        const std::vector<std::string>& order, int class_count) {
  std::vector<AblationRow> rows;
  for (const auto& name : order) {
    AblationRow row;
    row.variant = name;
    std::vector<double> mious;
    std::vector<double> class_sum(static_cast<size_t>(class_count), 0.0);
    std::vector<int> class_n(static_cast<size_t>(class_count), 0);
    for (const auto& r : runs) {
      if (r.variant != name) continue;
      mious.push_back(r.report.miou);
      for (size_t c = 0; c < r.report.per_class_iou.size() && c < class_sum.size(); ++c) {
        if (r.report.per_class_iou[c]) {
          class_sum[c] += *r.report.per_class_iou[c];
          ++class_n[c];
        }
      }
    }
    row.runs = static_cast<int>(mious.size());
    if (!mious.empty()) {
      for (double m : mious) row.mean_miou += m;
      row.mean_miou /= static_cast<double>(mious.size());
      // Sample standard deviation; zero for a single run.
      if (mious.size() > 1) {
        double ss = 0;
        for (double m : mious) ss += (m - row.mean_miou) * (m - row.mean_miou);
        row.std_miou = std::sqrt(ss / static_cast<double>(mious.size() - 1));
      }
    }
    for (size_t c = 0; c < class_sum.size(); ++c) {
      row.mean_class_iou.push_back(class_n[c] ? class_sum[c] / class_n[c] : std::nan(""));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

AblationTable run_ablation(const DatasetPair& benchmark, const TrainConfig& base,
                           const std::vector<Variant>& variants, const std::vector<uint64_t>& seeds,
                           int threads) {
  struct Cell {
    const Variant* variant;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& v : variants) {
    for (uint64_t s : seeds) cells.push_back({&v, s});
  }
  AblationTable table;
  table.class_count = benchmark.class_count;
  table.runs.resize(cells.size());

  std::atomic<size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (size_t i = next++; i < cells.size(); i = next++) {
      try {
        TrainConfig cfg = cells[i].variant->apply(base);
        cfg.seed = cells[i].seed;
        const auto res = train_model(benchmark, cfg);
        AblationRun run;
        run.variant = cells[i].variant->name;
        run.seed = cells[i].seed;
        run.report = evaluate_model(res.best_model, benchmark.target_eval);
        run.best_iter = res.best_iter;
        run.iterations_run = res.iterations_run;
        table.runs[i] = std::move(run);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::string> order;
  for (const auto& v : variants) order.push_back(v.name);
  table.rows = aggregate_runs(table.runs, order, table.class_count);
  return table;
}

namespace {

std::string csv_number(double v) { return std::isnan(v) ? "-" : format_double(v); }

}  // namespace

void write_ablation_csv(std::ostream& out, const AblationTable& table) {
  out << "variant,seed";
  for (int c = 0; c < table.class_count; ++c) out << ",class_" << c;
  out << ",miou\n";
  for (const auto& r : table.runs) {
    out << r.variant << "," << r.seed;
    for (const auto& iou : r.report.per_class_iou) out << "," << (iou ? format_double(*iou) : "-");
    out << "," << format_double(r.report.miou) << "\n";
  }
  for (const auto& row : table.rows) {
    out << row.variant << ",mean";
    for (double v : row.mean_class_iou) out << "," << csv_number(v);
    out << "," << format_double(row.mean_miou) << "\n";
    out << row.variant << ",std";
    for (int c = 0; c < table.class_count; ++c) out << ",";
    out << "," << format_double(row.std_miou) << "\n";
  }
}

void write_ablation_jsonl(std::ostream& out, const AblationTable& table) {
  for (const auto& r : table.runs) {
    nlohmann::ordered_json j;
    j["variant"] = r.variant;
    j["seed"] = r.seed;
    j["miou"] = r.report.miou;
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const auto& iou : r.report.per_class_iou) per.push_back(iou ? nlohmann::ordered_json(*iou) : nlohmann::ordered_json(nullptr));
    j["per_class_iou"] = per;
    j["boundary_error_fraction"] = r.report.boundary_error_fraction;
    j["best_iter"] = r.best_iter;
    out << j.dump() << "\n";
  }
  for (const auto& row : table.rows) {
    nlohmann::ordered_json j;
    j["variant"] = row.variant;
    j["runs"] = row.runs;
    j["mean_miou"] = row.mean_miou;
    j["std_miou"] = row.std_miou;
    out << j.dump() << "\n";
  }
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  for (size_t c = 0; c < report.per_class_iou.size(); ++c) out << "class_" << c << ",";
  out << "miou,boundary_error_fraction\n";
  for (const auto& iou : report.per_class_iou) out << (iou ? format_double(*iou) : "-") << ",";
  out << format_double(report.miou) << "," << format_double(report.boundary_error_fraction) << "\n";
}

int worker_threads_from_env() {
  const char* v = std::getenv("UDA_MIXLAB_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n >= 1 ? n : 1;
}

}  // namespace mixlab
