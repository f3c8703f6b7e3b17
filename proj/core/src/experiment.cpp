#include "mixlab/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "mixlab/image_io.hpp"
#include "mixlab/mix.hpp"
#include "mixlab/plots.hpp"
#include "mixlab/pseudo.hpp"
#include "mixlab/rng.hpp"

namespace fs = std::filesystem;

namespace mixlab {
namespace {

const std::set<std::string> kAblations = {"", "table3", "table4", "table5"};

std::string format_bool(bool b) { return b ? "true" : "false"; }

std::string format_ints(const std::vector<uint64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

/// Typed reads that report the offending line on a range violation.
class Reader {
 public:
  Reader(const KvDocument& doc, std::string section) : doc_(doc), p_(section + ".") {}

  double real(const std::string& key, double fallback, double lo, double hi, bool hi_open = false) const {
    const auto* e = doc_.find(p_ + key);
    if (!e) return fallback;
    const double v = parse_double(e->value, e->line);
    if (!(v >= lo) || !(hi_open ? v < hi : v <= hi)) {
      throw ConfigError(p_ + key + " = " + e->value + " is out of range [" + format_double(lo) + ", " +
                            format_double(hi) + (hi_open ? ")" : "]"),
                        e->line);
    }
    return v;
  }

  long long integer(const std::string& key, long long fallback, long long lo, long long hi) const {
    const auto* e = doc_.find(p_ + key);
    if (!e) return fallback;
    const long long v = parse_int(e->value, e->line);
    if (v < lo || v > hi) {
      throw ConfigError(p_ + key + " = " + e->value + " is out of range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]",
                        e->line);
    }
    return v;
  }

  bool boolean(const std::string& key, bool fallback) const { return doc_.get_bool(p_ + key, fallback); }

  std::string text(const std::string& key, const std::string& fallback) const {
    return doc_.get_string(p_ + key, fallback);
  }

  const KvDocument::Entry* find(const std::string& key) const { return doc_.find(p_ + key); }

 private:
  const KvDocument& doc_;
  std::string p_;
};

constexpr double kHuge = 1e300;
constexpr long long kMaxInt = 1'000'000'000;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_report_jsonl(std::ostream& out, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["miou"] = report.miou;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& iou : report.per_class_iou) {
    per.push_back(iou ? nlohmann::ordered_json(*iou) : nlohmann::ordered_json(nullptr));
  }
  j["per_class_iou"] = per;
  j["boundary_error_fraction"] = report.boundary_error_fraction;
  out << j.dump() << "\n";
}

void write_mix_debug(const ModelParams<float>& teacher, const DatasetPair& data, double tau, uint64_t seed,
                     const fs::path& dir, RunSummary& summary) {
  if (data.source.empty() || data.target.empty()) return;
  const LabeledImage& src = data.source.front();
  LabeledImage tgt{data.target.front().pixels, {}, data.target.front().scene_seed};
  const PseudoLabel pl = pseudo_label(forward(teacher, tgt.pixels).pred);
  tgt.labels = pl.labels;
  Rng rng = Rng::keyed(seed, 0xdeb, 0);
  const MixedSample x_st = compose_mixed_sample(tgt, src, sample_classmix_mask(src.labels, data.class_count, rng));
  dump_mix_triptych((dir / "mix_debug_cmix.png").string(), tgt.pixels, src.pixels, x_st);
  summary.files.push_back((dir / "mix_debug_cmix.png").string());
  const MixedSample x_hts = compose_mixed_sample(src, tgt, confidence_mask(pl, tau));
  dump_mix_triptych((dir / "mix_debug_htcm.png").string(), src.pixels, tgt.pixels, x_hts);
  summary.files.push_back((dir / "mix_debug_htcm.png").string());
}

void absorb(RunSummary& summary, const PlotResult& plots, std::ostream& log) {
  summary.files.insert(summary.files.end(), plots.files.begin(), plots.files.end());
  summary.warnings += plots.warnings;
  for (const auto& m : plots.messages) log << "warning: " << m << "\n";
}

}  // namespace

void write_train_config(KvDocument& doc, const std::string& section, const TrainConfig& cfg) {
  const std::string p = section + ".";
  doc.set(p + "tau", format_double(cfg.tau));
  doc.set(p + "lambda1", format_double(cfg.lambda1));
  doc.set(p + "lambda2", format_double(cfg.lambda2));
  doc.set(p + "s1", format_double(cfg.s1));
  doc.set(p + "s2", format_double(cfg.s2));
  doc.set(p + "lr_encoder", format_double(cfg.base_lr_encoder));
  doc.set(p + "lr_head", format_double(cfg.base_lr_head));
  doc.set(p + "momentum", format_double(cfg.momentum));
  doc.set(p + "weight_decay", format_double(cfg.weight_decay));
  doc.set(p + "poly_power", format_double(cfg.poly_power));
  doc.set(p + "max_iters", std::to_string(cfg.max_iters));
  doc.set(p + "warmup_iters", std::to_string(cfg.warmup_iters));
  doc.set(p + "ema_momentum", format_double(cfg.ema_momentum));
  doc.set(p + "pixel_sample_n", std::to_string(cfg.pixel_sample_n));
  doc.set(p + "use_htcm", format_bool(cfg.use_htcm));
  doc.set(p + "use_procl", format_bool(cfg.use_procl));
  doc.set(p + "use_picl", format_bool(cfg.use_picl));
  doc.set(p + "contrast_on", to_string(cfg.contrast_on));
  doc.set(p + "filter_cmix_pseudo", format_bool(cfg.filter_cmix_pseudo));
  doc.set(p + "freeze_classifier_in_contrast", format_bool(cfg.freeze_classifier_in_contrast));
  doc.set(p + "grad_accum", std::to_string(cfg.grad_accum));
  doc.set(p + "eval_interval", std::to_string(cfg.eval_interval));
  doc.set(p + "early_stop_patience", std::to_string(cfg.early_stop_patience));
  doc.set(p + "eval_teacher", format_bool(cfg.eval_teacher));
  doc.set(p + "widths", std::to_string(cfg.arch.widths[0]) + "," + std::to_string(cfg.arch.widths[1]) + "," +
                            std::to_string(cfg.arch.widths[2]));
  doc.set(p + "residual_blocks", std::to_string(cfg.arch.residual_blocks));
}

TrainConfig read_train_config(const KvDocument& doc, const std::string& section, const TrainConfig& fallback) {
  const Reader r(doc, section);
  TrainConfig c = fallback;
  c.tau = r.real("tau", c.tau, 0.0, 1.0, true);
  c.lambda1 = r.real("lambda1", c.lambda1, 0.0, kHuge);
  c.lambda2 = r.real("lambda2", c.lambda2, 0.0, kHuge);
  c.s1 = r.real("s1", c.s1, 1e-12, kHuge);
  c.s2 = r.real("s2", c.s2, 1e-12, kHuge);
  c.base_lr_encoder = r.real("lr_encoder", c.base_lr_encoder, 0.0, kHuge);
  c.base_lr_head = r.real("lr_head", c.base_lr_head, 0.0, kHuge);
  c.momentum = r.real("momentum", c.momentum, 0.0, 1.0, true);
  c.weight_decay = r.real("weight_decay", c.weight_decay, 0.0, kHuge);
  c.poly_power = r.real("poly_power", c.poly_power, 1e-12, kHuge);
  c.max_iters = static_cast<int>(r.integer("max_iters", c.max_iters, 1, kMaxInt));
  c.warmup_iters = static_cast<int>(r.integer("warmup_iters", c.warmup_iters, 0, kMaxInt));
  c.ema_momentum = r.real("ema_momentum", c.ema_momentum, 0.0, 1.0, true);
  c.pixel_sample_n = static_cast<int>(r.integer("pixel_sample_n", c.pixel_sample_n, 0, kMaxInt));
  c.use_htcm = r.boolean("use_htcm", c.use_htcm);
  c.use_procl = r.boolean("use_procl", c.use_procl);
  c.use_picl = r.boolean("use_picl", c.use_picl);
  if (const auto* e = r.find("contrast_on")) {
    try {
      c.contrast_on = contrast_target_from_string(e->value);
    } catch (const std::exception& ex) {
      throw ConfigError(ex.what(), e->line);
    }
  }
  c.filter_cmix_pseudo = r.boolean("filter_cmix_pseudo", c.filter_cmix_pseudo);
  c.freeze_classifier_in_contrast = r.boolean("freeze_classifier_in_contrast", c.freeze_classifier_in_contrast);
  c.grad_accum = static_cast<int>(r.integer("grad_accum", c.grad_accum, 1, kMaxInt));
  c.eval_interval = static_cast<int>(r.integer("eval_interval", c.eval_interval, 1, kMaxInt));
  c.early_stop_patience = static_cast<int>(r.integer("early_stop_patience", c.early_stop_patience, 0, kMaxInt));
  c.eval_teacher = r.boolean("eval_teacher", c.eval_teacher);
  if (const auto* e = r.find("widths")) {
    const auto w = parse_doubles(e->value, e->line);
    if (w.size() != 3) throw ConfigError("widths needs 3 entries", e->line);
    for (size_t i = 0; i < 3; ++i) {
      if (w[i] < 1 || w[i] != static_cast<int>(w[i])) throw ConfigError("widths must be positive integers", e->line);
      c.arch.widths[i] = static_cast<int>(w[i]);
    }
  }
  c.arch.residual_blocks = static_cast<int>(r.integer("residual_blocks", c.arch.residual_blocks, 0, 64));
  return c;
}

void ExperimentConfig::validate() const {
  if (shape.height < 8 || shape.width < 8) throw ArgumentError("image size must be at least 8x8");
  if (shape.n_source < 1 || shape.n_target < 1 || shape.n_target_eval < 1) {
    throw ArgumentError("every split needs at least one scene");
  }
  if (train.arch.class_count != shape.class_count) throw ArgumentError("model and benchmark class counts differ");
  source.validate(shape.class_count);
  target.validate(shape.class_count);
  train.validate();
  if (!kAblations.count(ablation)) throw ArgumentError("unknown ablation '" + ablation + "'");
  if (seeds.empty()) throw ArgumentError("at least one seed is required");
  if (ablation == "table4" && tau_grid.empty()) throw ArgumentError("table4 needs a non-empty tau grid");
  if (out_dir.empty()) throw ArgumentError("out_dir must not be empty");
}

KvDocument ExperimentConfig::to_document() const {
  KvDocument doc;
  doc.set("benchmark.seed", std::to_string(benchmark_seed));
  doc.set("benchmark.height", std::to_string(shape.height));
  doc.set("benchmark.width", std::to_string(shape.width));
  doc.set("benchmark.classes", std::to_string(shape.class_count));
  doc.set("benchmark.source_scenes", std::to_string(shape.n_source));
  doc.set("benchmark.target_scenes", std::to_string(shape.n_target));
  doc.set("benchmark.target_eval_scenes", std::to_string(shape.n_target_eval));
  doc.set("benchmark.source_eval_scenes", std::to_string(shape.n_source_eval));
  write_domain_spec(doc, "source", source);
  write_domain_spec(doc, "target", target);
  write_train_config(doc, "train", train);
  doc.set("experiment.ablation", ablation);
  doc.set("experiment.tau_grid", format_doubles(tau_grid));
  doc.set("experiment.seeds", format_ints(seeds));
  doc.set("experiment.out_dir", out_dir);
  doc.set("experiment.checkpoint_every", std::to_string(checkpoint_every));
  doc.set("experiment.boundary_radius", std::to_string(boundary_radius));
  return doc;
}

std::string ExperimentConfig::to_text() const { return to_document().to_text(); }

ExperimentConfig ExperimentConfig::from_document(const KvDocument& doc) {
  // Every accepted key appears in the serialized defaults.
  const KvDocument known = ExperimentConfig{}.to_document();
  for (const auto& e : doc.entries()) {
    if (!known.contains(e.key)) throw ConfigError("unknown key '" + e.key + "'", e.line);
  }
  ExperimentConfig c;
  const Reader b(doc, "benchmark");
  c.benchmark_seed = static_cast<uint64_t>(b.integer("seed", static_cast<long long>(c.benchmark_seed), 0, kMaxInt));
  c.shape.height = static_cast<int>(b.integer("height", c.shape.height, 8, 4096));
  c.shape.width = static_cast<int>(b.integer("width", c.shape.width, 8, 4096));
  for (const char* key : {"height", "width"}) {
    const auto* e = b.find(key);
    if (e && parse_int(e->value, e->line) % 8 != 0) {
      throw ConfigError(std::string("benchmark.") + key + " must be a multiple of 8", e->line);
    }
  }
  c.shape.class_count = static_cast<int>(b.integer("classes", c.shape.class_count, 2, 255));
  c.shape.n_source = static_cast<int>(b.integer("source_scenes", c.shape.n_source, 1, kMaxInt));
  c.shape.n_target = static_cast<int>(b.integer("target_scenes", c.shape.n_target, 1, kMaxInt));
  c.shape.n_target_eval = static_cast<int>(b.integer("target_eval_scenes", c.shape.n_target_eval, 1, kMaxInt));
  c.shape.n_source_eval = static_cast<int>(b.integer("source_eval_scenes", c.shape.n_source_eval, 0, kMaxInt));
  c.source = read_domain_spec(doc, "source", default_source_spec(c.shape.class_count));
  c.target = read_domain_spec(doc, "target", default_target_spec(c.shape.class_count));
  for (const auto* spec : {&c.source, &c.target}) {
    if (static_cast<int>(spec->palette.size()) < c.shape.class_count) {
      const char* section = spec == &c.source ? "source.palette" : "target.palette";
      const auto* e = doc.find(section);
      throw ConfigError(std::string(section) + " has fewer colors than benchmark.classes", e ? e->line : 0);
    }
  }
  c.train = read_train_config(doc, "train", c.train);
  c.train.arch.class_count = c.shape.class_count;

  const Reader x(doc, "experiment");
  if (const auto* e = x.find("ablation")) {
    if (!kAblations.count(e->value)) {
      throw ConfigError("experiment.ablation must be empty, table3, table4 or table5", e->line);
    }
    c.ablation = e->value;
  }
  if (const auto* e = x.find("tau_grid")) {
    c.tau_grid = parse_doubles(e->value, e->line);
    for (double t : c.tau_grid) {
      if (!(t >= 0.0 && t < 1.0)) throw ConfigError("tau_grid entries must lie in [0, 1)", e->line);
    }
  }
  if (const auto* e = x.find("seeds")) {
    c.seeds.clear();
    for (double s : parse_doubles(e->value, e->line)) {
      if (s < 0 || s != static_cast<double>(static_cast<uint64_t>(s))) {
        throw ConfigError("seeds must be non-negative integers", e->line);
      }
      c.seeds.push_back(static_cast<uint64_t>(s));
    }
    if (c.seeds.empty()) throw ConfigError("seeds must not be empty", e->line);
  }
  c.out_dir = x.text("out_dir", c.out_dir);
  c.checkpoint_every = static_cast<int>(x.integer("checkpoint_every", c.checkpoint_every, 0, kMaxInt));
  c.boundary_radius = static_cast<int>(x.integer("boundary_radius", c.boundary_radius, 1, 1024));
  try {
    c.validate();
  } catch (const ArgumentError& ex) {
    throw ConfigError(std::string("invalid configuration: ") + ex.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  return from_document(KvDocument::parse(text));
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return from_document(KvDocument::load(path)); }

std::vector<Variant> ablation_variants(const ExperimentConfig& cfg) {
  if (cfg.ablation == "table3") return table3_variants();
  if (cfg.ablation == "table4") return table4_variants(cfg.tau_grid);
  if (cfg.ablation == "table5") return table5_variants();
  throw ArgumentError("no ablation selected");
}

DatasetPair make_experiment_benchmark(const ExperimentConfig& cfg) {
  return make_benchmark(cfg.benchmark_seed, cfg.source, cfg.target, cfg.shape);
}

RunSummary run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  RunSummary summary;
  const DatasetPair data = make_experiment_benchmark(cfg);
  double miou_sum = 0.0;
  for (uint64_t seed : cfg.seeds) {
    const fs::path dir = cfg.seeds.size() == 1 ? fs::path(cfg.out_dir) : fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "plots");
    TrainConfig tc = cfg.train;
    tc.seed = seed;

    TrainResult result;
    {
      std::ofstream metrics = open_out(dir / "metrics.jsonl");
      std::ofstream evals = open_out(dir / "evals.jsonl");
      TrainHooks hooks;
      hooks.on_step = [&](const MetricsRecord& r) { write_metrics_jsonl(metrics, r); };
      hooks.on_eval = [&](const EvalPoint& p) {
        nlohmann::ordered_json j;
        j["iter"] = p.iter;
        j["eval_miou"] = p.miou;
        evals << j.dump() << "\n";
        log << "seed " << seed << " iter " << p.iter << " target mIoU " << format_double(p.miou) << "\n";
      };
      hooks.checkpoint_every = cfg.checkpoint_every;
      hooks.on_checkpoint = [&](int iter, const ModelParams<float>& params) {
        char name[32];
        std::snprintf(name, sizeof name, "iter_%06d.ckpt", iter);
        save_checkpoint((dir / "checkpoints" / name).string(), params);
      };
      result = train_model(data, tc, hooks);
      summary.files.push_back((dir / "metrics.jsonl").string());

      const auto stats = confidence_error_stats(result.best_model, data.target_eval, tc.tau, cfg.boundary_radius);
      nlohmann::ordered_json j;
      j["boundary_hist"] = stats.distance_histogram;
      j["overall_error_rate"] = stats.overall_error_rate;
      j["confident_error_rate"] = stats.confident_error_rate;
      j["confident_fraction"] = stats.confident_fraction;
      j["boundary_error_fraction"] = stats.boundary_error_fraction;
      evals << j.dump() << "\n";
    }
    save_checkpoint((dir / "checkpoints" / "best.ckpt").string(), result.best_model);
    save_checkpoint((dir / "checkpoints" / "final.ckpt").string(), result.final_student);

    const EvalReport report = evaluate_model(result.best_model, data.target_eval, cfg.boundary_radius);
    {
      std::ofstream csv = open_out(dir / "report.csv");
      write_report_csv(csv, report);
      std::ofstream jl = open_out(dir / "report.jsonl");
      write_report_jsonl(jl, report);
    }
    summary.files.push_back((dir / "report.csv").string());
    log << "seed " << seed << " best iter " << result.best_iter << " target mIoU " << format_double(report.miou)
        << "\n";
    miou_sum += report.miou;

    write_mix_debug(result.best_model, data, tc.tau, seed, dir / "plots", summary);
    absorb(summary, emit_plots({(dir / "metrics.jsonl").string(), (dir / "evals.jsonl").string()}, (dir / "plots").string()),
           log);
  }
  summary.miou = miou_sum / static_cast<double>(cfg.seeds.size());
  return summary;
}

RunSummary run_ablation_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  RunSummary summary;
  const DatasetPair data = make_experiment_benchmark(cfg);
  const auto variants = ablation_variants(cfg);
  const int threads = worker_threads_from_env();
  log << "ablation " << cfg.ablation << ": " << variants.size() << " variants x " << cfg.seeds.size()
      << " seeds on " << threads << " thread(s)\n";
  const AblationTable table = run_ablation(data, cfg.train, variants, cfg.seeds, threads);

  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir / "plots");
  {
    std::ofstream csv = open_out(dir / "report.csv");
    write_ablation_csv(csv, table);
    std::ofstream jl = open_out(dir / "report.jsonl");
    write_ablation_jsonl(jl, table);
  }
  summary.files.push_back((dir / "report.csv").string());
  for (const auto& row : table.rows) {
    log << row.variant << " mIoU " << format_double(row.mean_miou) << " +- " << format_double(row.std_miou) << "\n";
  }

  if (cfg.ablation == "table4") {
    std::ofstream evals = open_out(dir / "evals.jsonl");
    for (size_t i = 0; i < variants.size(); ++i) {
      nlohmann::ordered_json j;
      j["tau"] = variants[i].tau;
      j["miou"] = table.row(variants[i].name)->mean_miou;
      evals << j.dump() << "\n";
    }
    evals.close();
    absorb(summary, emit_plots({(dir / "evals.jsonl").string()}, (dir / "plots").string()), log);
  }
  double sum = 0.0;
  for (const auto& row : table.rows) sum += row.mean_miou;
  summary.miou = table.rows.empty() ? 0.0 : sum / static_cast<double>(table.rows.size());
  return summary;
}

EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  const auto params = load_checkpoint<float>(checkpoint_path);
  if (params.arch.class_count != cfg.shape.class_count) {
    throw ArgumentError("checkpoint class count does not match the benchmark");
  }
  const DatasetPair data = make_experiment_benchmark(cfg);
  return evaluate_model(params, data.target_eval, cfg.boundary_radius);
}

RunSummary generate_dataset(const ExperimentConfig& cfg, const std::string& out_dir, int count, bool ppm) {
  if (count < 1) throw ArgumentError("count must be >= 1");
  BenchmarkShape shape = cfg.shape;
  shape.n_source = std::min(count, shape.n_source);
  shape.n_target = std::min(count, shape.n_target);
  shape.n_target_eval = std::min(count, shape.n_target_eval);
  shape.n_source_eval = std::min(count, shape.n_source_eval);
  const DatasetPair data = make_benchmark(cfg.benchmark_seed, cfg.source, cfg.target, shape);
  RunSummary summary;
  const auto dump = [&](const std::vector<LabeledImage>& scenes, const std::string& split) {
    fs::create_directories(fs::path(out_dir) / split);
    for (size_t i = 0; i < scenes.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%04zu", i);
      const std::string stem = (fs::path(out_dir) / split / name).string();
      export_scene(scenes[i], stem, ppm);
      summary.files.push_back(stem + (ppm ? ".ppm" : ".png"));
    }
  };
  dump(data.source, "source");
  dump(data.target, "target");
  dump(data.target_eval, "target_eval");
  return summary;
}

}  // namespace mixlab
