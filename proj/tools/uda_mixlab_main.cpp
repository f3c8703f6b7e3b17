#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "mixlab/experiment.hpp"
#include "mixlab/gradcheck.hpp"

using namespace mixlab;

namespace {

struct Common {
  std::string config_path;
  std::vector<uint64_t> seeds;
  std::string seed_list;
  std::string out_dir;
  std::string ablation;
  bool dry_run = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Experiment config (key = value with [sections])");
  app->add_option("--seed", c.seeds, "Training seed; repeat for several")->allow_extra_args(false);
  app->add_option("--seeds", c.seed_list, "Comma-separated training seeds");
  app->add_option("--out", c.out_dir, "Output directory");
  app->add_option("--ablation", c.ablation, "Ablation grid")->check(CLI::IsMember({"table3", "table4", "table5"}));
  app->add_flag("--dry-run", c.dry_run, "Print the resolved configuration and exit");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_path.empty()) {
    try {
      cfg = ExperimentConfig::load(c.config_path);
    } catch (const ConfigError& e) {
      throw ConfigError(c.config_path + ": " + e.what());
    }
  }
  std::vector<uint64_t> seeds = c.seeds;
  if (!c.seed_list.empty()) {
    for (double s : parse_doubles(c.seed_list)) {
      if (s < 0 || s != static_cast<double>(static_cast<uint64_t>(s))) throw ArgumentError("--seeds expects integers");
      seeds.push_back(static_cast<uint64_t>(s));
    }
  }
  if (!seeds.empty()) cfg.seeds = seeds;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  if (!c.ablation.empty()) cfg.ablation = c.ablation;
  cfg.validate();
  return cfg;
}

void print_resolved(const ExperimentConfig& cfg) { std::cout << cfg.to_text(); }

int finish(const RunSummary& s) {
  std::cout << "done: " << s.files.size() << " file(s), warnings=" << s.warnings << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adaptive segmentation mixing lab"};
  app.require_subcommand(1);

  Common run_opts, ablate_opts, eval_opts, gen_opts, dry_opts;
  auto* run = app.add_subcommand("run", "Warm-up, adaptation and evaluation (or an ablation with --ablation)");
  add_common(run, run_opts);

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  add_common(ablate, ablate_opts);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the target evaluation split");
  add_common(eval, eval_opts);
  std::string checkpoint;
  std::string format = "csv";
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "jsonl"}));

  auto* gen = app.add_subcommand("gen-data", "Export benchmark scenes as images");
  add_common(gen, gen_opts);
  int count = 8;
  bool ppm = false;
  gen->add_option("--count", count, "Scenes per split")->check(CLI::PositiveNumber);
  gen->add_flag("--ppm", ppm, "Write PPM instead of PNG for the RGB images");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every loss gradient");
  uint64_t grad_seed = 1;
  int grad_size = 16;
  grad->add_option("--seed", grad_seed, "Micro-instance seed");
  grad->add_option("--size", grad_size, "Image side length")->check(CLI::Range(8, 64));

  auto* dry = app.add_subcommand("dry-run", "Validate a config and print the resolved values");
  add_common(dry, dry_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run || *ablate) {
      Common& c = *run ? run_opts : ablate_opts;
      const ExperimentConfig cfg = resolve(c);
      if (c.dry_run) {
        print_resolved(cfg);
        return 0;
      }
      if (*ablate && cfg.ablation.empty()) {
        std::cerr << "error: ablate needs --ablation or experiment.ablation\n";
        return 2;
      }
      return finish(cfg.ablation.empty() ? run_experiment(cfg, std::cerr) : run_ablation_experiment(cfg, std::cerr));
    }
    if (*dry) {
      print_resolved(resolve(dry_opts));
      return 0;
    }
    if (*eval) {
      const ExperimentConfig cfg = resolve(eval_opts);
      if (eval_opts.dry_run) {
        print_resolved(cfg);
        return 0;
      }
      const EvalReport report = evaluate_checkpoint(cfg, checkpoint);
      if (format == "csv") {
        write_report_csv(std::cout, report);
      } else {
        std::cout << "{\"miou\":" << format_double(report.miou)
                  << ",\"boundary_error_fraction\":" << format_double(report.boundary_error_fraction) << "}\n";
      }
      return 0;
    }
    if (*gen) {
      const ExperimentConfig cfg = resolve(gen_opts);
      if (gen_opts.dry_run) {
        print_resolved(cfg);
        return 0;
      }
      return finish(generate_dataset(cfg, cfg.out_dir, count, ppm));
    }
    if (*grad) {
      const MicroInstance inst = make_micro_instance(grad_seed, grad_size);
      const GradCheckReport report = check_objective_gradients(inst);
      std::printf("%-8s %8s %14s %12s  %s\n", "term", "params", "max_rel_err", "max|grad|", "worst");
      for (const auto& e : report.entries) {
        std::printf("%-8s %8zu %14.3e %12.3e  %s %s\n", e.term.c_str(), e.checked, e.max_rel_error, e.max_abs_grad,
                    e.worst_param.c_str(), e.passed ? "ok" : "FAIL");
      }
      std::printf("kink crossings: %zu\n", report.kink_crossings);
      return report.passed ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
