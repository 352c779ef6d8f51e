// Command-line frontend: run experiments, diagnose a defense, calibrate
// thresholds, measure FPR, and sweep defense configurations.
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "oars/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--jobs", args.jobs, "victim-level parallelism");
  cmd->add_option("--out", args.out, "override the results output path");
  cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

std::filesystem::path resolve_out(const std::string& configured) {
  std::filesystem::path p(configured);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("OARS_BENCH_OUT_DIR")) return std::filesystem::path(root) / p;
  return p;
}

oars::ExperimentConfig load_config(const CommonArgs& args) {
  auto cfg = oars::ExperimentConfig::from_file(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.jobs) cfg.jobs = *args.jobs;
  if (args.out) cfg.out_path = *args.out;
  return cfg;
}

oars::ProgressFn progress_fn(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cout << "  " << line << "\n"; };
}

void print_metrics(const oars::ExperimentResult& result) {
  for (const auto& m : result.per_attack) {
    std::cout << m.attack_label << ": asr=" << m.asr * 100.0 << "%";
    if (m.mean_queries_success) std::cout << " mean_queries=" << *m.mean_queries_success;
    else std::cout << " mean_queries=-";
    if (m.mean_accounts) std::cout << " mean_accounts=" << *m.mean_accounts;
    if (m.mean_sigma_opt) std::cout << " mean_sigma_opt=" << *m.mean_sigma_opt;
    std::cout << "\n";
  }
}

int cmd_run(const CommonArgs& args) {
  auto cfg = load_config(args);
  auto result = oars::run_experiment(cfg, progress_fn(args.quiet));
  const auto out_path = resolve_out(cfg.out_path);
  oars::persist_result(result, out_path);
  print_metrics(result);
  std::cout << "results written to " << out_path.string() << "\n";
  return 0;
}

int cmd_diagnose(const CommonArgs& args, std::uint64_t limit) {
  auto cfg = load_config(args);
  auto task = oars::make_task(cfg.task);
  std::unique_ptr<oars::Defense> defense;
  if (cfg.sdm) defense = oars::make_defense(*cfg.sdm, task->shape().flat());
  oars::RngStream rng{oars::Seed{cfg.seed}};
  auto [x, y] = task->draw(rng);
  (void)y;
  const auto res = oars::diagnose_store(defense.get(), task->model(), x, oars::LabelMode::Hard,
                                        limit, 900001, 900002);
  std::cout << "classification: " << oars::diagnosis_name(res.classification) << "\n"
            << "queries on first account: " << res.queries_on_first_account << "\n"
            << "total queries: " << res.total_queries << " (+1 extra account)\n";
  return 0;
}

int cmd_calibrate(const CommonArgs& args, double target_fpr, int stream_n) {
  auto cfg = load_config(args);
  if (!cfg.sdm) throw std::runtime_error("calibrate needs an sdm in the config");
  auto task = oars::make_task(cfg.task);
  const auto res =
      oars::calibrate_threshold(*cfg.sdm, target_fpr, *task, stream_n, oars::Seed{cfg.seed});
  std::cout << "threshold: " << res.threshold << "\n"
            << "achieved fpr: " << res.achieved_fpr << "\n";
  if (!res.attainable) std::cout << "warning: target FPR not attainable on this stream\n";
  return 0;
}

int cmd_fpr(const CommonArgs& args, int n, bool per_query_accounts) {
  auto cfg = load_config(args);
  if (!cfg.sdm) throw std::runtime_error("fpr needs an sdm in the config");
  auto task = oars::make_task(cfg.task);
  auto defense = oars::make_defense(*cfg.sdm, task->shape().flat());
  const double fpr = oars::measure_fpr(
      *defense, *task, n,
      per_query_accounts ? oars::AccountPolicy::AccountPerQuery
                         : oars::AccountPolicy::SingleAccount,
      oars::Seed{cfg.seed});
  std::cout << "fpr: " << fpr << " over " << n << " benign queries\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  auto cfg = load_config(args);
  if (cfg.sweep.is_null() || !cfg.sweep.contains("cells") || cfg.sweep["cells"].empty())
    throw std::runtime_error("sweep needs a sweep.cells array in the config");
  std::vector<oars::SweepCell> cells;
  for (const auto& jc : cfg.sweep["cells"]) {
    oars::SweepCell cell;
    cell.sdm = oars::SdmConfig::from_json(jc);
    cell.label = jc.value("label", cell.sdm.name + "-" + std::to_string(cells.size()));
    cells.push_back(std::move(cell));
  }
  auto sweep = oars::reconfiguration_sweep(cfg, cells, progress_fn(args.quiet));
  const auto base_out = resolve_out(cfg.out_path);
  for (const auto& [label, result] : sweep.cells) {
    std::cout << "--- " << label << " ---\n";
    print_metrics(result);
    auto cell_path = base_out;
    cell_path.replace_filename(base_out.stem().string() + "-" + label +
                               base_out.extension().string());
    oars::persist_result(result, cell_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stateful-defense attack bench"};
  app.require_subcommand(1);

  CommonArgs run_args, diag_args, cal_args, fpr_args, sweep_args;
  std::uint64_t diag_limit = 200;
  double target_fpr = 0.002;
  int stream_n = 10000;
  int fpr_n = 10000;
  bool fpr_per_query_accounts = false;

  auto* run = app.add_subcommand("run", "run the configured experiment");
  add_common(run, run_args);
  auto* diag = app.add_subcommand("diagnose", "probe the configured defense's store and action");
  add_common(diag, diag_args);
  diag->add_option("--limit", diag_limit, "max probes before giving up");
  auto* cal = app.add_subcommand("calibrate", "derive a threshold for a target FPR");
  add_common(cal, cal_args);
  cal->add_option("--target-fpr", target_fpr, "target false positive rate");
  cal->add_option("--stream", stream_n, "benign stream length");
  auto* fpr = app.add_subcommand("fpr", "measure FPR on a benign stream");
  add_common(fpr, fpr_args);
  fpr->add_option("--n", fpr_n, "benign stream length");
  fpr->add_flag("--account-per-query", fpr_per_query_accounts, "one account per benign query");
  auto* sweep = app.add_subcommand("sweep", "run the experiment over a defense-config grid");
  add_common(sweep, sweep_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (diag->parsed()) return cmd_diagnose(diag_args, diag_limit);
    if (cal->parsed()) return cmd_calibrate(cal_args, target_fpr, stream_n);
    if (fpr->parsed()) return cmd_fpr(fpr_args, fpr_n, fpr_per_query_accounts);
    if (sweep->parsed()) return cmd_sweep(sweep_args);
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    // config problems exit 1, runtime failures exit 2
    const std::string msg = e.what();
    const bool config_issue = msg.find("config") != std::string::npos ||
                              msg.find("malformed") != std::string::npos ||
                              msg.find("cannot open") != std::string::npos;
    return config_issue ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
