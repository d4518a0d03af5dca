#include "crossgaze/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "crossgaze/cli/gradient_audit.hpp"
#include "crossgaze/data/synthetic.hpp"
#include "crossgaze/tensor/errors.hpp"
#include "crossgaze/tensor/ops.hpp"
#include "crossgaze/train/checkpoint.hpp"

namespace crossgaze::cli {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

data::InMemoryDataset load_dataset(const fs::path& dir) {
  return data::InMemoryDataset::load(data::load_manifest(dir));
}

std::vector<geometry::Subset> parse_subsets(const std::string& list) {
  std::vector<geometry::Subset> out;
  std::stringstream in(list);
  for (std::string name; std::getline(in, name, ',');) {
    try {
      out.push_back(geometry::parse_subset(name));
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--subset: ") + e.what());
    }
  }
  if (out.empty()) throw UsageError("--subset: no subsets given");
  return out;
}

struct RunResult {
  std::optional<double> front180;
  std::optional<double> front_facing;
  std::string failure;
};

RunResult ablation_run(model::Fusion fusion, std::uint64_t seed, std::size_t epochs,
                       const data::InMemoryDataset& train_data, const data::InMemoryDataset& test_data) {
  RunResult result;
  try {
    model::CrossGazeConfig config;
    config.fusion = fusion;
    config.seed = seed;
    train::Model m = train::Model::create(config);
    auto adam = train::AdamState<float>::zeros_like(m.params);
    train::TrainConfig tc;
    tc.seed = seed;
    tc.epochs = epochs;
    for (std::size_t e = 0; e < epochs; ++e) train::train_epoch(m, adam, train_data, tc, e);
    const auto metrics =
        train::evaluate(m, test_data, {geometry::Subset::front180, geometry::Subset::front_facing});
    result.front180 = metrics[0].mean_degrees;
    result.front_facing = metrics[1].mean_degrees;
  } catch (const std::exception& e) {
    result.failure = "seed " + std::to_string(seed) + ": " + e.what();
  }
  return result;
}

}  // namespace

data::DatasetManifest cmd_gendata(const GendataOptions& options, std::ostream& out) {
  if (options.count == 0) throw UsageError("--count must be positive");
  if (options.out.empty()) throw UsageError("--out is required");
  auto manifest = data::generate_synthetic_dataset(options.out, options.count, options.seed, options.split);
  out << "manifest\t" << (options.out / data::kManifestName).string() << "\n";
  out << "records\t" << manifest.records.size() << "\n";
  return manifest;
}

std::vector<double> cmd_train(const TrainOptions& options, std::ostream& out) {
  if (options.epochs == 0) throw UsageError("--epochs must be positive");
  const auto dataset = load_dataset(options.data);

  model::CrossGazeConfig config;
  config.fusion = options.fusion;
  config.seed = options.seed;
  train::Model m = train::Model::create(config);
  auto adam = train::AdamState<float>::zeros_like(m.params);
  train::TrainConfig tc;
  tc.seed = options.seed;
  tc.epochs = options.epochs;

  std::vector<double> losses;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    losses.push_back(train::train_epoch(m, adam, dataset, tc, e).mean_loss);
    out << (e + 1) << "\t" << format_number(losses.back()) << "\n";
  }

  fs::create_directories(options.out);
  train::Checkpoint c{m.config, options.epochs, options.seed, std::move(m.params), std::move(adam)};
  const fs::path ckpt = options.out / kCheckpointFile;
  train::save_checkpoint(ckpt, c);
  write_text(options.out / kLossLogFile, format_loss_log(losses));
  out << "checkpoint\t" << ckpt.string() << "\n";
  return losses;
}

std::vector<train::SubsetMetric> cmd_eval(const EvalOptions& options, std::ostream& out) {
  if (options.subsets.empty()) throw UsageError("--subset: no subsets given");
  train::Checkpoint c = train::load_checkpoint(options.ckpt);
  const auto dataset = load_dataset(options.data);
  train::Model m{c.config, std::move(c.params)};
  const auto metrics = train::evaluate(m, dataset, options.subsets);
  const std::string report = format_eval_report(metrics);
  write_text(options.ckpt.parent_path() / kEvalReportFile, report);
  out << report;
  return metrics;
}

AblationReport run_ablation(const AblateOptions& options, std::ostream& log) {
  if (options.seeds == 0) throw UsageError("--seeds must be positive");
  if (options.epochs == 0) throw UsageError("--epochs must be positive");
  const auto train_data = load_dataset(options.data / "train");
  const auto test_data = load_dataset(options.data / "test");

  const model::Fusion arms[] = {model::Fusion::none, model::Fusion::fcn, model::Fusion::xattn};
  struct Job {
    model::Fusion fusion;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto f : arms) {
    for (std::uint64_t s = 1; s <= options.seeds; ++s) jobs.push_back({f, s});
  }
  std::vector<RunResult> results(jobs.size());

  std::size_t workers = options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      results[i] = ablation_run(jobs[i].fusion, jobs[i].seed, options.epochs, train_data, test_data);
      std::lock_guard lock(log_mutex);
      log << "ablate\t" << model::fusion_name(jobs[i].fusion) << "\tseed " << jobs[i].seed << "\t"
          << (results[i].failure.empty() ? "front180 " + format_number(results[i].front180.value_or(NAN))
                                         : "failed: " + results[i].failure)
          << std::endl;
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  AblationReport report;
  report.epochs = options.epochs;
  report.train_samples = train_data.size();
  report.test_samples = test_data.size();
  for (std::uint64_t s = 1; s <= options.seeds; ++s) report.seeds.push_back(s);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (report.arms.empty() || report.arms.back().fusion != jobs[i].fusion) {
      report.arms.push_back(ArmResult{jobs[i].fusion, {}, {}, {}, {}});
    }
    ArmResult& arm = report.arms.back();
    if (!results[i].failure.empty()) {
      arm.failure += (arm.failure.empty() ? "" : "; ") + results[i].failure;
      continue;
    }
    arm.runs.push_back({jobs[i].seed, results[i].front180, results[i].front_facing});
  }
  for (auto& arm : report.arms) arm.summarize_runs();
  return report;
}

int cmd_ablate(const AblateOptions& options, std::ostream& out, std::ostream& log) {
  const AblationReport report = run_ablation(options, log);
  out << format_ablation_report(report);
  const bool ok = std::all_of(report.arms.begin(), report.arms.end(), [](const ArmResult& a) { return a.ok(); });
  return ok ? kExitOk : kExitNumerical;
}

int cmd_gradcheck(bool inject_bug, std::ostream& out) {
  fault::set_flip_matmul_rhs_grad(inject_bug);
  std::vector<BlockAudit> audits;
  try {
    audits = run_gradient_audit();
  } catch (...) {
    fault::set_flip_matmul_rhs_grad(false);
    throw;
  }
  fault::set_flip_matmul_rhs_grad(false);
  out << format_gradient_audit(audits);
  const bool ok = std::all_of(audits.begin(), audits.end(), [](const BlockAudit& a) { return a.passed(); });
  return ok ? kExitOk : kExitNumerical;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"crossgaze: synthetic gaze estimation with face/eye fusion"};
  app.require_subcommand(1);

  GendataOptions gendata;
  std::string split = "train";
  auto* gen_cmd = app.add_subcommand("gendata", "Render a synthetic dataset split");
  gen_cmd->add_option("--out", gendata.out, "Output directory")->required();
  gen_cmd->add_option("--count", gendata.count, "Number of records")->required();
  gen_cmd->add_option("--seed", gendata.seed, "Generator seed")->required();
  gen_cmd->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  TrainOptions train_opts;
  std::string fusion;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write a checkpoint and loss log");
  train_cmd->add_option("--data", train_opts.data, "Dataset directory")->required();
  train_cmd->add_option("--fusion", fusion, "none, fcn or xattn")
      ->required()
      ->check(CLI::IsMember({"none", "fcn", "xattn"}));
  train_cmd->add_option("--epochs", train_opts.epochs, "Epochs")->required();
  train_cmd->add_option("--seed", train_opts.seed, "Initialization and shuffle seed")->required();
  train_cmd->add_option("--out", train_opts.out, "Output directory")->required();

  EvalOptions eval_opts;
  std::string subsets = "all,front180,front_facing";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint per subset");
  eval_cmd->add_option("--data", eval_opts.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_opts.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--subset", subsets, "Comma-separated subsets");

  AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train every fusion arm over several seeds");
  ablate_cmd->add_option("--data", ablate.data, "Directory holding train/ and test/")->required();
  ablate_cmd->add_option("--seeds", ablate.seeds, "Seeds 1..N per arm")->required();
  ablate_cmd->add_option("--epochs", ablate.epochs, "Epochs per run")->required();

  bool inject_bug = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference audit of every block");
  grad_cmd->add_flag("--inject-bug", inject_bug, "Negate one gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) {
      gendata.split = data::parse_split(split);
      cmd_gendata(gendata, out);
    } else if (*train_cmd) {
      train_opts.fusion = model::parse_fusion(fusion);
      cmd_train(train_opts, out);
    } else if (*eval_cmd) {
      eval_opts.subsets = parse_subsets(subsets);
      cmd_eval(eval_opts, out);
    } else if (*ablate_cmd) {
      return cmd_ablate(ablate, out, err);
    } else if (*grad_cmd) {
      return cmd_gradcheck(inject_bug, out);
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace crossgaze::cli
