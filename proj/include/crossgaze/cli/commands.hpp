#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "crossgaze/cli/report.hpp"
#include "crossgaze/data/dataset.hpp"
#include "crossgaze/model/crossgaze.hpp"
#include "crossgaze/train/training.hpp"

namespace crossgaze::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Invalid flag values detected after parsing.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kCheckpointFile = "checkpoint.gzck";
inline constexpr const char* kLossLogFile = "loss.tsv";
/// Written by eval next to the checkpoint it reads.
inline constexpr const char* kEvalReportFile = "eval.tsv";

struct GendataOptions {
  std::filesystem::path out;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  data::Split split = data::Split::train;
};
data::DatasetManifest cmd_gendata(const GendataOptions& options, std::ostream& out);

struct TrainOptions {
  std::filesystem::path data;
  model::Fusion fusion = model::Fusion::xattn;
  std::size_t epochs = 1;
  /// Seeds both parameter initialization and batch order.
  std::uint64_t seed = 0;
  std::filesystem::path out;
};
/// Writes <out>/checkpoint.gzck and <out>/loss.tsv; returns the per-epoch mean losses.
std::vector<double> cmd_train(const TrainOptions& options, std::ostream& out);

struct EvalOptions {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  std::vector<geometry::Subset> subsets{geometry::Subset::all, geometry::Subset::front180,
                                        geometry::Subset::front_facing};
};
std::vector<train::SubsetMetric> cmd_eval(const EvalOptions& options, std::ostream& out);

struct AblateOptions {
  /// Holds train/ and test/ dataset directories.
  std::filesystem::path data;
  std::size_t seeds = 3;
  std::size_t epochs = 30;
  /// Parallel runs; 0 uses the hardware concurrency.
  std::size_t workers = 0;
};
/// Every fusion arm for seeds 1..N. Runs that fail mark their arm failed
/// instead of throwing; progress lines go to `log`.
AblationReport run_ablation(const AblateOptions& options, std::ostream& log);
/// Prints the report; nonzero when an arm failed.
int cmd_ablate(const AblateOptions& options, std::ostream& out, std::ostream& log);

int cmd_gradcheck(bool inject_bug, std::ostream& out);

/// Parses argv (argv[0] is the program name), runs the command, and maps
/// errors to exit codes: usage 1, data 2, numerical 3.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crossgaze::cli
