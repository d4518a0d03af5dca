#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crossgaze/model/crossgaze.hpp"
#include "crossgaze/train/training.hpp"

namespace crossgaze::cli {

// Numbers are written in shortest round-trip form, so parse -> format
// reproduces a report byte for byte. An omitted value is written as "-".

/// Lines "subset<TAB>count<TAB>mean_angular_error_deg".
std::string format_eval_report(const std::vector<train::SubsetMetric>& rows);
/// Throws FormatError carrying the 1-based line number.
std::vector<train::SubsetMetric> parse_eval_report(std::string_view text);

/// Lines "epoch<TAB>loss", epochs numbered from 1.
std::string format_loss_log(const std::vector<double>& epoch_losses);
std::vector<double> parse_loss_log(std::string_view text);

struct SeedRun {
  std::uint64_t seed = 0;
  std::optional<double> front180;
  std::optional<double> front_facing;
};

struct Summary {
  std::optional<double> mean;
  /// Sample standard deviation (n - 1); present with two or more values.
  std::optional<double> std;
};

Summary summarize(const std::vector<double>& values);

struct ArmResult {
  model::Fusion fusion = model::Fusion::none;
  /// Empty on success, otherwise the reason the arm failed.
  std::string failure;
  std::vector<SeedRun> runs;
  Summary front180;
  Summary front_facing;

  bool ok() const { return failure.empty(); }
  /// Recomputes both summaries from the runs.
  void summarize_runs();
};

struct AblationReport {
  std::size_t epochs = 0;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<ArmResult> arms;

  const ArmResult* arm(model::Fusion fusion) const;
};

/// Published full-scale results (random initialization, Front 180 degrees),
/// carried in every report as context only.
struct ReferenceRow {
  model::Fusion fusion;
  std::string_view mean;
  std::string_view std;
};
inline constexpr ReferenceRow kReferenceRows[] = {
    {model::Fusion::none, "10.91", "0.09"},
    {model::Fusion::fcn, "10.75", "0.02"},
    {model::Fusion::xattn, "10.65", "0.03"},
};

std::string format_ablation_report(const AblationReport& report);
/// Throws FormatError carrying the 1-based line number.
AblationReport parse_ablation_report(std::string_view text);

std::string format_number(double value);

}  // namespace crossgaze::cli
