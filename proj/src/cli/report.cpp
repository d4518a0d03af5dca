#include "crossgaze/cli/report.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "crossgaze/tensor/errors.hpp"

namespace crossgaze::cli {
namespace {

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = line.find(sep, start);
    out.emplace_back(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) return out;
    start = at + 1;
  }
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) { throw FormatError("report: " + what, line); }

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(line, "'" + s + "' is not a number");
  return v;
}

std::uint64_t parse_count(const std::string& s, std::size_t line) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    fail(line, "'" + s + "' is not an unsigned integer");
  }
  return v;
}

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : "-"; }

std::optional<double> parse_optional(const std::string& s, std::size_t line) {
  if (s == "-") return std::nullopt;
  return parse_double(s, line);
}

template <typename F>
auto parse_enum(F parse, const std::string& s, std::size_t line) {
  try {
    return parse(s);
  } catch (const std::invalid_argument& e) {
    fail(line, e.what());
  }
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

constexpr std::string_view kAblationHeader =
    "# crossgaze fusion ablation\n"
    "# metric: mean angular error in degrees on the test split\n"
    "# std: sample standard deviation (n-1) across seeds\n";
constexpr std::string_view kReferenceHeader =
    "# reference: published full-scale results (random init, front180), context only\n";

}  // namespace

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string format_eval_report(const std::vector<train::SubsetMetric>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += std::string(geometry::subset_name(r.subset)) + "\t" + std::to_string(r.count) + "\t" +
           optional_number(r.mean_degrees) + "\n";
  }
  return out;
}

std::vector<train::SubsetMetric> parse_eval_report(std::string_view text) {
  std::vector<train::SubsetMetric> out;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto f = split(lines[i], '\t');
    if (f.size() != 3) fail(i + 1, "expected subset, count, mean");
    train::SubsetMetric m;
    m.subset = parse_enum(geometry::parse_subset, f[0], i + 1);
    m.count = parse_count(f[1], i + 1);
    m.mean_degrees = parse_optional(f[2], i + 1);
    out.push_back(m);
  }
  return out;
}

std::string format_loss_log(const std::vector<double>& epoch_losses) {
  std::string out;
  for (std::size_t i = 0; i < epoch_losses.size(); ++i) {
    out += std::to_string(i + 1) + "\t" + format_number(epoch_losses[i]) + "\n";
  }
  return out;
}

std::vector<double> parse_loss_log(std::string_view text) {
  std::vector<double> out;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto f = split(lines[i], '\t');
    if (f.size() != 2) fail(i + 1, "expected epoch, loss");
    if (parse_count(f[0], i + 1) != i + 1) fail(i + 1, "epochs must count up from 1");
    out.push_back(parse_double(f[1], i + 1));
  }
  return out;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  s.mean = mean;
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

void ArmResult::summarize_runs() {
  std::vector<double> f180, ff;
  for (const auto& r : runs) {
    if (r.front180) f180.push_back(*r.front180);
    if (r.front_facing) ff.push_back(*r.front_facing);
  }
  front180 = summarize(f180);
  front_facing = summarize(ff);
}

const ArmResult* AblationReport::arm(model::Fusion fusion) const {
  for (const auto& a : arms) {
    if (a.fusion == fusion) return &a;
  }
  return nullptr;
}

std::string format_ablation_report(const AblationReport& report) {
  std::ostringstream out;
  out << kAblationHeader;
  out << "epochs\t" << report.epochs << "\n";
  out << "train_samples\t" << report.train_samples << "\n";
  out << "test_samples\t" << report.test_samples << "\n";
  out << "seeds\t";
  for (std::size_t i = 0; i < report.seeds.size(); ++i) out << (i ? "," : "") << report.seeds[i];
  out << "\n";
  for (const auto& a : report.arms) {
    const std::string name(model::fusion_name(a.fusion));
    out << "arm\t" << name << "\t" << (a.ok() ? "ok" : "failed\t" + one_line(a.failure)) << "\n";
    for (const auto& r : a.runs) {
      out << "run\t" << name << "\t" << r.seed << "\t" << optional_number(r.front180) << "\t"
          << optional_number(r.front_facing) << "\n";
    }
    out << "summary\t" << name << "\tfront180\t" << optional_number(a.front180.mean) << "\t"
        << optional_number(a.front180.std) << "\n";
    out << "summary\t" << name << "\tfront_facing\t" << optional_number(a.front_facing.mean) << "\t"
        << optional_number(a.front_facing.std) << "\n";
  }
  out << kReferenceHeader;
  for (const auto& r : kReferenceRows) {
    out << "reference\t" << model::fusion_name(r.fusion) << "\t" << r.mean << "\t" << r.std << "\n";
  }
  return out.str();
}

AblationReport parse_ablation_report(std::string_view text) {
  AblationReport report;
  const auto lines = lines_of(text);
  std::size_t references = 0;
  auto current_arm = [&](const std::string& name, std::size_t line) -> ArmResult& {
    const model::Fusion f = parse_enum(model::parse_fusion, name, line);
    if (report.arms.empty() || report.arms.back().fusion != f) fail(line, "line for arm " + name + " outside its block");
    return report.arms.back();
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t n = i + 1;
    if (!lines[i].empty() && lines[i][0] == '#') continue;
    const auto f = split(lines[i], '\t');
    const std::string& tag = f[0];
    if (tag == "epochs" && f.size() == 2) {
      report.epochs = parse_count(f[1], n);
    } else if (tag == "train_samples" && f.size() == 2) {
      report.train_samples = parse_count(f[1], n);
    } else if (tag == "test_samples" && f.size() == 2) {
      report.test_samples = parse_count(f[1], n);
    } else if (tag == "seeds" && f.size() == 2) {
      if (!f[1].empty()) {
        for (const auto& s : split(f[1], ',')) report.seeds.push_back(parse_count(s, n));
      }
    } else if (tag == "arm" && (f.size() == 3 || f.size() == 4)) {
      ArmResult a;
      a.fusion = parse_enum(model::parse_fusion, f[1], n);
      if (f[2] == "ok" && f.size() == 3) {
      } else if (f[2] == "failed" && f.size() == 4 && !f[3].empty()) {
        a.failure = f[3];
      } else {
        fail(n, "arm status must be 'ok' or 'failed<TAB>reason'");
      }
      if (report.arm(a.fusion)) fail(n, "duplicate arm " + f[1]);
      report.arms.push_back(std::move(a));
    } else if (tag == "run" && f.size() == 5) {
      ArmResult& a = current_arm(f[1], n);
      a.runs.push_back({parse_count(f[2], n), parse_optional(f[3], n), parse_optional(f[4], n)});
    } else if (tag == "summary" && f.size() == 5) {
      ArmResult& a = current_arm(f[1], n);
      const Summary s{parse_optional(f[3], n), parse_optional(f[4], n)};
      if (f[2] == "front180") {
        a.front180 = s;
      } else if (f[2] == "front_facing") {
        a.front_facing = s;
      } else {
        fail(n, "unknown summary subset " + f[2]);
      }
    } else if (tag == "reference" && f.size() == 4) {
      if (references >= std::size(kReferenceRows)) fail(n, "too many reference rows");
      const auto& expected = kReferenceRows[references++];
      if (f[1] != model::fusion_name(expected.fusion) || f[2] != expected.mean || f[3] != expected.std) {
        fail(n, "reference row differs from the published values");
      }
    } else {
      fail(n, "unrecognized line");
    }
  }
  if (references != std::size(kReferenceRows)) fail(lines.size(), "reference block incomplete");
  return report;
}

}  // namespace crossgaze::cli
