#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "crossgaze/cli/commands.hpp"
#include "crossgaze/cli/gradient_audit.hpp"
#include "crossgaze/cli/report.hpp"
#include "crossgaze/data/synthetic.hpp"
#include "crossgaze/tensor/errors.hpp"
#include "crossgaze/train/checkpoint.hpp"
#include "doctest.h"

using namespace crossgaze;
using namespace crossgaze::cli;
namespace fs = std::filesystem;
using geometry::GazeVector;
using geometry::Subset;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("crossgaze_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Invocation {
  int code = -1;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "crossgaze");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Invocation r;
  r.code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

// Angle in degrees via long double; subsets by the angle to (0,0,-1), strictly below the limit.
long double oracle_angle(const GazeVector& a, const GazeVector& b) {
  const long double dot = (long double)a.x * b.x + (long double)a.y * b.y + (long double)a.z * b.z;
  const long double na = std::sqrt((long double)a.x * a.x + (long double)a.y * a.y + (long double)a.z * a.z);
  const long double nb = std::sqrt((long double)b.x * b.x + (long double)b.y * b.y + (long double)b.z * b.z);
  long double c = dot / (na * nb);
  c = std::max(-1.0L, std::min(1.0L, c));
  return std::acos(c) * 180.0L / 3.14159265358979323846264338327950288L;
}

bool oracle_in(const GazeVector& g, Subset s) {
  const long double off_axis = oracle_angle(g, GazeVector{0.0, 0.0, -1.0});
  switch (s) {
    case Subset::all: return true;
    case Subset::front180: return off_axis < 90.0L;
    case Subset::front_facing: return off_axis < 20.0L;
  }
  return false;
}

AblationReport sample_report() {
  AblationReport r;
  r.epochs = 30;
  r.train_samples = 2000;
  r.test_samples = 500;
  r.seeds = {1, 2, 3};
  ArmResult none{model::Fusion::none, {}, {{1, 9.5, 7.25}, {2, 9.75, std::nullopt}, {3, 10.125, 8.0}}, {}, {}};
  ArmResult fcn{model::Fusion::fcn, "seed 2: parameter x is not finite", {{1, 0.1 + 0.2, 1e-300}}, {}, {}};
  ArmResult xattn{model::Fusion::xattn, {}, {{1, 3.0, std::nullopt}, {2, 4.0, std::nullopt}, {3, 5.0, std::nullopt}}, {}, {}};
  for (ArmResult* a : {&none, &fcn, &xattn}) a->summarize_runs();
  r.arms = {none, fcn, xattn};
  return r;
}

}  // namespace

TEST_CASE("eval report round trip") {
  const std::vector<train::SubsetMetric> rows{
      {Subset::all, 500, 12.345678901234567}, {Subset::front180, 321, 0.1 + 0.2}, {Subset::front_facing, 0, {}}};
  const std::string text = format_eval_report(rows);
  CHECK(text == "all\t500\t12.345678901234567\nfront180\t321\t0.30000000000000004\nfront_facing\t0\t-\n");
  const auto parsed = parse_eval_report(text);
  REQUIRE(parsed.size() == 3);
  CHECK(parsed[1].mean_degrees == 0.1 + 0.2);
  CHECK_FALSE(parsed[2].mean_degrees.has_value());
  CHECK(format_eval_report(parsed) == text);

  try {
    parse_eval_report("all\t5\t1.5\nfront180\tx\t2\n");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 2);
  }
  CHECK_THROWS_AS(parse_eval_report("sideways\t1\t2\n"), FormatError);
  CHECK_THROWS_AS(parse_eval_report("all\t1\n"), FormatError);
}

TEST_CASE("loss log round trip") {
  const std::vector<double> losses{0.5, 0.0123456789, 1e-7};
  const std::string text = format_loss_log(losses);
  CHECK(text.rfind("1\t0.5\n2\t", 0) == 0);
  CHECK(parse_loss_log(text) == losses);
  CHECK(format_loss_log(parse_loss_log(text)) == text);
  CHECK_THROWS_AS(parse_loss_log("2\t0.5\n"), FormatError);
  CHECK_THROWS_AS(parse_loss_log("1\tnan-ish\n"), FormatError);
}

TEST_CASE("summaries use the sample standard deviation") {
  const Summary s = summarize({3.0, 4.0, 5.0});
  CHECK(*s.mean == 4.0);
  CHECK(*s.std == doctest::Approx(1.0).epsilon(1e-15));
  const Summary one = summarize({2.5});
  CHECK(*one.mean == 2.5);
  CHECK_FALSE(one.std.has_value());
  CHECK_FALSE(summarize({}).mean.has_value());
}

TEST_CASE("ablation report round trip") {
  const AblationReport r = sample_report();
  const std::string text = format_ablation_report(r);
  CHECK(text.find("n-1") != std::string::npos);
  CHECK(text.find("arm\tfcn\tfailed\tseed 2: parameter x is not finite\n") != std::string::npos);
  CHECK(text.find("run\tnone\t2\t9.75\t-\n") != std::string::npos);
  CHECK(text.find("summary\txattn\tfront180\t4\t1\n") != std::string::npos);
  CHECK(text.find("reference\tnone\t10.91\t0.09\n") != std::string::npos);
  CHECK(text.find("reference\tfcn\t10.75\t0.02\n") != std::string::npos);
  CHECK(text.find("reference\txattn\t10.65\t0.03\n") != std::string::npos);

  const AblationReport parsed = parse_ablation_report(text);
  CHECK(format_ablation_report(parsed) == text);
  CHECK(parsed.seeds == r.seeds);
  REQUIRE(parsed.arms.size() == 3);
  CHECK(parsed.arm(model::Fusion::none)->runs.size() == 3);
  CHECK(parsed.arm(model::Fusion::fcn)->failure == r.arms[1].failure);
  CHECK(parsed.arm(model::Fusion::fcn)->runs[0].front_facing == 1e-300);

  std::string tampered = text;
  tampered.replace(tampered.find("10.65"), 5, "10.66");
  CHECK_THROWS_AS(parse_ablation_report(tampered), FormatError);
  CHECK_THROWS_AS(parse_ablation_report(text.substr(0, text.find("reference"))), FormatError);
  std::string misplaced = text;
  misplaced.replace(misplaced.find("run\tnone\t1"), 10, "run\tfcn\t1");
  CHECK_THROWS_AS(parse_ablation_report(misplaced), FormatError);
}

TEST_CASE("gradient audit") {
  const auto audits = run_gradient_audit();
  const std::vector<std::string> expected{"linear",     "conv_block",      "residual_block",
                                          "multi_branch_block", "layer_norm", "cross_attention",
                                          "fcn_fusion", "mlp_head",        "gaze_loss"};
  REQUIRE(audits.size() == expected.size());
  for (std::size_t i = 0; i < audits.size(); ++i) {
    CHECK(audits[i].name == expected[i]);
    CHECK(audits[i].max_rel_err < kAuditTolerance);
  }

  const Invocation ok = invoke({"gradcheck"});
  CHECK(ok.code == kExitOk);
  std::istringstream lines(ok.out);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    CHECK(line.substr(0, tab) == expected[n]);
    CHECK(std::stod(line.substr(tab + 1)) < kAuditTolerance);
  }
  CHECK(n == expected.size());

  const Invocation bad = invoke({"gradcheck", "--inject-bug"});
  CHECK(bad.code == kExitNumerical);
  CHECK_FALSE(fault::flip_matmul_rhs_grad());
  CHECK(invoke({"gradcheck"}).code == kExitOk);
}

TEST_CASE("usage errors") {
  TempDir d("usage");
  CHECK(invoke({}).code == kExitUsage);
  CHECK(invoke({"frobnicate"}).code == kExitUsage);
  CHECK(invoke({"gendata", "--out", d.path.string(), "--count", "0", "--seed", "1"}).code == kExitUsage);
  CHECK_FALSE(fs::exists(d.path / data::kManifestName));
  CHECK(invoke({"gendata", "--out", d.path.string(), "--count", "3", "--seed", "1", "--split", "dev"}).code ==
        kExitUsage);
  CHECK(invoke({"train", "--data", d.path.string(), "--fusion", "concat", "--epochs", "1", "--seed", "1", "--out",
                d.path.string()})
            .code == kExitUsage);
  CHECK(invoke({"train", "--data", d.path.string(), "--fusion", "none", "--epochs", "0", "--seed", "1", "--out",
                d.path.string()})
            .code == kExitUsage);
  CHECK(invoke({"ablate", "--data", d.path.string(), "--seeds", "0", "--epochs", "1"}).code == kExitUsage);
  CHECK(invoke({"--help"}).code == kExitOk);
}

TEST_CASE("data errors name the path") {
  TempDir d("missing");
  const Invocation r = invoke({"train", "--data", (d.path / "nowhere").string(), "--fusion", "xattn", "--epochs",
                               "1", "--seed", "1", "--out", (d.path / "run").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("nowhere") != std::string::npos);
  CHECK(invoke({"eval", "--data", (d.path / "nowhere").string(), "--ckpt", (d.path / "c.gzck").string()}).code ==
        kExitData);
}

TEST_CASE("gendata is deterministic") {
  TempDir a("gen_a"), b("gen_b");
  const Invocation r = invoke({"gendata", "--out", a.path.string(), "--count", "6", "--seed", "9", "--split", "test"});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "manifest\t" + (a.path / data::kManifestName).string() + "\nrecords\t6\n");
  CHECK(invoke({"gendata", "--out", b.path.string(), "--count", "6", "--seed", "9", "--split", "test"}).code ==
        kExitOk);
  CHECK(tree(a.path) == tree(b.path));
  CHECK(data::load_manifest(a.path).split == data::Split::test);
}

TEST_CASE("train, eval, and their reports") {
  TempDir d("train");
  const fs::path data_dir = d.path / "data";
  REQUIRE(invoke({"gendata", "--out", data_dir.string(), "--count", "16", "--seed", "4"}).code == kExitOk);
  auto train_into = [&](const std::string& name) {
    return invoke({"train", "--data", data_dir.string(), "--fusion", "xattn", "--epochs", "20", "--seed", "2",
                   "--out", (d.path / name).string()});
  };
  REQUIRE(train_into("run1").code == kExitOk);
  REQUIRE(train_into("run2").code == kExitOk);

  SUBCASE("identical flags give identical artifacts") {
    CHECK(read_file(d.path / "run1" / kCheckpointFile) == read_file(d.path / "run2" / kCheckpointFile));
    CHECK(read_file(d.path / "run1" / kLossLogFile) == read_file(d.path / "run2" / kLossLogFile));
  }

  SUBCASE("loss log overfits the small set") {
    const std::string text = read_file(d.path / "run1" / kLossLogFile);
    const auto losses = parse_loss_log(text);
    REQUIRE(losses.size() == 20);
    CHECK(losses.back() < 0.02);
    CHECK(losses.back() < losses.front());
    CHECK(format_loss_log(losses) == text);
  }

  SUBCASE("eval output matches an independent metric computation") {
    const fs::path ckpt = d.path / "run1" / kCheckpointFile;
    const Invocation r = invoke({"eval", "--data", data_dir.string(), "--ckpt", ckpt.string()});
    REQUIRE(r.code == kExitOk);
    CHECK(read_file(d.path / "run1" / kEvalReportFile) == r.out);
    const auto rows = parse_eval_report(r.out);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].subset == Subset::all);
    CHECK(rows[1].subset == Subset::front180);
    CHECK(rows[2].subset == Subset::front_facing);
    CHECK(rows[0].count >= rows[1].count);
    CHECK(rows[1].count >= rows[2].count);
    CHECK(format_eval_report(rows) == r.out);

    train::Checkpoint c = train::load_checkpoint(ckpt);
    train::Model m{c.config, std::move(c.params)};
    const auto dataset = data::InMemoryDataset::load(data::load_manifest(data_dir));
    const auto preds = train::predict(m, dataset);
    for (const auto& row : rows) {
      long double total = 0.0L;
      std::size_t count = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!oracle_in(dataset.gaze()[i], row.subset)) continue;
        total += oracle_angle(preds[i], dataset.gaze()[i]);
        ++count;
      }
      CHECK(row.count == count);
      if (count == 0) {
        CHECK_FALSE(row.mean_degrees.has_value());
      } else {
        REQUIRE(row.mean_degrees.has_value());
        CHECK(std::abs(*row.mean_degrees - static_cast<double>(total / count)) < 1e-9);
      }
    }
  }

  SUBCASE("subset selection and bad subsets") {
    const fs::path ckpt = d.path / "run1" / kCheckpointFile;
    const Invocation r = invoke({"eval", "--data", data_dir.string(), "--ckpt", ckpt.string(), "--subset", "front180"});
    CHECK(r.code == kExitOk);
    CHECK(parse_eval_report(r.out).size() == 1);
    CHECK(invoke({"eval", "--data", data_dir.string(), "--ckpt", ckpt.string(), "--subset", "front90"}).code ==
          kExitUsage);
  }

  SUBCASE("corrupt checkpoint is a data error") {
    const fs::path bad = d.path / "bad.gzck";
    std::ofstream(bad, std::ios::binary) << read_file(d.path / "run1" / kCheckpointFile).substr(0, 100);
    const Invocation r = invoke({"eval", "--data", data_dir.string(), "--ckpt", bad.string()});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("truncated") != std::string::npos);
  }
}

TEST_CASE("ablation report ordering does not depend on workers") {
  TempDir d("ablate");
  data::generate_synthetic_dataset(d.path / "train", 8, 5, data::Split::train);
  data::generate_synthetic_dataset(d.path / "test", 6, 5, data::Split::test);
  std::ostringstream log;
  AblateOptions options{d.path, 2, 1, 1};
  const AblationReport serial = run_ablation(options, log);
  options.workers = 3;
  const AblationReport parallel = run_ablation(options, log);
  const std::string text = format_ablation_report(serial);
  CHECK(format_ablation_report(parallel) == text);

  const AblationReport parsed = parse_ablation_report(text);
  CHECK(parsed.epochs == 1);
  CHECK(parsed.train_samples == 8);
  CHECK(parsed.test_samples == 6);
  REQUIRE(parsed.arms.size() == 3);
  const model::Fusion order[] = {model::Fusion::none, model::Fusion::fcn, model::Fusion::xattn};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(parsed.arms[i].fusion == order[i]);
    CHECK(parsed.arms[i].ok());
    REQUIRE(parsed.arms[i].runs.size() == 2);
    CHECK(parsed.arms[i].runs[0].seed == 1);
    CHECK(parsed.arms[i].runs[1].seed == 2);
    CHECK(parsed.arms[i].front180.std.has_value());
  }

  const Invocation r = invoke({"ablate", "--data", d.path.string(), "--seeds", "2", "--epochs", "1"});
  CHECK(r.code == kExitOk);
  CHECK(r.out == text);
}
