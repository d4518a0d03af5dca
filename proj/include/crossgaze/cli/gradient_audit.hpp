#pragma once

#include <string>
#include <vector>

namespace crossgaze::cli {

inline constexpr double kAuditTolerance = 1e-5;

struct BlockAudit {
  std::string name;
  double max_rel_err = 0.0;

  bool passed() const { return max_rel_err < kAuditTolerance; }
};

/// Central finite differences against reverse-mode gradients, in double, for
/// every building block with randomized parameters and inputs. Fixed seeds.
std::vector<BlockAudit> run_gradient_audit();

/// Lines "name<TAB>max_rel_err".
std::string format_gradient_audit(const std::vector<BlockAudit>& audits);

}  // namespace crossgaze::cli
