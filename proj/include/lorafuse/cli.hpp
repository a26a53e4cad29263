#pragma once

#include <vector>

#include "lorafuse/accounting.hpp"

namespace lorafuse {

// Cost-ordering relations over a summary table, evaluated wherever the
// rows provide both sides of a comparison: equal cells agree across seeds,
// cached strategies beat uncached ones, composite scales with the branch
// count, uncached switch does not, and cached cmlora undercuts uncached
// composite. Violations go to stderr; returns false if any fired.
bool check_summary_relations(const std::vector<SummaryRow>& rows);

// Entry point behind the lorafuse binary. Returns the process exit code:
// 0 success, 1 usage or config error, 2 invariant-check failure under
// compose --check.
int run_cli(int argc, char** argv);

}  // namespace lorafuse
