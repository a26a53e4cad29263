#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lorafuse/cachesys.hpp"
#include "lorafuse/profiler.hpp"

namespace lorafuse {

// Composition method tags accepted across configs, traces, and reports.
enum class Method {
    kNaive,             // bare net, no adapters
    kMerge,             // componentwise weight fusion, single branch
    kMergeElementwise,  // factor-wise fusion, single branch
    kMergeGradient,     // least-squares fusion, single branch
    kSwitch,            // one active adapter, rotating every tau steps
    kSwitchA,           // switch activating in frequency-ranked order
    kComposite,         // uniform collective guidance over all branches
    kCmlora,            // frequency-partitioned dominance plus caching
};

Method parse_method(const std::string& tag);  // ParameterError on unknown tags
std::string method_tag(Method method);
bool is_merge_method(Method method);

// One branch's role at one step of a run. weight is the aggregation
// weight fed to collective guidance, not the adapter application scale.
struct StepEntry {
    std::string adapter_id;
    double weight = 1.0;
    bool full_inference = true;
};

// All branches at one step. dominant_id names the elevated (or sole
// active) branch; empty for methods without a distinguished branch. turn
// counts dominance changes since the start of the run.
struct StepRecord {
    int step = 0;
    std::string dominant_id;
    int turn = 0;
    std::vector<StepEntry> entries;
};

struct ScheduleTrace {
    Method method = Method::kComposite;
    int skip_index = 1;  // cached branches recompute above this up block
    std::vector<StepRecord> steps;
};

// lambda(t) = floor(((t - 1) mod (N tau)) / tau) + 1 over t = 1..T,
// returned zero-based (lambda - 1) per step.
std::vector<int> switch_schedule(int n, int tau, int total_steps);

// Single-branch trace shared by the bare and merged pipelines: the branch
// runs full on plan steps and reuses its own cache elsewhere.
ScheduleTrace single_branch_trace(Method method, const std::string& branch_id,
                                  const CachePlan& plan, int skip_index);

// Every adapter active with weight one at every step; all branches follow
// the plan together.
ScheduleTrace composite_trace(const std::vector<std::string>& ids, const CachePlan& plan,
                              int skip_index);

// One active adapter per step, rotating through ids every tau steps. A
// branch runs full on plan steps and on its first activation, since
// nothing of it is cached before that.
ScheduleTrace switch_trace(Method method, const std::vector<std::string>& ids, int tau,
                           const CachePlan& plan, int skip_index);

// Frequency-partitioned dominance. Every adapter receives
// D = (T - 1) / N dominant steps: the high-set members rotate dominance
// per step (round-robin in ranked order) over the first |H| * D steps,
// then the low-set member closes the run with its D steps plus any
// remainder T - N * D. The dominant branch always runs full; the others
// follow the plan. Weights obey DominantSchedule, advancing one turn on
// every dominance change.
ScheduleTrace cmlora_schedule(const Partition& partition, const CachePlan& plan, int skip_index,
                              bool decay = true, double w_dom_init = -1.0);

// Dominant steps received by each adapter id, in trace order.
std::vector<std::pair<std::string, int>> dominance_counts(const ScheduleTrace& trace);

// Columns: step,method,dominant_id,adapter_id,weight,full_inference,turn.
void write_trace_csv(std::ostream& os, const ScheduleTrace& trace);

}  // namespace lorafuse
