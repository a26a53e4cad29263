#include "lorafuse/schedule.hpp"

#include <algorithm>
#include <ostream>
#include <set>

#include "lorafuse/errors.hpp"
#include "lorafuse/guidance.hpp"
#include "lorafuse/io.hpp"

namespace lorafuse {

Method parse_method(const std::string& tag) {
    if (tag == "naive") return Method::kNaive;
    if (tag == "merge") return Method::kMerge;
    if (tag == "merge_elementwise") return Method::kMergeElementwise;
    if (tag == "merge_gradient") return Method::kMergeGradient;
    if (tag == "switch") return Method::kSwitch;
    if (tag == "switch_a") return Method::kSwitchA;
    if (tag == "composite") return Method::kComposite;
    if (tag == "cmlora") return Method::kCmlora;
    throw ParameterError("unknown method tag: " + tag);
}

std::string method_tag(Method method) {
    switch (method) {
        case Method::kNaive: return "naive";
        case Method::kMerge: return "merge";
        case Method::kMergeElementwise: return "merge_elementwise";
        case Method::kMergeGradient: return "merge_gradient";
        case Method::kSwitch: return "switch";
        case Method::kSwitchA: return "switch_a";
        case Method::kComposite: return "composite";
        case Method::kCmlora: return "cmlora";
    }
    throw ParameterError("unknown method enum value");
}

bool is_merge_method(Method method) {
    return method == Method::kMerge || method == Method::kMergeElementwise ||
           method == Method::kMergeGradient;
}

namespace {

void require_unique_ids(const std::vector<std::string>& ids) {
    if (ids.empty()) throw ParameterError("schedule needs at least one adapter id");
    std::set<std::string> seen;
    for (const auto& id : ids)
        if (!seen.insert(id).second) throw ParameterError("duplicate adapter id: " + id);
}

}  // namespace

std::vector<int> switch_schedule(int n, int tau, int total_steps) {
    if (n < 1) throw ParameterError("switch schedule needs at least one adapter");
    if (tau < 1) throw ParameterError("switch interval must be positive");
    if (total_steps < 0) throw ParameterError("step count must be non-negative");
    std::vector<int> active(static_cast<std::size_t>(total_steps));
    const int period = n * tau;
    for (int t = 1; t <= total_steps; ++t)
        active[static_cast<std::size_t>(t - 1)] = ((t - 1) % period) / tau;
    return active;
}

ScheduleTrace single_branch_trace(Method method, const std::string& branch_id,
                                  const CachePlan& plan, int skip_index) {
    if (branch_id.empty()) throw ParameterError("branch id must be non-empty");
    ScheduleTrace trace;
    trace.method = method;
    trace.skip_index = skip_index;
    bool seen_full = false;
    for (int t = 0; t < plan.total_steps; ++t) {
        const bool full = plan.is_full(t) || !seen_full;
        seen_full = seen_full || full;
        trace.steps.push_back({t, "", 0, {{branch_id, 1.0, full}}});
    }
    return trace;
}

ScheduleTrace composite_trace(const std::vector<std::string>& ids, const CachePlan& plan,
                              int skip_index) {
    require_unique_ids(ids);
    ScheduleTrace trace;
    trace.method = Method::kComposite;
    trace.skip_index = skip_index;
    bool seen_full = false;
    for (int t = 0; t < plan.total_steps; ++t) {
        StepRecord rec{t, "", 0, {}};
        const bool full = plan.is_full(t) || !seen_full;
        seen_full = seen_full || full;
        for (const auto& id : ids) rec.entries.push_back({id, 1.0, full});
        trace.steps.push_back(std::move(rec));
    }
    return trace;
}

ScheduleTrace switch_trace(Method method, const std::vector<std::string>& ids, int tau,
                           const CachePlan& plan, int skip_index) {
    if (method != Method::kSwitch && method != Method::kSwitchA)
        throw ParameterError("switch trace requires a switch method tag");
    require_unique_ids(ids);
    const std::vector<int> active =
        switch_schedule(static_cast<int>(ids.size()), tau, plan.total_steps);

    ScheduleTrace trace;
    trace.method = method;
    trace.skip_index = skip_index;
    std::set<std::string> warmed;
    int turn = 0;
    for (int t = 0; t < plan.total_steps; ++t) {
        const std::string& id = ids[static_cast<std::size_t>(active[static_cast<std::size_t>(t)])];
        if (t > 0 && active[static_cast<std::size_t>(t)] != active[static_cast<std::size_t>(t - 1)])
            ++turn;
        // First activation always runs full: the branch has no cache yet.
        const bool first = warmed.insert(id).second;
        const bool full = plan.is_full(t) || first;
        trace.steps.push_back({t, id, turn, {{id, 1.0, full}}});
    }
    return trace;
}

ScheduleTrace cmlora_schedule(const Partition& partition, const CachePlan& plan, int skip_index,
                              bool decay, double w_dom_init) {
    std::vector<std::string> ids = partition.high_set;
    ids.insert(ids.end(), partition.low_set.begin(), partition.low_set.end());
    require_unique_ids(ids);

    const int total = plan.total_steps;
    const int n = static_cast<int>(ids.size());
    if (total <= n) throw ParameterError("run must be longer than the adapter count");
    const int budget = (total - 1) / n;
    const int high_count = static_cast<int>(partition.high_set.size());

    // Dominance order: rotate the high set per step, then hand the run to
    // the low set, whose last member absorbs the remainder steps.
    std::vector<std::string> dominants;
    dominants.reserve(static_cast<std::size_t>(total));
    for (int s = 0; s < high_count * budget; ++s)
        dominants.push_back(partition.high_set[static_cast<std::size_t>(s % high_count)]);
    for (const auto& id : partition.low_set)
        for (int s = 0; s < budget; ++s) dominants.push_back(id);
    while (static_cast<int>(dominants.size()) < total)
        dominants.push_back(partition.low_set.empty() ? partition.high_set.back()
                                                      : partition.low_set.back());
    dominants.resize(static_cast<std::size_t>(total));

    ScheduleTrace trace;
    trace.method = Method::kCmlora;
    trace.skip_index = skip_index;
    DominantSchedule weights = DominantSchedule::start(n, decay, w_dom_init);
    for (int t = 0; t < total; ++t) {
        const std::string& dom = dominants[static_cast<std::size_t>(t)];
        if (t > 0 && dom != dominants[static_cast<std::size_t>(t - 1)]) weights.advance_turn();
        StepRecord rec{t, dom, weights.turn, {}};
        for (const auto& id : ids) {
            const bool is_dom = id == dom;
            rec.entries.push_back({id, is_dom ? weights.w_dom : weights.w_non(),
                                   is_dom || plan.is_full(t)});
        }
        trace.steps.push_back(std::move(rec));
    }
    return trace;
}

std::vector<std::pair<std::string, int>> dominance_counts(const ScheduleTrace& trace) {
    std::vector<std::pair<std::string, int>> counts;
    for (const auto& rec : trace.steps) {
        if (rec.dominant_id.empty()) continue;
        auto it = std::find_if(counts.begin(), counts.end(),
                               [&](const auto& c) { return c.first == rec.dominant_id; });
        if (it == counts.end())
            counts.emplace_back(rec.dominant_id, 1);
        else
            it->second += 1;
    }
    return counts;
}

void write_trace_csv(std::ostream& os, const ScheduleTrace& trace) {
    os << "step,method,dominant_id,adapter_id,weight,full_inference,turn\n";
    const std::string tag = method_tag(trace.method);
    for (const auto& rec : trace.steps)
        for (const auto& e : rec.entries)
            os << rec.step << "," << tag << "," << rec.dominant_id << "," << e.adapter_id << ","
               << format_double(e.weight) << "," << (e.full_inference ? 1 : 0) << "," << rec.turn
               << "\n";
}

}  // namespace lorafuse
