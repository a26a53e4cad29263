#include "lorafuse/accounting.hpp"

#include <json.hpp>
#include <ostream>
#include <set>

#include "lorafuse/errors.hpp"

namespace lorafuse {

MacReport count_macs(const DenoiserSpec& spec, const ScheduleTrace& trace, const CachePlan& plan) {
    if (plan.total_steps != static_cast<int>(trace.steps.size()))
        throw ParameterError("trace and cache plan disagree on the step count");
    for (std::size_t i = 0; i < trace.steps.size(); ++i)
        if (trace.steps[i].step != static_cast<int>(i))
            throw ParameterError("trace steps must be consecutive from zero");

    const std::uint64_t full_cost = full_forward_macs(spec);
    bool any_partial = false;
    for (const auto& rec : trace.steps)
        for (const auto& e : rec.entries) any_partial = any_partial || !e.full_inference;
    const std::uint64_t partial_cost =
        any_partial ? partial_forward_macs(spec, trace.skip_index) : 0;

    MacReport report;
    report.method = method_tag(trace.method);
    report.strategy = plan.strategy;
    report.skip_index = trace.skip_index;
    std::set<std::string> ids;
    for (const auto& rec : trace.steps)
        for (const auto& e : rec.entries) {
            const std::uint64_t macs = 2 * (e.full_inference ? full_cost : partial_cost);
            report.entries.push_back({rec.step, e.adapter_id, e.full_inference, macs});
            report.total += macs;
            report.per_adapter[e.adapter_id] += macs;
            ids.insert(e.adapter_id);
            if (e.full_inference) {
                report.full_macs += macs;
                report.full_passes += 2;
            } else {
                report.partial_macs += macs;
                report.partial_passes += 2;
            }
        }
    report.branch_count = static_cast<int>(ids.size());
    return report;
}

std::string mac_report_json(const MacReport& report) {
    nlohmann::ordered_json j;
    j["method"] = report.method;
    j["branches"] = report.branch_count;
    j["strategy"] = report.strategy;
    j["skip_index"] = report.skip_index;
    j["totals"] = {{"macs", report.total},
                   {"full_macs", report.full_macs},
                   {"partial_macs", report.partial_macs},
                   {"full_passes", report.full_passes},
                   {"partial_passes", report.partial_passes}};
    j["similarity_measured"] = report.similarity_measured;
    j["shadow_macs"] = report.shadow_macs;
    nlohmann::ordered_json per;
    for (const auto& [id, macs] : report.per_adapter) per[id] = macs;
    j["per_adapter"] = std::move(per);
    return j.dump(2) + "\n";
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    os << "method,branches,strategy,total_macs\n";
    for (const auto& r : rows)
        os << r.method << "," << r.branch_count << "," << r.strategy << "," << r.total << "\n";
}

}  // namespace lorafuse
