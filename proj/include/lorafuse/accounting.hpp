#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lorafuse/cachesys.hpp"
#include "lorafuse/denoiser.hpp"
#include "lorafuse/schedule.hpp"

namespace lorafuse {

// One branch at one step in the cost ledger. Guidance needs two forward
// passes (unconditional and conditional), so macs covers both.
struct MacEntry {
    int step = 0;
    std::string adapter_id;
    bool full_inference = true;
    std::uint64_t macs = 0;
};

struct MacReport {
    std::string method;
    int branch_count = 0;
    std::string strategy;
    int skip_index = 1;
    std::uint64_t total = 0;
    std::uint64_t full_macs = 0;
    std::uint64_t partial_macs = 0;
    int full_passes = 0;  // forward passes, two per branch per step
    int partial_passes = 0;
    // Measurement-mode overhead (shadow recomputation for similarity
    // recording); kept out of total since it is not part of the method.
    bool similarity_measured = false;
    std::uint64_t shadow_macs = 0;
    std::map<std::string, std::uint64_t> per_adapter;
    std::vector<MacEntry> entries;
};

// Analytic multiply-accumulate count of a traced run, from the block
// dimension table alone: every step entry costs two branch passes, full
// or partial per its flag. The plan must agree with the trace length.
MacReport count_macs(const DenoiserSpec& spec, const ScheduleTrace& trace, const CachePlan& plan);

std::string mac_report_json(const MacReport& report);

// One aggregated row per run: method,branches,strategy,total_macs.
struct SummaryRow {
    std::string method;
    int branch_count = 0;
    std::string strategy;
    std::uint64_t total = 0;
};

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

}  // namespace lorafuse
