#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lorafuse/accounting.hpp"
#include "lorafuse/adapters.hpp"
#include "lorafuse/cachesys.hpp"
#include "lorafuse/denoiser.hpp"
#include "lorafuse/guidance.hpp"
#include "lorafuse/profiler.hpp"
#include "lorafuse/schedule.hpp"

namespace lorafuse {

// Everything one composition run depends on. All randomness derives from
// seed, so equal configs produce equal artifacts.
struct RunConfig {
    Method method = Method::kComposite;
    std::vector<LoraAdapter> adapters;
    int total_steps = 200;
    double guidance_scale = 10.0;
    int skip_index = 1;
    double adapter_weight = 1.0;  // application weight for every branch
    std::uint64_t seed = 0;

    // Cache strategy: "none", "uniform" (stride1), or "dynamic"
    // (stride1 head/tail, stride2 middle).
    std::string cache_strategy = "none";
    int stride1 = 2;
    int stride2 = 3;

    // Profiling parameters for the methods that need a partition.
    double cutoff_fraction = 0.2;
    int interval = 0;       // 0 derives total / 10
    int profile_steps = 0;  // 0 reuses total_steps

    int tau = 5;               // switch rotation interval
    bool decay = true;         // dominant weight decay toggle
    double w_dom_init = -1.0;  // < 0 selects the N - 0.5 default
    bool measure_similarity = false;

    // Supplied partition (labels are adapter ids); profiled inline when
    // absent and the method needs one.
    std::optional<Partition> partition;

    CachePlan plan() const;
    void validate() const;
};

struct ComposeResult {
    LatentGrid final_latent;
    ScheduleTrace trace;
    MacReport report;
    std::optional<Partition> partition;       // set when the method used one
    std::vector<WeightTraceRow> weight_rows;  // per-step dominance weights
    std::optional<SimilaritySeries> similarity;
};

// Profile every adapter once and split them by early high-frequency
// activity; labels in the result are adapter ids.
Partition profile_partition(const DenoiserNet& net, const RunConfig& config);

// Per-adapter frequency series underlying profile_partition, for export.
std::vector<FrequencySeries> profile_all(const DenoiserNet& net, const RunConfig& config);

// Rank an already-profiled roster by early high-frequency activity;
// labels are adapter ids.
Ordering ranking_from_series(const std::vector<FrequencySeries>& series);

ComposeResult run_compose(const DenoiserNet& net, const RunConfig& config);

}  // namespace lorafuse
