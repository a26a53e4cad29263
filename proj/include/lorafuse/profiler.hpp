#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lorafuse/adapters.hpp"
#include "lorafuse/denoiser.hpp"

namespace lorafuse {

// One recorded point of the spectral-change series: at step t the
// high-frequency amplitude of the spectral difference between the channel
// mean now and the channel mean interval steps earlier.
struct FrequencyPoint {
    int t = 0;
    double delta_h_total = 0.0;
};

struct FrequencySeries {
    std::string adapter_id;
    std::string category;
    double cutoff_fraction = 0.2;
    int interval = 20;
    std::vector<FrequencyPoint> points;  // timesteps strictly increasing
};

// Pointwise mean of member series sharing a category.
struct CategoryProfile {
    std::string category;
    double cutoff_fraction = 0.2;
    int interval = 20;
    std::vector<FrequencyPoint> points;
};

struct RankedCategory {
    std::string label;
    double early_mean = 0.0;
};

// Labels in descending order of the early-window mean; ties broken
// lexicographically by label.
struct Ordering {
    std::vector<RankedCategory> entries;

    std::vector<std::string> labels() const;
};

// High- and low-frequency dominant sets. The last-ranked label lands in
// low_set; everyone else in high_set. A single label degenerates to
// high_set = {label}, low_set empty.
struct Partition {
    std::vector<std::string> high_set;
    std::vector<std::string> low_set;
    std::vector<std::string> ordering;
};

struct ProfileOptions {
    int total_steps = 200;
    double cutoff_fraction = 0.2;
    int interval = 0;  // 0 derives max(1, total_steps / 10)
    double guidance_scale = 10.0;
    double adapter_weight = 1.0;
    std::uint64_t seed = 0;
};

int default_interval(int total_steps);

// Single-adapter guided denoising run; records at every step t in
// [interval, total_steps) the high-frequency amplitude of the spectral
// difference against the latent interval steps earlier. States are indexed
// forward from 0 (= latent after the first update).
FrequencySeries profile_adapter(const DenoiserNet& net, const LoraAdapter* adapter,
                                const ProfileOptions& opts);

// Pointwise arithmetic mean over member series. All members must agree on
// category, cutoff fraction, interval, and timesteps (AlignmentError).
CategoryProfile average_category(const std::vector<FrequencySeries>& members);

// Half-open range of recorded-point indices used for the ranking statistic.
struct PointWindow {
    std::size_t begin = 0;
    std::size_t end = 0;
};

// First quarter of the recorded points, never empty.
PointWindow early_window(std::size_t point_count);

Ordering rank_categories(const std::vector<CategoryProfile>& profiles, const PointWindow& window);
// Convenience: early_window over the (shared) point count.
Ordering rank_categories(const std::vector<CategoryProfile>& profiles);

Partition make_partition(const Ordering& ordering);

// Columns: adapter_id,category,t,delta_h_total.
void write_series_csv(std::ostream& os, const std::vector<FrequencySeries>& series);

// {"H": [...], "L": [...], "ordering": [...]}.
std::string partition_json(const Partition& partition);

}  // namespace lorafuse
