#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lorafuse/denoiser.hpp"

namespace lorafuse {

// Steps that run full inference; every other step retrieves from the cache.
// Step 0 is always full: there is nothing to retrieve before the first write.
struct CachePlan {
    int total_steps = 0;
    std::string strategy;         // "none" | "uniform(c)" | "dynamic(c1,c2)"
    std::vector<int> full_steps;  // sorted, subset of [0, total_steps)

    bool is_full(int t) const;
};

// Caching disabled: every step full.
CachePlan no_cache_plan(int total_steps);

// Full steps at multiples of the stride: {0, c, 2c, ...} below total_steps.
CachePlan uniform_plan(int total_steps, int stride);

// Three-window plan: stride_head below 40% of the run, stride_mid from 40%
// to 90%, stride_head again for the final 10%. Window bounds are the floors
// of the fractional points; each window strides from its own start and keeps
// elements below the next bound.
CachePlan dynamic_plan(int total_steps, int stride_head, int stride_mid);

// {"T":..., "strategy":..., "full_steps":[...]}.
std::string plan_json(const CachePlan& plan);

// Cosine similarity over flattened feature stacks, clamped to [-1, 1].
// A zero-norm side yields 0.
double cosine_similarity(const Tensor& a, const Tensor& b);

// One measurement-mode record: the freshly recomputed feature at the skip
// point versus the cache entry available at that step.
struct FeatureObservation {
    int t = 0;
    Tensor fresh;
    Tensor cached;
    bool used_cache = false;  // whether the step actually retrieved it
};

struct SimilarityPoint {
    int t = 0;
    double s = 0.0;
    bool used_cache = false;
};

struct SimilaritySeries {
    std::vector<SimilarityPoint> points;  // timesteps strictly increasing
    double high_fraction = 0.0;           // fraction of points with s > 0.9
};

SimilaritySeries build_similarity_series(const std::vector<FeatureObservation>& observations);

// Columns: t,s,used_cache.
void write_similarity_csv(std::ostream& os, const SimilaritySeries& series);

struct WindowCriteria {
    double threshold = 0.2;
    double confidence = 0.9;
    int align = 5;  // candidate boundaries sit on this step grid
};

// Longest contiguous run of grid-aligned timesteps whose containment rate of
// the threshold inside [mean - std, mean + std] (mean/std across replicate
// runs, sample std) reaches the confidence level. Earliest run wins ties;
// no qualifying run yields nullopt. Needs >= 2 aligned replicates.
std::optional<std::pair<int, int>> derive_window(
    const std::vector<SimilaritySeries>& replicates, const WindowCriteria& criteria = {});

}  // namespace lorafuse
