#include "lorafuse/cachesys.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <ostream>

#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"

namespace lorafuse {

bool CachePlan::is_full(int t) const {
    if (t < 0 || t >= total_steps)
        throw ParameterError("step " + std::to_string(t) + " outside the plan");
    return std::binary_search(full_steps.begin(), full_steps.end(), t);
}

CachePlan no_cache_plan(int total_steps) {
    if (total_steps < 1) throw ParameterError("plan needs at least one step");
    CachePlan plan;
    plan.total_steps = total_steps;
    plan.strategy = "none";
    plan.full_steps.resize(static_cast<std::size_t>(total_steps));
    for (int t = 0; t < total_steps; ++t) plan.full_steps[static_cast<std::size_t>(t)] = t;
    return plan;
}

CachePlan uniform_plan(int total_steps, int stride) {
    if (total_steps < 1) throw ParameterError("plan needs at least one step");
    if (stride < 1) throw ParameterError("cache stride must be positive");
    CachePlan plan;
    plan.total_steps = total_steps;
    plan.strategy = "uniform(" + std::to_string(stride) + ")";
    for (int t = 0; t < total_steps; t += stride) plan.full_steps.push_back(t);
    return plan;
}

CachePlan dynamic_plan(int total_steps, int stride_head, int stride_mid) {
    if (total_steps < 10)
        throw ParameterError("the three-window plan needs at least ten steps");
    if (stride_head < 1 || stride_mid < 1)
        throw ParameterError("cache strides must be positive");

    const int mid_start = 2 * total_steps / 5;   // floor(0.4 T)
    const int tail_start = 9 * total_steps / 10; // floor(0.9 T)

    CachePlan plan;
    plan.total_steps = total_steps;
    plan.strategy =
        "dynamic(" + std::to_string(stride_head) + "," + std::to_string(stride_mid) + ")";
    for (int t = 0; t < mid_start; t += stride_head) plan.full_steps.push_back(t);
    for (int t = mid_start; t < tail_start; t += stride_mid) plan.full_steps.push_back(t);
    for (int t = tail_start; t < total_steps; t += stride_head) plan.full_steps.push_back(t);
    return plan;
}

std::string plan_json(const CachePlan& plan) {
    nlohmann::ordered_json j;
    j["T"] = plan.total_steps;
    j["strategy"] = plan.strategy;
    j["full_steps"] = plan.full_steps;
    return j.dump(2) + "\n";
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("feature stacks differ in channel count");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        if (a[c].rows() != b[c].rows() || a[c].cols() != b[c].cols())
            throw DimensionError("feature stacks differ in plane extents");
        dot += (a[c].array() * b[c].array()).sum();
        na += a[c].squaredNorm();
        nb += b[c].squaredNorm();
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilaritySeries build_similarity_series(const std::vector<FeatureObservation>& observations) {
    if (observations.empty())
        throw StateError("no recorded features to compare");
    SimilaritySeries series;
    int high = 0;
    for (const auto& obs : observations) {
        if (!series.points.empty() && obs.t <= series.points.back().t)
            throw ParameterError("observation timesteps must be strictly increasing");
        const double s = cosine_similarity(obs.fresh, obs.cached);
        if (s > 0.9) ++high;
        series.points.push_back({obs.t, s, obs.used_cache});
    }
    series.high_fraction =
        static_cast<double>(high) / static_cast<double>(series.points.size());
    return series;
}

void write_similarity_csv(std::ostream& os, const SimilaritySeries& series) {
    os << "t,s,used_cache\n";
    for (const auto& p : series.points)
        os << p.t << ',' << format_double(p.s) << ',' << (p.used_cache ? 1 : 0) << '\n';
}

std::optional<std::pair<int, int>> derive_window(
    const std::vector<SimilaritySeries>& replicates, const WindowCriteria& criteria) {
    if (replicates.size() < 2)
        throw ParameterError("window derivation needs at least two replicate runs");
    if (criteria.align < 1) throw ParameterError("alignment stride must be positive");
    if (!(criteria.confidence > 0.0 && criteria.confidence <= 1.0))
        throw ParameterError("confidence must lie in (0, 1]");

    const std::size_t n_points = replicates.front().points.size();
    for (const auto& r : replicates) {
        if (r.points.size() != n_points)
            throw AlignmentError("replicate runs disagree on the recorded point count");
        for (std::size_t i = 0; i < n_points; ++i)
            if (r.points[i].t != replicates.front().points[i].t)
                throw AlignmentError("replicate runs disagree on timesteps");
    }

    // Containment indicator per grid-aligned timestep.
    std::vector<int> grid_t;
    std::vector<bool> contained;
    const double denom = static_cast<double>(replicates.size() - 1);
    for (std::size_t i = 0; i < n_points; ++i) {
        const int t = replicates.front().points[i].t;
        if (t % criteria.align != 0) continue;
        double mean = 0.0;
        for (const auto& r : replicates) mean += r.points[i].s;
        mean /= static_cast<double>(replicates.size());
        double var = 0.0;
        for (const auto& r : replicates) {
            const double d = r.points[i].s - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / denom);
        grid_t.push_back(t);
        contained.push_back(std::abs(criteria.threshold - mean) <= sd);
    }

    // Longest contiguous aligned run whose containment rate meets the
    // confidence; earliest run breaks ties.
    std::optional<std::pair<int, int>> best;
    std::size_t best_len = 0;
    for (std::size_t i = 0; i < grid_t.size(); ++i) {
        int hits = 0;
        for (std::size_t j = i; j < grid_t.size(); ++j) {
            if (j > i && grid_t[j] - grid_t[j - 1] != criteria.align) break;
            if (contained[j]) ++hits;
            const std::size_t len = j - i + 1;
            const double rate = static_cast<double>(hits) / static_cast<double>(len);
            if (rate >= criteria.confidence && len > best_len) {
                best_len = len;
                best = {grid_t[i], grid_t[j]};
            }
        }
    }
    return best;
}

}  // namespace lorafuse
