#include "lorafuse/profiler.hpp"

#include <algorithm>
#include <json.hpp>
#include <ostream>
#include <random>
#include <set>

#include "lorafuse/errors.hpp"
#include "lorafuse/guidance.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/numerics.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse {

std::vector<std::string> Ordering::labels() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.label);
    return out;
}

int default_interval(int total_steps) {
    return std::max(1, total_steps / 10);
}

FrequencySeries profile_adapter(const DenoiserNet& net, const LoraAdapter* adapter,
                                const ProfileOptions& opts) {
    const int total = opts.total_steps;
    const int z = opts.interval > 0 ? opts.interval : default_interval(total);
    if (total <= z)
        throw ParameterError("profiling run must be longer than the comparison interval");

    const Eigen::VectorXd cond = seeded_embedding(net.spec.embed_dim, opts.seed, "profile/cond");
    const Eigen::VectorXd uncond =
        seeded_embedding(net.spec.embed_dim, opts.seed, "profile/uncond");
    LatentGrid latent = seeded_latent(net.spec, opts.seed, "profile/latent");

    // State i is the latent after update i + 1; only the channel means are
    // kept for differencing.
    std::vector<Eigen::MatrixXd> means;
    means.reserve(static_cast<std::size_t>(total));
    for (int step = 1; step <= total; ++step) {
        const ForwardOutput u =
            forward_full(net, adapter, opts.adapter_weight, latent, uncond, step - 1);
        const ForwardOutput c =
            forward_full(net, adapter, opts.adapter_weight, latent, cond, step - 1);
        NoisePrediction guided;
        guided.grid = cfg_single(u.pred.grid, c.pred.grid, opts.guidance_scale);
        latent = scheduler_step(latent, guided, step, total);
        means.push_back(channel_mean(latent));
    }

    FrequencySeries series;
    series.adapter_id = adapter ? adapter->id : "base";
    series.category = adapter ? adapter->category : "base";
    series.cutoff_fraction = opts.cutoff_fraction;
    series.interval = z;
    for (int t = z; t < total; ++t) {
        const HighFreqAmplitude d =
            delta_high_freq(means[static_cast<std::size_t>(t)],
                            means[static_cast<std::size_t>(t - z)], opts.cutoff_fraction);
        series.points.push_back({t, d.total});
    }
    return series;
}

CategoryProfile average_category(const std::vector<FrequencySeries>& members) {
    if (members.empty())
        throw ParameterError("category average needs at least one member series");
    const FrequencySeries& head = members.front();
    for (const auto& s : members) {
        if (s.category != head.category)
            throw AlignmentError("category average mixes labels " + head.category + " and " +
                                 s.category);
        if (s.cutoff_fraction != head.cutoff_fraction || s.interval != head.interval ||
            s.points.size() != head.points.size())
            throw AlignmentError("member series parameters are not aligned");
        for (std::size_t i = 0; i < s.points.size(); ++i)
            if (s.points[i].t != head.points[i].t)
                throw AlignmentError("member series timesteps are not aligned");
    }

    CategoryProfile profile;
    profile.category = head.category;
    profile.cutoff_fraction = head.cutoff_fraction;
    profile.interval = head.interval;
    profile.points.resize(head.points.size());
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t i = 0; i < head.points.size(); ++i) {
        double sum = 0.0;
        for (const auto& s : members) sum += s.points[i].delta_h_total;
        profile.points[i] = {head.points[i].t, sum * inv};
    }
    return profile;
}

PointWindow early_window(std::size_t point_count) {
    if (point_count == 0) throw ParameterError("cannot take a window of an empty series");
    return {0, std::max<std::size_t>(1, point_count / 4)};
}

Ordering rank_categories(const std::vector<CategoryProfile>& profiles,
                         const PointWindow& window) {
    if (profiles.empty()) throw ParameterError("ranking needs at least one profile");
    if (window.begin >= window.end) throw ParameterError("ranking window is empty");

    std::set<std::string> seen;
    Ordering ordering;
    for (const auto& p : profiles) {
        if (!seen.insert(p.category).second)
            throw ParameterError("duplicate category label " + p.category);
        if (window.end > p.points.size())
            throw AlignmentError("ranking window extends past the recorded points");
        double sum = 0.0;
        for (std::size_t i = window.begin; i < window.end; ++i)
            sum += p.points[i].delta_h_total;
        ordering.entries.push_back(
            {p.category, sum / static_cast<double>(window.end - window.begin)});
    }
    std::sort(ordering.entries.begin(), ordering.entries.end(),
              [](const RankedCategory& a, const RankedCategory& b) {
                  if (a.early_mean != b.early_mean) return a.early_mean > b.early_mean;
                  return a.label < b.label;
              });
    return ordering;
}

Ordering rank_categories(const std::vector<CategoryProfile>& profiles) {
    if (profiles.empty()) throw ParameterError("ranking needs at least one profile");
    for (const auto& p : profiles)
        if (p.points.size() != profiles.front().points.size())
            throw AlignmentError("profiles disagree on the recorded point count");
    return rank_categories(profiles, early_window(profiles.front().points.size()));
}

Partition make_partition(const Ordering& ordering) {
    if (ordering.entries.empty())
        throw ParameterError("partition needs at least one ranked label");
    Partition part;
    part.ordering = ordering.labels();
    if (part.ordering.size() == 1) {
        part.high_set = part.ordering;
        return part;
    }
    part.high_set.assign(part.ordering.begin(), part.ordering.end() - 1);
    part.low_set.push_back(part.ordering.back());
    return part;
}

void write_series_csv(std::ostream& os, const std::vector<FrequencySeries>& series) {
    os << "adapter_id,category,t,delta_h_total\n";
    for (const auto& s : series)
        for (const auto& p : s.points)
            os << s.adapter_id << ',' << s.category << ',' << p.t << ','
               << format_double(p.delta_h_total) << '\n';
}

std::string partition_json(const Partition& partition) {
    nlohmann::ordered_json j;
    j["H"] = partition.high_set;
    j["L"] = partition.low_set;
    j["ordering"] = partition.ordering;
    return j.dump(2) + "\n";
}

}  // namespace lorafuse
