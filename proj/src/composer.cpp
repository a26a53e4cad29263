#include "lorafuse/composer.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <utility>

#include "lorafuse/errors.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse {

CachePlan RunConfig::plan() const {
    if (cache_strategy == "none") return no_cache_plan(total_steps);
    if (cache_strategy == "uniform") return uniform_plan(total_steps, stride1);
    if (cache_strategy == "dynamic") return dynamic_plan(total_steps, stride1, stride2);
    throw ParameterError("unknown cache strategy: " + cache_strategy);
}

void RunConfig::validate() const {
    if (total_steps < 1) throw ParameterError("step count must be positive");
    if (skip_index < 1) throw ParameterError("skip index must be positive");
    if (tau < 1) throw ParameterError("switch interval must be positive");
    if (method == Method::kNaive) {
        if (!adapters.empty()) throw ParameterError("the bare pipeline takes no adapters");
    } else if (adapters.empty()) {
        throw ParameterError(method_tag(method) + " needs at least one adapter");
    }
    std::set<std::string> ids;
    for (const auto& a : adapters) {
        a.validate();
        if (!ids.insert(a.id).second) throw ParameterError("duplicate adapter id: " + a.id);
    }
}

std::vector<FrequencySeries> profile_all(const DenoiserNet& net, const RunConfig& config) {
    if (config.adapters.empty()) throw ParameterError("profiling needs at least one adapter");
    ProfileOptions opts;
    opts.total_steps = config.profile_steps > 0 ? config.profile_steps : config.total_steps;
    opts.cutoff_fraction = config.cutoff_fraction;
    opts.interval = config.interval;
    opts.guidance_scale = config.guidance_scale;
    opts.adapter_weight = config.adapter_weight;
    opts.seed = config.seed;
    std::vector<FrequencySeries> out;
    out.reserve(config.adapters.size());
    for (const auto& a : config.adapters) out.push_back(profile_adapter(net, &a, opts));
    return out;
}

Ordering ranking_from_series(const std::vector<FrequencySeries>& series) {
    std::vector<CategoryProfile> profiles;
    profiles.reserve(series.size());
    // Rank per adapter: the label is the id, so the partition can drive
    // a schedule over this exact roster.
    for (const auto& s : series)
        profiles.push_back({s.adapter_id, s.cutoff_fraction, s.interval, s.points});
    return rank_categories(profiles);
}

Partition profile_partition(const DenoiserNet& net, const RunConfig& config) {
    return make_partition(ranking_from_series(profile_all(net, config)));
}

namespace {

struct Branch {
    std::string id;
    const LoraAdapter* adapter = nullptr;
};

const StepEntry* find_entry(const StepRecord& rec, const std::string& id) {
    for (const auto& e : rec.entries)
        if (e.adapter_id == id) return &e;
    return nullptr;
}

ProjLayer* find_proj(DenoiserNet& net, const std::string& id) {
    for (auto& b : net.down)
        if (b.proj && b.proj->id == id) return &*b.proj;
    if (net.mid.proj && net.mid.proj->id == id) return &*net.mid.proj;
    for (auto& b : net.up)
        if (b.proj && b.proj->id == id) return &*b.proj;
    return nullptr;
}

double common_scale(const std::vector<LoraAdapter>& adapters) {
    const double scale = adapters.front().scale;
    for (const auto& a : adapters)
        if (a.scale != scale)
            throw ConstraintError("weight fusion requires a uniform adapter scale");
    return scale;
}

Eigen::MatrixXd gaussian_probe(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                               const std::string& label) {
    auto eng = make_engine(seed, label);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(eng);
    return m;
}

// Fold the roster into the net's projection weights once; the run then
// denoises on a single adapter-free branch.
DenoiserNet bake_merged_net(const DenoiserNet& net, const RunConfig& config) {
    DenoiserNet out = net;
    const auto& adapters = config.adapters;

    if (config.method == Method::kMergeGradient) {
        // Fusing a single adapter is the identity, so apply it directly
        // instead of round-tripping through a linear solve.
        if (adapters.size() == 1) {
            const LoraAdapter& a = adapters.front();
            for (const auto& l : a.layers) {
                ProjLayer* proj = find_proj(out, l.target);
                if (!proj) throw LookupError("adapter targets unknown layer " + l.target);
                proj->p = apply_delta(proj->p, a, l.target, config.adapter_weight);
            }
            return out;
        }
        for (const auto& l : adapters.front().layers) {
            ProjLayer* proj = find_proj(out, l.target);
            if (!proj) throw LookupError("adapter targets unknown layer " + l.target);
            std::vector<Eigen::MatrixXd> deltas;
            std::vector<Eigen::MatrixXd> probes;
            for (const auto& a : adapters) {
                const LoraLayer& al = a.layer(l.target);
                deltas.push_back((config.adapter_weight * a.scale) * (al.b * al.a));
                probes.push_back(gaussian_probe(proj->p.cols(), proj->p.cols(), config.seed,
                                                "fuse/" + l.target + "/" + a.id));
            }
            proj->p = gradient_fuse(deltas, probes, proj->p);
        }
        return out;
    }

    AdapterStack stack;
    stack.adapters = adapters;
    stack.weights.assign(adapters.size(), 1.0 / static_cast<double>(adapters.size()));
    const double scale = common_scale(adapters);
    const DeltaMap deltas = config.method == Method::kMerge ? merge_componentwise(stack)
                                                            : merge_elementwise(stack);
    const double coeff = config.adapter_weight * scale;
    for (const auto& [target, delta] : deltas) {
        ProjLayer* proj = find_proj(out, target);
        if (!proj) throw LookupError("adapter targets unknown layer " + target);
        if (delta.rows() != proj->p.rows() || delta.cols() != proj->p.cols())
            throw DimensionError("fused delta extents do not match the target layer");
        proj->p = proj->p + coeff * delta;
    }
    return out;
}

Partition resolve_partition(const DenoiserNet& net, const RunConfig& config,
                            const std::vector<std::string>& roster) {
    Partition part = config.partition ? *config.partition : profile_partition(net, config);
    if (part.ordering.empty()) {
        part.ordering = part.high_set;
        part.ordering.insert(part.ordering.end(), part.low_set.begin(), part.low_set.end());
    }
    std::set<std::string> members(part.high_set.begin(), part.high_set.end());
    for (const auto& id : part.low_set)
        if (!members.insert(id).second)
            throw ParameterError("partition places " + id + " in both sets");
    const std::set<std::string> ordered(part.ordering.begin(), part.ordering.end());
    const std::set<std::string> ids(roster.begin(), roster.end());
    if (members != ids || ordered != ids)
        throw LookupError("partition labels must match the adapter roster");
    return part;
}

std::vector<WeightTraceRow> dominance_weight_rows(const ScheduleTrace& trace) {
    std::vector<WeightTraceRow> rows;
    rows.reserve(trace.steps.size());
    for (const auto& rec : trace.steps) {
        const StepEntry* dom = find_entry(rec, rec.dominant_id);
        if (!dom) continue;
        double w_non = static_cast<double>(rec.entries.size()) /
                       (dom->weight + static_cast<double>(rec.entries.size()) - 1.0);
        for (const auto& e : rec.entries)
            if (e.adapter_id != rec.dominant_id) {
                w_non = e.weight;
                break;
            }
        rows.push_back({rec.step, rec.dominant_id, dom->weight, w_non});
    }
    return rows;
}

}  // namespace

ComposeResult run_compose(const DenoiserNet& net, const RunConfig& config) {
    config.validate();
    net.spec.validate();
    if (config.skip_index > max_skip_index(net.spec))
        throw ParameterError("skip index out of range for this net");
    const CachePlan plan = config.plan();

    std::vector<std::string> roster;
    roster.reserve(config.adapters.size());
    for (const auto& a : config.adapters) roster.push_back(a.id);

    ComposeResult result;
    DenoiserNet merged;
    const DenoiserNet* branch_net = &net;
    ScheduleTrace trace;
    switch (config.method) {
        case Method::kNaive:
            trace = single_branch_trace(config.method, "base", plan, config.skip_index);
            break;
        case Method::kMerge:
        case Method::kMergeElementwise:
        case Method::kMergeGradient:
            merged = bake_merged_net(net, config);
            branch_net = &merged;
            trace = single_branch_trace(config.method, "merged", plan, config.skip_index);
            break;
        case Method::kSwitch:
            trace = switch_trace(config.method, roster, config.tau, plan, config.skip_index);
            break;
        case Method::kSwitchA: {
            Partition part = resolve_partition(net, config, roster);
            trace = switch_trace(config.method, part.ordering, config.tau, plan,
                                 config.skip_index);
            result.partition = std::move(part);
            break;
        }
        case Method::kComposite:
            trace = composite_trace(roster, plan, config.skip_index);
            break;
        case Method::kCmlora: {
            Partition part = resolve_partition(net, config, roster);
            trace = cmlora_schedule(part, plan, config.skip_index, config.decay,
                                    config.w_dom_init);
            result.partition = std::move(part);
            break;
        }
    }

    // Branches iterate in roster order so the guidance reduction order
    // never depends on the schedule.
    std::vector<Branch> branches;
    if (config.method == Method::kNaive)
        branches.push_back({"base", nullptr});
    else if (is_merge_method(config.method))
        branches.push_back({"merged", nullptr});
    else
        for (const auto& a : config.adapters) branches.push_back({a.id, &a});

    const Eigen::VectorXd cond = seeded_embedding(net.spec.embed_dim, config.seed, "run/cond");
    const Eigen::VectorXd uncond = seeded_embedding(net.spec.embed_dim, config.seed, "run/uncond");
    LatentGrid latent = seeded_latent(net.spec, config.seed, "run/latent");

    FeatureCache cache;
    std::vector<FeatureObservation> observations;
    std::uint64_t shadow_macs = 0;

    for (int step = 1; step <= config.total_steps; ++step) {
        const StepRecord& rec = trace.steps[static_cast<std::size_t>(step - 1)];
        std::vector<LatentGrid> guided;
        std::vector<double> weights;
        bool observed_this_step = false;
        for (const Branch& branch : branches) {
            const StepEntry* entry = find_entry(rec, branch.id);
            if (!entry) continue;  // inactive switch branch
            NoisePrediction u;
            NoisePrediction c;
            if (entry->full_inference) {
                ForwardOutput fu = forward_full(*branch_net, branch.adapter,
                                                config.adapter_weight, latent, uncond, step - 1);
                ForwardOutput fc = forward_full(*branch_net, branch.adapter,
                                                config.adapter_weight, latent, cond, step - 1);
                for (auto& [m, feature] : fu.cacheable)
                    cache.write(branch.id + "/u", m, std::move(feature), step - 1);
                for (auto& [m, feature] : fc.cacheable)
                    cache.write(branch.id + "/c", m, std::move(feature), step - 1);
                u = std::move(fu.pred);
                c = std::move(fc.pred);
            } else {
                if (config.measure_similarity && !observed_this_step) {
                    // Shadow full recompute of the first cached branch,
                    // compared against the feature the step will reuse.
                    const FeatureCache::Entry& reused =
                        cache.lookup(branch.id + "/c", config.skip_index);
                    ForwardOutput shadow =
                        forward_full(*branch_net, branch.adapter, config.adapter_weight, latent,
                                     cond, step - 1);
                    observations.push_back({step - 1,
                                            std::move(shadow.cacheable.at(config.skip_index)),
                                            reused.feature, true});
                    shadow_macs += shadow.pred.macs_used;
                    observed_this_step = true;
                }
                u = forward_partial(*branch_net, branch.adapter, config.adapter_weight, latent,
                                    uncond, step - 1, cache, branch.id + "/u", config.skip_index);
                c = forward_partial(*branch_net, branch.adapter, config.adapter_weight, latent,
                                    cond, step - 1, cache, branch.id + "/c", config.skip_index);
            }
            guided.push_back(cfg_single(u.grid, c.grid, config.guidance_scale));
            weights.push_back(entry->weight);
        }
        NoisePrediction aggregate;
        aggregate.grid = collective_guidance(guided, weights);
        latent = scheduler_step(latent, aggregate, step, config.total_steps);
    }

    result.final_latent = std::move(latent);
    result.report = count_macs(net.spec, trace, plan);
    result.report.similarity_measured = config.measure_similarity;
    result.report.shadow_macs = shadow_macs;
    if (config.method == Method::kCmlora) result.weight_rows = dominance_weight_rows(trace);
    if (config.measure_similarity && !observations.empty())
        result.similarity = build_similarity_series(observations);
    result.trace = std::move(trace);
    return result;
}

}  // namespace lorafuse
