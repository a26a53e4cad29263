#include "lorafuse/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse {

void DenoiserSpec::validate() const {
    if (depth < 2) throw ParameterError("denoiser depth must be at least two");
    if (base_channels < 1 || latent_channels < 1 || embed_dim < 1)
        throw ParameterError("denoiser channel and embedding counts must be positive");
    if (!is_power_of_two(height) || !is_power_of_two(width))
        throw DimensionError("denoiser extents must be powers of two");
    const int div = 1 << depth;
    if (height % div != 0 || width % div != 0)
        throw DimensionError("denoiser extents must be divisible by 2^depth");
}

namespace {

int channels_at(const DenoiserSpec& spec, int stage) {
    // stage 0 = latent, stage j = output of down block j.
    return stage == 0 ? spec.latent_channels : spec.base_channels << (stage - 1);
}

bool block_has_proj(const DenoiserSpec& spec, const std::string& name) {
    if (spec.attention_blocks.empty()) return true;
    return std::find(spec.attention_blocks.begin(), spec.attention_blocks.end(), name) !=
           spec.attention_blocks.end();
}

}  // namespace

std::vector<BlockDims> block_dims(const DenoiserSpec& spec) {
    spec.validate();
    std::vector<BlockDims> dims;
    const int m = spec.depth;
    for (int j = 1; j <= m; ++j) {
        BlockDims d;
        d.name = "down" + std::to_string(j);
        d.in_channels = channels_at(spec, j - 1);
        d.out_channels = channels_at(spec, j);
        d.res_h = spec.height >> (j - 1);
        d.res_w = spec.width >> (j - 1);
        d.proj_dim = block_has_proj(spec, d.name) ? d.res_h : 0;
        dims.push_back(d);
    }
    {
        BlockDims d;
        d.name = "mid";
        d.in_channels = channels_at(spec, m);
        d.out_channels = channels_at(spec, m);
        d.res_h = spec.height >> m;
        d.res_w = spec.width >> m;
        d.proj_dim = block_has_proj(spec, d.name) ? d.res_h : 0;
        dims.push_back(d);
    }
    for (int j = m; j >= 1; --j) {
        BlockDims d;
        d.name = "up" + std::to_string(j);
        d.in_channels = 2 * channels_at(spec, j);  // skip + main concat
        d.out_channels = channels_at(spec, j - 1);
        d.res_h = spec.height >> j;
        d.res_w = spec.width >> j;
        d.proj_dim = block_has_proj(spec, d.name) ? d.res_h : 0;
        dims.push_back(d);
    }
    {
        BlockDims d;
        d.name = "out";
        d.in_channels = spec.latent_channels;
        d.out_channels = spec.latent_channels;
        d.res_h = spec.height;
        d.res_w = spec.width;
        d.proj_dim = 0;
        dims.push_back(d);
    }
    return dims;
}

std::uint64_t block_macs(const BlockDims& dims, int embed_dim) {
    const auto h = static_cast<std::uint64_t>(dims.res_h);
    const auto w = static_cast<std::uint64_t>(dims.res_w);
    std::uint64_t macs = static_cast<std::uint64_t>(dims.in_channels) *
                         static_cast<std::uint64_t>(dims.out_channels) * 9u * h * w;
    if (dims.proj_dim > 0) {
        const auto r = static_cast<std::uint64_t>(dims.proj_dim);
        macs += static_cast<std::uint64_t>(dims.out_channels) * r * r * w;
        macs += r * static_cast<std::uint64_t>(embed_dim);
    }
    return macs;
}

namespace {

std::map<std::string, std::uint64_t> block_cost_table(const DenoiserSpec& spec) {
    std::map<std::string, std::uint64_t> table;
    for (const auto& d : block_dims(spec)) table[d.name] = block_macs(d, spec.embed_dim);
    return table;
}

}  // namespace

std::uint64_t full_forward_macs(const DenoiserSpec& spec) {
    std::uint64_t total = 0;
    for (const auto& d : block_dims(spec)) total += block_macs(d, spec.embed_dim);
    return total;
}

int max_skip_index(const DenoiserSpec& spec) {
    return spec.depth - 1;
}

std::uint64_t partial_forward_macs(const DenoiserSpec& spec, int skip_index) {
    if (skip_index < 1 || skip_index > max_skip_index(spec))
        throw ParameterError("skip index out of range");
    const auto table = block_cost_table(spec);
    std::uint64_t total = table.at("out");
    for (int j = 1; j <= skip_index; ++j) {
        total += table.at("down" + std::to_string(j));
        total += table.at("up" + std::to_string(j));
    }
    return total;
}

std::vector<std::pair<std::string, int>> attention_targets(const DenoiserSpec& spec) {
    std::vector<std::pair<std::string, int>> targets;
    for (const auto& d : block_dims(spec))
        if (d.proj_dim > 0) targets.emplace_back(d.name + ".proj", d.proj_dim);
    return targets;
}

namespace {

ConvLayer init_conv(const DenoiserSpec& spec, const std::string& label, int cin, int cout) {
    ConvLayer conv;
    conv.in_channels = cin;
    conv.out_channels = cout;
    conv.k.resize(static_cast<std::size_t>(cin) * static_cast<std::size_t>(cout));
    auto eng = make_engine(spec.seed, "net/" + label);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(9.0 * cin));
    for (auto& kernel : conv.k)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) kernel(r, c) = dist(eng);
    return conv;
}

ProjLayer init_proj(const DenoiserSpec& spec, const std::string& block, int dim) {
    ProjLayer proj;
    proj.id = block + ".proj";
    auto eng = make_engine(spec.seed, "net/" + proj.id);
    std::normal_distribution<double> pdist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    proj.p.resize(dim, dim);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c) proj.p(r, c) = pdist(eng);
    std::normal_distribution<double> vdist(0.0, 1.0 / std::sqrt(static_cast<double>(spec.embed_dim)));
    proj.cond.resize(dim, spec.embed_dim);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < spec.embed_dim; ++c) proj.cond(r, c) = vdist(eng);
    return proj;
}

DenoiserBlock init_block(const DenoiserSpec& spec, const BlockDims& dims) {
    DenoiserBlock block;
    block.name = dims.name;
    block.conv = init_conv(spec, dims.name + ".conv", dims.in_channels, dims.out_channels);
    if (dims.proj_dim > 0) block.proj = init_proj(spec, dims.name, dims.proj_dim);
    return block;
}

}  // namespace

DenoiserNet init_net(const DenoiserSpec& spec) {
    spec.validate();
    DenoiserNet net;
    net.spec = spec;
    const auto dims = block_dims(spec);
    const int m = spec.depth;
    for (int j = 0; j < m; ++j) net.down.push_back(init_block(spec, dims[static_cast<std::size_t>(j)]));
    net.mid = init_block(spec, dims[static_cast<std::size_t>(m)]);
    net.up.resize(static_cast<std::size_t>(m));
    for (int idx = 0; idx < m; ++idx) {
        // dims lists upM..up1 after mid; up[j-1] holds up_j.
        const auto& d = dims[static_cast<std::size_t>(m + 1 + idx)];
        const int j = m - idx;
        net.up[static_cast<std::size_t>(j - 1)] = init_block(spec, d);
    }
    net.out_conv = init_conv(spec, "out.conv", spec.latent_channels, spec.latent_channels);
    return net;
}

namespace {

void checksum_conv(const ConvLayer& conv, std::uint64_t& h) {
    for (const auto& k : conv.k)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const double v = k(r, c);
                h = fnv1a_doubles(&v, 1, h);
            }
}

void checksum_block(const DenoiserBlock& block, std::uint64_t& h) {
    checksum_conv(block.conv, h);
    if (block.proj) {
        for (Eigen::Index r = 0; r < block.proj->p.rows(); ++r)
            for (Eigen::Index c = 0; c < block.proj->p.cols(); ++c) {
                const double v = block.proj->p(r, c);
                h = fnv1a_doubles(&v, 1, h);
            }
        for (Eigen::Index r = 0; r < block.proj->cond.rows(); ++r)
            for (Eigen::Index c = 0; c < block.proj->cond.cols(); ++c) {
                const double v = block.proj->cond(r, c);
                h = fnv1a_doubles(&v, 1, h);
            }
    }
}

}  // namespace

std::uint64_t net_checksum(const DenoiserNet& net) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& b : net.down) checksum_block(b, h);
    checksum_block(net.mid, h);
    for (auto it = net.up.rbegin(); it != net.up.rend(); ++it) checksum_block(*it, h);
    checksum_conv(net.out_conv, h);
    return h;
}

Eigen::VectorXd seeded_embedding(int dim, std::uint64_t seed, std::string_view label) {
    if (dim < 1) throw ParameterError("embedding dimension must be positive");
    auto eng = make_engine(seed, label);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd e(dim);
    for (int i = 0; i < dim; ++i) e(i) = dist(eng);
    return e;
}

LatentGrid seeded_latent(const DenoiserSpec& spec, std::uint64_t seed, std::string_view label) {
    spec.validate();
    auto eng = make_engine(seed, label);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<Eigen::MatrixXd> planes(static_cast<std::size_t>(spec.latent_channels));
    for (auto& plane : planes) {
        plane.resize(spec.height, spec.width);
        for (int r = 0; r < spec.height; ++r)
            for (int c = 0; c < spec.width; ++c) plane(r, c) = dist(eng);
    }
    return LatentGrid::from_planes(std::move(planes));
}

void FeatureCache::write(const std::string& branch, int skip_index, Tensor feature,
                         int written_at) {
    if (written_at < 0) throw ParameterError("cache write step must be non-negative");
    entries[branch][skip_index] = Entry{std::move(feature), written_at};
}

bool FeatureCache::has(const std::string& branch, int skip_index) const {
    const auto it = entries.find(branch);
    return it != entries.end() && it->second.count(skip_index) > 0;
}

const FeatureCache::Entry& FeatureCache::lookup(const std::string& branch, int skip_index) const {
    const auto it = entries.find(branch);
    if (it == entries.end())
        throw CacheMissError("no cached features for branch " + branch);
    const auto jt = it->second.find(skip_index);
    if (jt == it->second.end())
        throw CacheMissError("no cached feature at skip index " + std::to_string(skip_index) +
                             " for branch " + branch);
    return jt->second;
}

void FeatureCache::clear() {
    entries.clear();
}

namespace {

Tensor conv_apply(const ConvLayer& conv, const Tensor& in) {
    const auto h = in[0].rows();
    const auto w = in[0].cols();
    Tensor out(static_cast<std::size_t>(conv.out_channels), Eigen::MatrixXd::Zero(h, w));
    for (int o = 0; o < conv.out_channels; ++o) {
        auto& dst = out[static_cast<std::size_t>(o)];
        for (int i = 0; i < conv.in_channels; ++i) {
            const auto& src = in[static_cast<std::size_t>(i)];
            const auto& k = conv.k[static_cast<std::size_t>(o) * conv.in_channels + i];
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto rows = h - std::abs(dy);
                    const auto cols = w - std::abs(dx);
                    dst.block(std::max(0, -dy), std::max(0, -dx), rows, cols) +=
                        k(dy + 1, dx + 1) *
                        src.block(std::max(0, dy), std::max(0, dx), rows, cols);
                }
            }
        }
    }
    return out;
}

void tanh_inplace(Tensor& x) {
    for (auto& plane : x) plane = plane.array().tanh();
}

void proj_apply(const ProjLayer& proj, const LoraAdapter* adapter, double weight,
                const Eigen::VectorXd& embed, Tensor& x) {
    Eigen::MatrixXd p_eff = proj.p;
    if (adapter && adapter->find_layer(proj.id))
        p_eff = apply_delta(proj.p, *adapter, proj.id, weight);
    const Eigen::VectorXd inject = proj.cond * embed;
    for (auto& plane : x) {
        plane = p_eff * plane;
        plane.colwise() += inject;
    }
}

Tensor pool2(const Tensor& in) {
    const auto h = in[0].rows() / 2;
    const auto w = in[0].cols() / 2;
    Tensor out(in.size(), Eigen::MatrixXd(h, w));
    for (std::size_t c = 0; c < in.size(); ++c)
        for (Eigen::Index r = 0; r < h; ++r)
            for (Eigen::Index col = 0; col < w; ++col)
                out[c](r, col) = 0.25 * (in[c](2 * r, 2 * col) + in[c](2 * r + 1, 2 * col) +
                                         in[c](2 * r, 2 * col + 1) + in[c](2 * r + 1, 2 * col + 1));
    return out;
}

Tensor upsample2(const Tensor& in) {
    const auto h = in[0].rows() * 2;
    const auto w = in[0].cols() * 2;
    Tensor out(in.size(), Eigen::MatrixXd(h, w));
    for (std::size_t c = 0; c < in.size(); ++c)
        for (Eigen::Index r = 0; r < h; ++r)
            for (Eigen::Index col = 0; col < w; ++col) out[c](r, col) = in[c](r / 2, col / 2);
    return out;
}

Tensor concat(const Tensor& skip, const Tensor& main) {
    Tensor out;
    out.reserve(skip.size() + main.size());
    out.insert(out.end(), skip.begin(), skip.end());
    out.insert(out.end(), main.begin(), main.end());
    return out;
}

struct PathContext {
    const DenoiserNet& net;
    const LoraAdapter* adapter;
    double weight;
    const Eigen::VectorXd& embed;
    std::map<std::string, std::uint64_t> costs;
    std::uint64_t macs = 0;
};

// conv -> tanh -> proj; resampling is the caller's concern so that down and
// up blocks share one code path bit for bit.
Tensor block_body(PathContext& ctx, const DenoiserBlock& block, const Tensor& in) {
    Tensor x = conv_apply(block.conv, in);
    tanh_inplace(x);
    if (block.proj) proj_apply(*block.proj, ctx.adapter, ctx.weight, ctx.embed, x);
    ctx.macs += ctx.costs.at(block.name);
    return x;
}

Tensor down_block(PathContext& ctx, int j, const Tensor& in) {
    return pool2(block_body(ctx, ctx.net.down[static_cast<std::size_t>(j - 1)], in));
}

Tensor up_block(PathContext& ctx, int j, const Tensor& skip, const Tensor& main) {
    return upsample2(block_body(ctx, ctx.net.up[static_cast<std::size_t>(j - 1)], concat(skip, main)));
}

void check_forward_inputs(const DenoiserNet& net, const LoraAdapter* adapter,
                          const LatentGrid& latent, const Eigen::VectorXd& embed, int t) {
    if (latent.channels != net.spec.latent_channels || latent.height != net.spec.height ||
        latent.width != net.spec.width)
        throw DimensionError("latent extents do not match the net spec");
    if (embed.size() != net.spec.embed_dim)
        throw DimensionError("embedding dimension does not match the net spec");
    if (t < 0) throw ParameterError("forward step tag must be non-negative");
    if (adapter) {
        const auto targets = attention_targets(net.spec);
        for (const auto& layer : adapter->layers) {
            const bool known = std::any_of(targets.begin(), targets.end(),
                                           [&](const auto& p) { return p.first == layer.target; });
            if (!known)
                throw LookupError("adapter targets " + layer.target +
                                  " which is not an attention layer of this net");
        }
    }
}

NoisePrediction finish_prediction(PathContext& ctx, const Tensor& x, Provenance provenance) {
    Tensor planes = conv_apply(ctx.net.out_conv, x);
    ctx.macs += ctx.costs.at("out");
    NoisePrediction pred;
    pred.grid = LatentGrid::from_planes(std::move(planes));
    pred.provenance = provenance;
    pred.macs_used = ctx.macs;
    return pred;
}

}  // namespace

ForwardOutput forward_full(const DenoiserNet& net, const LoraAdapter* adapter, double weight,
                           const LatentGrid& latent, const Eigen::VectorXd& embed, int t) {
    check_forward_inputs(net, adapter, latent, embed, t);
    PathContext ctx{net, adapter, weight, embed, block_cost_table(net.spec), 0};
    const int m = net.spec.depth;

    std::vector<Tensor> skips(static_cast<std::size_t>(m + 1));
    Tensor x = latent.data;
    for (int j = 1; j <= m; ++j) {
        x = down_block(ctx, j, x);
        skips[static_cast<std::size_t>(j)] = x;
    }
    x = block_body(ctx, net.mid, x);

    ForwardOutput out;
    for (int j = m; j >= 1; --j) {
        x = up_block(ctx, j, skips[static_cast<std::size_t>(j)], x);
        // x is now the output of up block j; it feeds skip index j - 1.
        if (j >= 2) out.cacheable[j - 1] = x;
    }
    out.pred = finish_prediction(ctx, x, Provenance::full);
    return out;
}

NoisePrediction forward_partial(const DenoiserNet& net, const LoraAdapter* adapter, double weight,
                                const LatentGrid& latent, const Eigen::VectorXd& embed, int t,
                                const FeatureCache& cache, const std::string& branch,
                                int skip_index) {
    check_forward_inputs(net, adapter, latent, embed, t);
    if (skip_index < 1 || skip_index > max_skip_index(net.spec))
        throw ParameterError("skip index out of range");
    const FeatureCache::Entry& entry = cache.lookup(branch, skip_index);

    const int ch = channels_at(net.spec, skip_index);
    const int res_h = net.spec.height >> skip_index;
    const int res_w = net.spec.width >> skip_index;
    if (static_cast<int>(entry.feature.size()) != ch || entry.feature.empty() ||
        entry.feature[0].rows() != res_h || entry.feature[0].cols() != res_w)
        throw DimensionError("cached feature extents do not match up block " +
                             std::to_string(skip_index + 1));

    PathContext ctx{net, adapter, weight, embed, block_cost_table(net.spec), 0};
    std::vector<Tensor> skips(static_cast<std::size_t>(skip_index + 1));
    Tensor x = latent.data;
    for (int j = 1; j <= skip_index; ++j) {
        x = down_block(ctx, j, x);
        skips[static_cast<std::size_t>(j)] = x;
    }
    x = entry.feature;
    for (int j = skip_index; j >= 1; --j)
        x = up_block(ctx, j, skips[static_cast<std::size_t>(j)], x);
    return finish_prediction(ctx, x, Provenance::partial);
}

double scheduler_gamma(int t, int total_steps) {
    if (total_steps < 1) throw ParameterError("scheduler needs at least one step");
    if (t < 1 || t > total_steps) throw ParameterError("scheduler step out of range");
    constexpr double gamma_first = 0.02;
    constexpr double gamma_last = 0.002;
    // Pin both documented endpoints exactly; interpolation only between them.
    if (t == 1) return gamma_first;
    if (t == total_steps) return gamma_last;
    return gamma_first +
           (gamma_last - gamma_first) * static_cast<double>(t - 1) /
               static_cast<double>(total_steps - 1);
}

LatentGrid scheduler_step(const LatentGrid& latent, const NoisePrediction& pred, int t,
                          int total_steps) {
    if (!latent.same_shape(pred.grid))
        throw DimensionError("prediction extents do not match the latent");
    const double gamma = scheduler_gamma(t, total_steps);
    LatentGrid out = latent;
    for (int c = 0; c < out.channels; ++c)
        out.data[static_cast<std::size_t>(c)] -= gamma * pred.grid.data[static_cast<std::size_t>(c)];
    return out;
}

}  // namespace lorafuse
