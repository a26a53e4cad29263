#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lorafuse/adapters.hpp"
#include "lorafuse/numerics.hpp"

namespace lorafuse {

// Stack of equally sized feature planes, one per channel.
using Tensor = std::vector<Eigen::MatrixXd>;

// Geometry of the toy denoiser. Depth M down blocks halve the resolution,
// one mid block, M up blocks restore it, plus an output convolution.
// Every block carries a 3x3 convolution, a tanh, and (if listed in
// attention_blocks, default all) one linear attention-like projection that
// mixes feature rows and receives the conditioning embedding additively.
struct DenoiserSpec {
    int depth = 3;
    int base_channels = 8;
    int latent_channels = 4;
    int height = 32;
    int width = 32;
    int embed_dim = 8;
    std::vector<std::string> attention_blocks;  // empty = every block
    std::uint64_t seed = 0;

    void validate() const;
};

struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<Eigen::Matrix3d> k;  // [out * in_channels + in]
};

struct ProjLayer {
    std::string id;
    Eigen::MatrixXd p;     // row-mixing weights, dim x dim
    Eigen::MatrixXd cond;  // conditioning injection, dim x embed_dim
};

struct DenoiserBlock {
    std::string name;
    ConvLayer conv;
    std::optional<ProjLayer> proj;
};

struct DenoiserNet {
    DenoiserSpec spec;
    std::vector<DenoiserBlock> down;  // down1 .. downM
    DenoiserBlock mid;
    std::vector<DenoiserBlock> up;  // up1 .. upM (index j-1 holds up_j)
    ConvLayer out_conv;
};

// Static geometry of one block, shared by the forward pass and the MAC
// accounting so both count the same work.
struct BlockDims {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int res_h = 0;  // resolution the conv and projection run at
    int res_w = 0;
    int proj_dim = 0;  // 0 when the block has no projection layer
};

std::vector<BlockDims> block_dims(const DenoiserSpec& spec);
std::uint64_t block_macs(const BlockDims& dims, int embed_dim);

// MACs of one branch forward pass (convolutions and projections; biases,
// nonlinearities and resampling excluded).
std::uint64_t full_forward_macs(const DenoiserSpec& spec);
// Partial pass at skip index m: down blocks 1..m, up blocks m..1, output
// convolution; everything deeper is replaced by the cache retrieval.
std::uint64_t partial_forward_macs(const DenoiserSpec& spec, int skip_index);

// Valid skip indices are 1..M-1 (the retrieved feature is the output of up
// block m+1, so a deeper main branch must exist).
int max_skip_index(const DenoiserSpec& spec);

// LoRA targets: (projection layer id, row dimension) in block order.
std::vector<std::pair<std::string, int>> attention_targets(const DenoiserSpec& spec);

DenoiserNet init_net(const DenoiserSpec& spec);

std::uint64_t net_checksum(const DenoiserNet& net);

Eigen::VectorXd seeded_embedding(int dim, std::uint64_t seed, std::string_view label);

// Standard normal starting latent at the spec's extents.
LatentGrid seeded_latent(const DenoiserSpec& spec, std::uint64_t seed, std::string_view label);

enum class Provenance { full, partial };

struct NoisePrediction {
    LatentGrid grid;
    Provenance provenance = Provenance::full;
    std::uint64_t macs_used = 0;
};

// Features cached between steps, keyed by branch id then skip index.
struct FeatureCache {
    struct Entry {
        Tensor feature;
        int written_at = 0;
    };

    std::map<std::string, std::map<int, Entry>> entries;

    void write(const std::string& branch, int skip_index, Tensor feature, int written_at);
    bool has(const std::string& branch, int skip_index) const;
    // Throws CacheMissError when nothing was written for (branch, skip_index).
    const Entry& lookup(const std::string& branch, int skip_index) const;
    void clear();
};

struct ForwardOutput {
    NoisePrediction pred;
    // Output of up block m+1 for every valid skip index m, ready to cache.
    std::map<int, Tensor> cacheable;
};

// Full branch pass. adapter may be null (base weights); weight scales the
// adapter delta on every projection layer it targets.
ForwardOutput forward_full(const DenoiserNet& net, const LoraAdapter* adapter, double weight,
                           const LatentGrid& latent, const Eigen::VectorXd& embed, int t);

// Partial pass reusing the cached up-block-(m+1) output. Never recomputes
// the skipped blocks: a missing cache entry is an error.
NoisePrediction forward_partial(const DenoiserNet& net, const LoraAdapter* adapter, double weight,
                                const LatentGrid& latent, const Eigen::VectorXd& embed, int t,
                                const FeatureCache& cache, const std::string& branch,
                                int skip_index);

// latent - gamma(t) * pred.grid with gamma linear from 0.02 at t = 1 down
// to 0.002 at t = T.
double scheduler_gamma(int t, int total_steps);
LatentGrid scheduler_step(const LatentGrid& latent, const NoisePrediction& pred, int t,
                          int total_steps);

}  // namespace lorafuse
