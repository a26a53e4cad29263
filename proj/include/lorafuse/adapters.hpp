#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lorafuse {

// One low-rank update pair targeting a named square or rectangular weight.
// The injected delta for the layer is b * a (m x r times r x n).
struct LoraLayer {
    std::string target;
    Eigen::MatrixXd b;
    Eigen::MatrixXd a;
};

struct LoraAdapter {
    std::string id;
    std::string category;
    int rank = 0;
    double scale = 1.4;
    std::uint64_t seed = 0;
    std::vector<LoraLayer> layers;

    void validate() const;
    const LoraLayer* find_layer(const std::string& target) const;
    const LoraLayer& layer(const std::string& target) const;  // throws LookupError
};

// A weighted set of adapters feeding one composition step.
struct AdapterStack {
    std::vector<LoraAdapter> adapters;
    std::vector<double> weights;

    void validate() const;
};

// W + weight * adapter.scale * B * A for the named layer.
Eigen::MatrixXd apply_delta(const Eigen::MatrixXd& w, const LoraAdapter& adapter,
                            const std::string& target, double weight);

// Per-layer fused deltas, keyed by target id.
using DeltaMap = std::map<std::string, Eigen::MatrixXd>;

// delta_l = sum_i w_i * B_i A_i; weights must sum to one within 1e-9.
DeltaMap merge_componentwise(const AdapterStack& stack);

// delta_l = (sum_i w_i B_i)(sum_i w_i A_i); all ranks must agree.
DeltaMap merge_elementwise(const AdapterStack& stack);

struct GradientFuseOptions {
    bool ridge = false;
    double ridge_eps = 1e-8;
};

// Closed-form least squares fusion for one weight matrix:
//   W = argmin sum_i ||(W0 + D_i) X_i - W X_i||_F^2
//     = (sum_i (W0 + D_i) X_i X_i^T) (sum_i X_i X_i^T)^{-1}.
// With the ridge enabled the objective gains eps * ||W - W0||_F^2, so an
// all-zero input set degrades to W0 instead of a singularity error.
Eigen::MatrixXd gradient_fuse(const std::vector<Eigen::MatrixXd>& deltas,
                              const std::vector<Eigen::MatrixXd>& inputs,
                              const Eigen::MatrixXd& w0,
                              const GradientFuseOptions& opts = {});

// Stack-level wrapper: fuses every shared target; inputs are indexed per
// adapter and shared across targets of the same shape is the caller's
// responsibility, so this takes per-adapter, per-target inputs.
std::map<std::string, Eigen::MatrixXd> merge_gradient_fusion(
    const AdapterStack& stack,
    const std::map<std::string, std::vector<Eigen::MatrixXd>>& inputs_per_target,
    const std::map<std::string, Eigen::MatrixXd>& w0_per_target,
    const GradientFuseOptions& opts = {});

// Deterministic synthetic adapter. Each target receives a delta
// sum_i a_i * u_i u_i^T built from seeded-phase cosine modes whose
// frequencies sweep low to high; the gains interpolate between favoring
// the low modes (spectral_bias 0, smoothing action) and the high modes
// (spectral_bias 1, edge-enhancing action).
LoraAdapter synth_adapter(const std::string& category, double spectral_bias, std::uint64_t seed,
                          const std::vector<std::pair<std::string, int>>& targets, int rank,
                          double scale);

// Container format "LFAD1": magic + '\n', little-endian u64 header length,
// JSON header (id, category, rank, scale, seed, layer dims), then row-major
// little-endian float64 payload, B then A per layer in order.
std::vector<unsigned char> save_adapter(const LoraAdapter& adapter);
LoraAdapter load_adapter(const std::vector<unsigned char>& bytes);
void save_adapter_file(const LoraAdapter& adapter, const std::string& path);
LoraAdapter load_adapter_file(const std::string& path);

}  // namespace lorafuse
