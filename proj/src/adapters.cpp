#include "lorafuse/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <set>

#include <json.hpp>

#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse {

void LoraAdapter::validate() const {
    if (id.empty()) throw ParameterError("adapter id must be non-empty");
    if (rank < 1) throw RankError("adapter rank must be at least one");
    if (!std::isfinite(scale)) throw ParameterError("adapter scale must be finite");
    std::set<std::string> seen;
    for (const auto& l : layers) {
        if (!seen.insert(l.target).second)
            throw ParameterError("duplicate adapter layer target: " + l.target);
        if (l.b.cols() != rank || l.a.rows() != rank)
            throw RankError("layer factor inner extent must equal the adapter rank");
        if (rank > std::min(l.b.rows(), l.a.cols()))
            throw RankError("rank exceeds min(m, n) for layer " + l.target);
        if (!l.b.allFinite() || !l.a.allFinite())
            throw ParameterError("layer factors must be finite");
    }
}

const LoraLayer* LoraAdapter::find_layer(const std::string& target) const {
    for (const auto& l : layers)
        if (l.target == target) return &l;
    return nullptr;
}

const LoraLayer& LoraAdapter::layer(const std::string& target) const {
    const LoraLayer* l = find_layer(target);
    if (!l) throw LookupError("adapter " + id + " has no layer " + target);
    return *l;
}

void AdapterStack::validate() const {
    if (adapters.empty()) throw ParameterError("adapter stack must be non-empty");
    if (adapters.size() != weights.size())
        throw ParameterError("adapter stack weight count mismatch");
    for (double w : weights)
        if (!std::isfinite(w)) throw ParameterError("adapter stack weights must be finite");
    for (const auto& a : adapters) a.validate();
}

Eigen::MatrixXd apply_delta(const Eigen::MatrixXd& w, const LoraAdapter& adapter,
                            const std::string& target, double weight) {
    const LoraLayer& l = adapter.layer(target);
    if (l.b.rows() != w.rows() || l.a.cols() != w.cols())
        throw DimensionError("delta extents do not match the target weight");
    return w + (weight * adapter.scale) * (l.b * l.a);
}

namespace {

// All adapters must agree on the set of targets and per-target extents.
void check_layer_sets(const AdapterStack& stack) {
    const LoraAdapter& first = stack.adapters.front();
    for (const auto& other : stack.adapters) {
        if (other.layers.size() != first.layers.size())
            throw ShapeError("adapters disagree on their layer sets");
        for (const auto& l : first.layers) {
            const LoraLayer* ol = other.find_layer(l.target);
            if (!ol) throw ShapeError("adapter " + other.id + " misses layer " + l.target);
            if (ol->b.rows() != l.b.rows() || ol->a.cols() != l.a.cols())
                throw ShapeError("adapters disagree on extents of layer " + l.target);
        }
    }
}

}  // namespace

DeltaMap merge_componentwise(const AdapterStack& stack) {
    stack.validate();
    double sum = 0.0;
    for (double w : stack.weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConstraintError("componentwise merge weights must sum to one");
    check_layer_sets(stack);

    DeltaMap out;
    for (const auto& l : stack.adapters.front().layers) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(l.b.rows(), l.a.cols());
        for (std::size_t i = 0; i < stack.adapters.size(); ++i) {
            const LoraLayer& li = stack.adapters[i].layer(l.target);
            acc += stack.weights[i] * (li.b * li.a);
        }
        out.emplace(l.target, std::move(acc));
    }
    return out;
}

DeltaMap merge_elementwise(const AdapterStack& stack) {
    stack.validate();
    for (const auto& a : stack.adapters)
        if (a.rank != stack.adapters.front().rank)
            throw RankError("elementwise merge requires equal ranks");
    check_layer_sets(stack);

    DeltaMap out;
    for (const auto& l : stack.adapters.front().layers) {
        Eigen::MatrixXd bsum = Eigen::MatrixXd::Zero(l.b.rows(), l.b.cols());
        Eigen::MatrixXd asum = Eigen::MatrixXd::Zero(l.a.rows(), l.a.cols());
        for (std::size_t i = 0; i < stack.adapters.size(); ++i) {
            const LoraLayer& li = stack.adapters[i].layer(l.target);
            bsum += stack.weights[i] * li.b;
            asum += stack.weights[i] * li.a;
        }
        out.emplace(l.target, bsum * asum);
    }
    return out;
}

Eigen::MatrixXd gradient_fuse(const std::vector<Eigen::MatrixXd>& deltas,
                              const std::vector<Eigen::MatrixXd>& inputs,
                              const Eigen::MatrixXd& w0, const GradientFuseOptions& opts) {
    if (deltas.empty() || deltas.size() != inputs.size())
        throw ParameterError("gradient fusion needs one input block per delta");
    const Eigen::Index n = w0.cols();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(w0.rows(), n);
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (deltas[i].rows() != w0.rows() || deltas[i].cols() != w0.cols())
            throw DimensionError("delta extents must match the base weight");
        if (inputs[i].rows() != n)
            throw DimensionError("input rows must equal the base weight columns");
        const Eigen::MatrixXd xxt = inputs[i] * inputs[i].transpose();
        gram += xxt;
        target += (w0 + deltas[i]) * xxt;
    }
    if (opts.ridge) {
        gram += opts.ridge_eps * Eigen::MatrixXd::Identity(n, n);
        target += opts.ridge_eps * w0;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (!lu.isInvertible())
        throw SingularityError("gradient fusion gram matrix is singular");
    // W gram = target, gram symmetric.
    return lu.solve(target.transpose()).transpose();
}

std::map<std::string, Eigen::MatrixXd> merge_gradient_fusion(
    const AdapterStack& stack,
    const std::map<std::string, std::vector<Eigen::MatrixXd>>& inputs_per_target,
    const std::map<std::string, Eigen::MatrixXd>& w0_per_target,
    const GradientFuseOptions& opts) {
    stack.validate();
    check_layer_sets(stack);
    std::map<std::string, Eigen::MatrixXd> out;
    for (const auto& [target, w0] : w0_per_target) {
        const auto it = inputs_per_target.find(target);
        if (it == inputs_per_target.end())
            throw LookupError("no fusion inputs for target " + target);
        if (it->second.size() != stack.adapters.size())
            throw ParameterError("fusion inputs must cover every adapter");
        std::vector<Eigen::MatrixXd> deltas;
        deltas.reserve(stack.adapters.size());
        for (const auto& a : stack.adapters) {
            const LoraLayer& l = a.layer(target);
            deltas.push_back(l.b * l.a);
        }
        out.emplace(target, gradient_fuse(deltas, it->second, w0, opts));
    }
    return out;
}

namespace {

constexpr double kSynthGain = 1.0;

// Unit-norm cosine mode with k cycles over dim samples.
Eigen::VectorXd cosine_mode(int dim, int k, double phase) {
    Eigen::VectorXd u(dim);
    double norm = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        for (int x = 0; x < dim; ++x)
            u(x) = std::cos(2.0 * std::numbers::pi * k * x / dim + phase);
        norm = u.norm();
        if (norm > 1e-6) break;
        phase += std::numbers::pi / 4.0;  // degenerate Nyquist phase, shift
    }
    return u / norm;
}

}  // namespace

LoraAdapter synth_adapter(const std::string& category, double spectral_bias, std::uint64_t seed,
                          const std::vector<std::pair<std::string, int>>& targets, int rank,
                          double scale) {
    if (!(spectral_bias >= 0.0 && spectral_bias <= 1.0))
        throw ParameterError("spectral bias must lie in [0, 1]");
    if (rank < 1) throw RankError("synthetic adapter rank must be at least one");
    if (targets.empty()) throw ParameterError("synthetic adapter needs at least one target");

    LoraAdapter adapter;
    adapter.id = category;
    adapter.category = category;
    adapter.rank = rank;
    adapter.scale = scale;
    adapter.seed = seed;
    for (const auto& [target, dim] : targets) {
        if (rank > dim) throw RankError("rank exceeds target extent for " + target);
        // Streams key on (seed, target) only: same-seed adapters share mode
        // phases and jitter, so the bias is their sole spectral difference.
        auto eng = make_engine(seed, "adapter/" + target);
        std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
        std::uniform_real_distribution<double> jitter_dist(0.9, 1.1);

        LoraLayer layer;
        layer.target = target;
        layer.b.resize(dim, rank);
        layer.a.resize(rank, dim);
        for (int i = 0; i < rank; ++i) {
            const double frac = static_cast<double>(i + 1) / rank;
            int k = static_cast<int>(std::llround(frac * dim / 2.0));
            k = std::clamp(k, 1, dim / 2);
            const double phase = phase_dist(eng);
            const double jitter = jitter_dist(eng);
            const double gain =
                kSynthGain * ((1.0 - spectral_bias) * (1.0 - frac) + spectral_bias * frac) * jitter;
            const Eigen::VectorXd mode = cosine_mode(dim, k, phase);
            layer.b.col(i) = gain * mode;
            layer.a.row(i) = mode.transpose();
        }
        adapter.layers.push_back(std::move(layer));
    }
    adapter.validate();
    return adapter;
}

std::vector<unsigned char> save_adapter(const LoraAdapter& adapter) {
    adapter.validate();
    nlohmann::ordered_json header;
    header["id"] = adapter.id;
    header["category"] = adapter.category;
    header["rank"] = adapter.rank;
    header["scale"] = adapter.scale;
    header["seed"] = adapter.seed;
    header["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : adapter.layers)
        header["layers"].push_back({{"target", l.target},
                                    {"m", static_cast<int>(l.b.rows())},
                                    {"n", static_cast<int>(l.a.cols())}});
    const std::string header_str = header.dump();

    std::vector<unsigned char> bytes;
    const char magic[] = "LFAD1\n";
    bytes.insert(bytes.end(), magic, magic + 6);
    append_le64(bytes, header_str.size());
    bytes.insert(bytes.end(), header_str.begin(), header_str.end());
    for (const auto& l : adapter.layers) {
        for (Eigen::Index r = 0; r < l.b.rows(); ++r)
            for (Eigen::Index c = 0; c < l.b.cols(); ++c) append_le_double(bytes, l.b(r, c));
        for (Eigen::Index r = 0; r < l.a.rows(); ++r)
            for (Eigen::Index c = 0; c < l.a.cols(); ++c) append_le_double(bytes, l.a(r, c));
    }
    return bytes;
}

LoraAdapter load_adapter(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 14 || std::memcmp(bytes.data(), "LFAD1\n", 6) != 0)
        throw IoError("not an LFAD1 adapter container");
    const std::uint64_t header_len = read_le64(bytes.data() + 6);
    if (bytes.size() < 14 + header_len) throw IoError("truncated adapter header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 14,
                                       bytes.begin() + 14 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad adapter header: ") + e.what());
    }

    LoraAdapter adapter;
    try {
        adapter.id = header.at("id").get<std::string>();
        adapter.category = header.at("category").get<std::string>();
        adapter.rank = header.at("rank").get<int>();
        adapter.scale = header.at("scale").get<double>();
        adapter.seed = header.at("seed").get<std::uint64_t>();
        std::size_t off = 14 + header_len;
        for (const auto& lj : header.at("layers")) {
            LoraLayer l;
            l.target = lj.at("target").get<std::string>();
            const int m = lj.at("m").get<int>();
            const int n = lj.at("n").get<int>();
            if (m < 1 || n < 1) throw IoError("bad layer extents in adapter header");
            const std::size_t need = static_cast<std::size_t>(m + n) * adapter.rank * 8;
            if (bytes.size() < off + need) throw IoError("truncated adapter payload");
            l.b.resize(m, adapter.rank);
            l.a.resize(adapter.rank, n);
            for (Eigen::Index r = 0; r < l.b.rows(); ++r)
                for (Eigen::Index c = 0; c < l.b.cols(); ++c, off += 8)
                    l.b(r, c) = read_le_double(bytes.data() + off);
            for (Eigen::Index r = 0; r < l.a.rows(); ++r)
                for (Eigen::Index c = 0; c < l.a.cols(); ++c, off += 8)
                    l.a(r, c) = read_le_double(bytes.data() + off);
            adapter.layers.push_back(std::move(l));
        }
        if (off != bytes.size()) throw IoError("trailing bytes after adapter payload");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad adapter header: ") + e.what());
    }
    adapter.validate();
    return adapter;
}

void save_adapter_file(const LoraAdapter& adapter, const std::string& path) {
    write_file_bytes(path, save_adapter(adapter));
}

LoraAdapter load_adapter_file(const std::string& path) {
    return load_adapter(read_file_bytes(path));
}

}  // namespace lorafuse
