#include "lorafuse/guidance.hpp"

#include <cmath>
#include <ostream>

#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"

namespace lorafuse {

Eigen::MatrixXd cfg_single(const Eigen::MatrixXd& uncond, const Eigen::MatrixXd& cond, double s) {
    if (uncond.rows() != cond.rows() || uncond.cols() != cond.cols())
        throw DimensionError("guidance operands must share extents");
    return (1.0 - s) * uncond + s * cond;
}

LatentGrid cfg_single(const LatentGrid& uncond, const LatentGrid& cond, double s) {
    if (!uncond.same_shape(cond)) throw DimensionError("guidance operands must share extents");
    LatentGrid out = uncond;
    for (int c = 0; c < out.channels; ++c)
        out.data[static_cast<std::size_t>(c)] =
            cfg_single(uncond.data[static_cast<std::size_t>(c)],
                       cond.data[static_cast<std::size_t>(c)], s);
    return out;
}

LatentGrid collective_guidance(const std::vector<LatentGrid>& grids,
                               const std::vector<double>& weights) {
    if (grids.empty()) throw ParameterError("collective guidance needs at least one grid");
    if (grids.size() != weights.size())
        throw ParameterError("collective guidance weight count mismatch");
    for (const auto& g : grids)
        if (!g.same_shape(grids.front()))
            throw DimensionError("collective guidance grids must share extents");

    const double inv_n = 1.0 / static_cast<double>(grids.size());
    LatentGrid out = LatentGrid::zeros(grids[0].channels, grids[0].height, grids[0].width);
    for (int c = 0; c < out.channels; ++c) {
        auto& plane = out.data[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < grids.size(); ++i)
            plane += weights[i] * grids[i].data[static_cast<std::size_t>(c)];
        plane *= inv_n;
    }
    return out;
}

DominantSchedule DominantSchedule::start(int n, bool decay, double w_dom_init) {
    if (n < 1) throw ParameterError("dominant schedule needs at least one adapter");
    DominantSchedule s;
    s.n = n;
    s.turn = 0;
    s.decay = decay;
    s.w_dom = w_dom_init >= 0.0 ? w_dom_init : static_cast<double>(n) - 0.5;
    return s;
}

void DominantSchedule::advance_turn() {
    turn += 1;
    if (decay) w_dom -= std::pow(0.5, turn);
}

double DominantSchedule::w_non() const {
    return static_cast<double>(n) / (w_dom + static_cast<double>(n) - 1.0);
}

std::pair<double, double> dominant_weight_schedule(int n, int turn) {
    if (turn < 0) throw ParameterError("turn index must be non-negative");
    DominantSchedule s = DominantSchedule::start(n);
    for (int i = 0; i < turn; ++i) s.advance_turn();
    return {s.w_dom, s.w_non()};
}

void write_weights_csv(std::ostream& os, const std::vector<WeightTraceRow>& rows) {
    os << "step,dominant_id,w_dom,w_non\n";
    for (const auto& r : rows)
        os << r.step << "," << r.dominant_id << "," << format_double(r.w_dom) << ","
           << format_double(r.w_non) << "\n";
}

}  // namespace lorafuse
