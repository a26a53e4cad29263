#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lorafuse/numerics.hpp"

namespace lorafuse {

// Classifier-free guidance combination (1 - s) * uncond + s * cond.
Eigen::MatrixXd cfg_single(const Eigen::MatrixXd& uncond, const Eigen::MatrixXd& cond, double s);
LatentGrid cfg_single(const LatentGrid& uncond, const LatentGrid& cond, double s);

// (1/N) * sum_i w_i * grid_i over per-adapter guided predictions,
// accumulated in the order given. Empty input is a parameter error.
LatentGrid collective_guidance(const std::vector<LatentGrid>& grids,
                               const std::vector<double>& weights);

// Decaying dominant weight sequence. The turn index i counts dominance
// switches, not denoising steps:
//   w_dom(0) = N - 0.5,   w_dom(i) = w_dom(i-1) - 0.5^i,
//   w_non(i) = N / (w_dom(i) + N - 1).
// The sequence decreases strictly toward N - 1.5 and w_dom = 1 gives
// w_non = 1 (the uniform reduction).
struct DominantSchedule {
    int n = 0;
    int turn = 0;
    double w_dom = 0.0;
    bool decay = true;

    static DominantSchedule start(int n, bool decay = true, double w_dom_init = -1.0);
    void advance_turn();
    double w_non() const;
};

std::pair<double, double> dominant_weight_schedule(int n, int turn);

// One emitted row of the per-step weight table.
struct WeightTraceRow {
    int step = 0;
    std::string dominant_id;
    double w_dom = 0.0;
    double w_non = 0.0;
};

// Columns: step,dominant_id,w_dom,w_non.
void write_weights_csv(std::ostream& os, const std::vector<WeightTraceRow>& rows);

}  // namespace lorafuse
