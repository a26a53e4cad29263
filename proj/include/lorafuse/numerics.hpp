#pragma once

#include <Eigen/Dense>
#include <complex>
#include <iosfwd>
#include <vector>

namespace lorafuse {

bool is_power_of_two(int n);

// Dense C x H x W tensor with one Eigen plane per channel. H and W are
// required to be powers of two so the grid can always be transformed.
struct LatentGrid {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<Eigen::MatrixXd> data;

    static LatentGrid zeros(int channels, int height, int width);
    static LatentGrid from_planes(std::vector<Eigen::MatrixXd> planes);

    void validate() const;
    bool same_shape(const LatentGrid& other) const;
};

// 2D spectrum of one plane. coeffs(k, l) is the DFT coefficient at row
// frequency k, column frequency l in standard (unshifted) layout;
// freq_mag(k, l) = ||u|| for the signed centered frequency pair
// u = (f(k, H), f(l, W)) with f(i, n) = i <= n/2 ? i : i - n.
struct Spectrum {
    Eigen::MatrixXcd coeffs;
    Eigen::MatrixXd freq_mag;
};

// Result of masking a spectrum at relative cutoff h: amplitudes |coeffs|
// kept only where ||u|| > h * max ||u||, zero elsewhere. The DC bin is
// excluded for every h since ||u|| = 0 there.
struct HighFreqAmplitude {
    Eigen::MatrixXd masked_amps;
    double total = 0.0;
    double cutoff = 0.0;
};

// Mean plane over channels, (1/C) * sum_i grid.data[i].
Eigen::MatrixXd channel_mean(const LatentGrid& grid);

// Forward unnormalized DFT (e^{-2*pi*i*...} convention), radix-2 over rows
// then columns. Throws DimensionError unless both extents are powers of two.
Spectrum fft2d(const Eigen::MatrixXd& plane);

// Total spectral amplitude above the relative cutoff h in [0, 1).
HighFreqAmplitude high_freq_amplitude(const Spectrum& spec, double h);

// High-frequency amplitude of the spectral difference
// F(plane_t) - F(plane_prev), masked by the difference's own frequency grid.
HighFreqAmplitude delta_high_freq(const Eigen::MatrixXd& plane_t,
                                  const Eigen::MatrixXd& plane_prev, double h);

// Mean amplitude per integer-rounded ||u|| bin; reporting aid only.
std::vector<std::pair<double, double>> radial_profile(const Spectrum& spec);

// One row per bin, row-major order, columns: freq_mag,amplitude.
void write_spectrum_csv(std::ostream& os, const Spectrum& spec);

}  // namespace lorafuse
