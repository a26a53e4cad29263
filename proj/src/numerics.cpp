#include "lorafuse/numerics.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <utility>

#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"

namespace lorafuse {

bool is_power_of_two(int n) {
    return n > 0 && (n & (n - 1)) == 0;
}

LatentGrid LatentGrid::zeros(int channels, int height, int width) {
    LatentGrid g;
    g.channels = channels;
    g.height = height;
    g.width = width;
    g.data.assign(static_cast<std::size_t>(channels > 0 ? channels : 0),
                  Eigen::MatrixXd::Zero(height, width));
    g.validate();
    return g;
}

LatentGrid LatentGrid::from_planes(std::vector<Eigen::MatrixXd> planes) {
    LatentGrid g;
    g.channels = static_cast<int>(planes.size());
    g.height = planes.empty() ? 0 : static_cast<int>(planes[0].rows());
    g.width = planes.empty() ? 0 : static_cast<int>(planes[0].cols());
    g.data = std::move(planes);
    g.validate();
    return g;
}

void LatentGrid::validate() const {
    if (channels < 1) throw ParameterError("latent grid needs at least one channel");
    if (!is_power_of_two(height) || !is_power_of_two(width))
        throw DimensionError("latent grid extents must be powers of two");
    if (static_cast<int>(data.size()) != channels)
        throw DimensionError("latent grid channel count mismatch");
    for (const auto& plane : data) {
        if (plane.rows() != height || plane.cols() != width)
            throw DimensionError("latent grid plane extent mismatch");
        if (!plane.allFinite()) throw ParameterError("latent grid values must be finite");
    }
}

bool LatentGrid::same_shape(const LatentGrid& other) const {
    return channels == other.channels && height == other.height && width == other.width;
}

Eigen::MatrixXd channel_mean(const LatentGrid& grid) {
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(grid.height, grid.width);
    for (const auto& plane : grid.data) mean += plane;
    return mean / static_cast<double>(grid.channels);
}

namespace {

// In-place iterative radix-2 transform; n must be a power of two.
void fft_pow2(std::complex<double>* x, int n) {
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / len;
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                std::complex<double> u = x[i + k];
                std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

double signed_freq(int i, int n) {
    return i <= n / 2 ? static_cast<double>(i) : static_cast<double>(i - n);
}

Eigen::MatrixXd freq_mag_grid(int h, int w) {
    Eigen::MatrixXd mag(h, w);
    for (int k = 0; k < h; ++k) {
        const double fk = signed_freq(k, h);
        for (int l = 0; l < w; ++l) {
            const double fl = signed_freq(l, w);
            mag(k, l) = std::hypot(fk, fl);
        }
    }
    return mag;
}

HighFreqAmplitude mask_spectrum(const Spectrum& spec, double h) {
    if (!(h >= 0.0 && h < 1.0)) throw ParameterError("relative cutoff h must lie in [0, 1)");
    HighFreqAmplitude out;
    const double max_mag = spec.freq_mag.maxCoeff();
    out.cutoff = h * max_mag;
    out.masked_amps = (spec.freq_mag.array() > out.cutoff)
                          .select(spec.coeffs.cwiseAbs().array(), 0.0);
    out.total = out.masked_amps.sum();
    return out;
}

}  // namespace

Spectrum fft2d(const Eigen::MatrixXd& plane) {
    const int h = static_cast<int>(plane.rows());
    const int w = static_cast<int>(plane.cols());
    if (!is_power_of_two(h) || !is_power_of_two(w))
        throw DimensionError("fft2d requires power-of-two extents");

    Spectrum spec;
    spec.coeffs = plane.cast<std::complex<double>>();
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(std::max(h, w)));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) buf[static_cast<std::size_t>(c)] = spec.coeffs(r, c);
        fft_pow2(buf.data(), w);
        for (int c = 0; c < w; ++c) spec.coeffs(r, c) = buf[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) buf[static_cast<std::size_t>(r)] = spec.coeffs(r, c);
        fft_pow2(buf.data(), h);
        for (int r = 0; r < h; ++r) spec.coeffs(r, c) = buf[static_cast<std::size_t>(r)];
    }
    spec.freq_mag = freq_mag_grid(h, w);
    return spec;
}

HighFreqAmplitude high_freq_amplitude(const Spectrum& spec, double h) {
    return mask_spectrum(spec, h);
}

HighFreqAmplitude delta_high_freq(const Eigen::MatrixXd& plane_t,
                                  const Eigen::MatrixXd& plane_prev, double h) {
    if (plane_t.rows() != plane_prev.rows() || plane_t.cols() != plane_prev.cols())
        throw DimensionError("delta_high_freq planes must share extents");
    const Spectrum st = fft2d(plane_t);
    const Spectrum sp = fft2d(plane_prev);
    Spectrum diff;
    diff.coeffs = st.coeffs - sp.coeffs;
    diff.freq_mag = st.freq_mag;
    return mask_spectrum(diff, h);
}

std::vector<std::pair<double, double>> radial_profile(const Spectrum& spec) {
    const int nbins = static_cast<int>(std::floor(spec.freq_mag.maxCoeff())) + 1;
    std::vector<double> sums(static_cast<std::size_t>(nbins), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(nbins), 0);
    for (Eigen::Index k = 0; k < spec.coeffs.rows(); ++k) {
        for (Eigen::Index l = 0; l < spec.coeffs.cols(); ++l) {
            const auto bin = static_cast<std::size_t>(std::lround(spec.freq_mag(k, l)));
            if (bin < sums.size()) {
                sums[bin] += std::abs(spec.coeffs(k, l));
                counts[bin] += 1;
            }
        }
    }
    std::vector<std::pair<double, double>> profile;
    for (std::size_t b = 0; b < sums.size(); ++b)
        if (counts[b] > 0) profile.emplace_back(static_cast<double>(b), sums[b] / counts[b]);
    return profile;
}

void write_spectrum_csv(std::ostream& os, const Spectrum& spec) {
    os << "freq_mag,amplitude\n";
    for (Eigen::Index k = 0; k < spec.coeffs.rows(); ++k)
        for (Eigen::Index l = 0; l < spec.coeffs.cols(); ++l)
            os << format_double(spec.freq_mag(k, l)) << ","
               << format_double(std::abs(spec.coeffs(k, l))) << "\n";
}

}  // namespace lorafuse
