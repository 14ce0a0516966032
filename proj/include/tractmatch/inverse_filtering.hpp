#pragma once

// GFM-IAIF source-filter separation: a 3rd-order glottal spectral model built
// from three cascaded first-order LPC fits, then a high-order vocal tract fit
// on the glottis- and lip-cancelled signal.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "tractmatch/dsp_core.hpp"
#include "tractmatch/error.hpp"
#include "tractmatch/transfer_function.hpp"

namespace tractmatch {

struct IaifSettings {
    int glottal_order = 3;
    double lip_leak = 0.99;  // lip radiation is cancelled with 1 / (1 - leak z^-1)
};

struct IaifResult {
    AllPoleFilter tract_filter;
    AllPoleFilter glottal_filter;
    AudioBuffer gfd;
};

/// Default tract order: one pole pair per kHz plus two.
inline int default_tract_order(double sample_rate) { return static_cast<int>(sample_rate / 1000.0) + 2; }

namespace detail {

inline std::vector<double> convolve(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

}  // namespace detail

/// Splits a speech frame into a vocal tract all-pole filter and the glottal
/// flow derivative obtained by inverse filtering the frame through it. The
/// Hann window is applied internally for every LPC fit.
inline IaifResult gfm_iaif(const AudioBuffer& frame, int tract_order, const IaifSettings& settings = {}) {
    validate(frame);
    const std::size_t n = frame.size();
    if (tract_order < 1 || n < 4 * static_cast<std::size_t>(tract_order))
        throw Error(ErrorKind::InvalidArgument, "frame too short for tract order");

    // Linear ramp before the frame absorbs the filters' start-up transient.
    const std::size_t pre = static_cast<std::size_t>(tract_order) + 1;
    std::vector<double> x(pre + n);
    const double s0 = frame.samples.front();
    for (std::size_t i = 0; i < pre; ++i)
        x[i] = pre == 1 ? s0 : -s0 + 2.0 * s0 * static_cast<double>(i) / static_cast<double>(pre - 1);
    std::copy(frame.samples.begin(), frame.samples.end(), x.begin() + static_cast<std::ptrdiff_t>(pre));

    const auto window = hann_window(n);
    auto analysis = [&](const std::vector<double>& sig) {
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = sig[pre + i] * window[i];
        return out;
    };

    const std::vector<double> leak{1.0, -settings.lip_leak};
    const auto x_gv = all_pole_filter(x, leak);

    // gross glottis: cascade of first-order fits
    std::vector<double> ag1 = lpc(analysis(x_gv), 1).coefficients;
    for (int i = 1; i < settings.glottal_order; ++i) {
        const auto residual = fir_filter(x_gv, ag1);
        ag1 = detail::convolve(ag1, lpc(analysis(residual), 1).coefficients);
    }

    // gross tract, fine glottis, fine tract
    const auto av1 = lpc(analysis(fir_filter(x_gv, ag1)), tract_order);
    const auto ag = lpc(analysis(fir_filter(x_gv, av1.coefficients)), settings.glottal_order);
    const auto av = stabilize(lpc(analysis(fir_filter(x_gv, ag.coefficients)), tract_order));

    IaifResult result;
    result.tract_filter = av;
    result.glottal_filter = ag;
    result.gfd = inverse_filter(frame, av);
    return result;
}

/// The GFD without its first tract_order samples, where the inverse filter
/// is still starting from zero state. Use this for pitch and voice quality.
inline AudioBuffer settled_gfd(const IaifResult& result) {
    const auto order = static_cast<std::size_t>(std::max(result.tract_filter.order(), 0));
    const auto skip = static_cast<std::ptrdiff_t>(std::min(order, result.gfd.size()));
    return AudioBuffer{std::vector<double>(result.gfd.samples.begin() + skip, result.gfd.samples.end()),
                       result.gfd.sample_rate};
}

/// |V| sampled at omega_f = f pi / F.
inline Spectrum tract_response_from_iaif(const IaifResult& result, std::size_t num_freqs) {
    const FrequencyGrid grid{num_freqs};
    std::vector<double> mags(num_freqs);
    for (std::size_t f = 0; f < num_freqs; ++f) mags[f] = filter_magnitude(result.tract_filter, grid.omega(f));
    return grid_spectrum(grid, std::move(mags), result.gfd.sample_rate);
}

}  // namespace tractmatch
