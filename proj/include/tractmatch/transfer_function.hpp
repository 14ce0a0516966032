#pragma once

// Closed-form frequency response of the half-sample-delay Kelly-Lochbaum tract,
// the log-spectral loss against a target magnitude response, and its exact
// gradient with respect to the (normalized) articulatory controls.
//
// H(z) = (1 + z^-1) z^-(M+1)/2 prod(1 + k_m) / D(z),
// D(z) = [1, -R0 z^-1] * prod_m [[1, k_m z^-1], [k_m, z^-1]] * [1, RL]^T

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "tractmatch/dsp_core.hpp"
#include "tractmatch/dual.hpp"
#include "tractmatch/error.hpp"
#include "tractmatch/vocal_tract.hpp"

namespace tractmatch {

using Complex = std::complex<double>;

inline constexpr std::size_t kMaxConstrictions = 4;
inline constexpr std::size_t kMaxParameters = 2 + 2 * kMaxConstrictions;

/// omega_f = f * pi / F for f = 0..F-1.
struct FrequencyGrid {
    std::size_t count = 512;

    double omega(std::size_t f) const {
        return static_cast<double>(f) * std::numbers::pi / static_cast<double>(count);
    }
    std::vector<double> omegas() const {
        std::vector<double> w(count);
        for (std::size_t f = 0; f < count; ++f) w[f] = omega(f);
        return w;
    }
    double hz(std::size_t f, double sample_rate) const { return omega(f) * sample_rate / (2.0 * std::numbers::pi); }
};

/// Builds a Spectrum on `grid` from magnitudes sampled at its frequencies.
inline Spectrum grid_spectrum(const FrequencyGrid& grid, std::vector<double> magnitudes, double sample_rate) {
    Spectrum s;
    s.magnitudes = std::move(magnitudes);
    s.bin_frequencies.resize(grid.count);
    for (std::size_t f = 0; f < grid.count; ++f) s.bin_frequencies[f] = grid.hz(f, sample_rate);
    return s;
}

/// H_KL at z = e^{i omega} for an arbitrary number of junctions.
inline Complex evaluate_hkl(std::span<const double> k, double glottal, double lip, double omega) {
    const Complex zinv = std::polar(1.0, -omega);
    Complex l0 = 1.0;
    Complex l1 = -glottal * zinv;
    double gain = 1.0;
    for (double km : k) {
        const Complex n0 = l0 + l1 * km;
        const Complex n1 = (l0 * km + l1) * zinv;
        l0 = n0;
        l1 = n1;
        gain *= 1.0 + km;
    }
    Complex den = l0 + l1 * lip;
    const double mag = std::abs(den);
    if (mag < kMagnitudeFloor) den = mag > 0.0 ? den * (kMagnitudeFloor / mag) : Complex(kMagnitudeFloor, 0.0);
    const double half_delay = 0.5 * static_cast<double>(k.size() + 1);
    const Complex num = (1.0 + zinv) * std::polar(gain, -omega * half_delay);
    return num / den;
}

inline Complex evaluate_hkl(const ReflectionModel& model, double omega) {
    return evaluate_hkl(model.k, model.glottal, model.lip, omega);
}

inline double safe_log10(double x) { return std::log10(std::max(x, kMagnitudeFloor)); }

inline std::vector<double> tract_magnitudes(const ReflectionModel& model, const FrequencyGrid& grid) {
    std::vector<double> out(grid.count);
    for (std::size_t f = 0; f < grid.count; ++f) out[f] = std::abs(evaluate_hkl(model, grid.omega(f)));
    return out;
}

/// |H_KL| of a control configuration on the grid, as a Spectrum.
inline Spectrum tract_response(const TractControls& controls, const FrequencyGrid& grid,
                               const SimulationConfig& sim = {}) {
    return grid_spectrum(grid, tract_magnitudes(reflection_coefficients(area_function(controls), sim), grid),
                         sim.sample_rate);
}

/// Mean absolute difference in dB between two magnitude responses.
inline double response_mae_db(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw Error(ErrorKind::InvalidArgument, "response size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(20.0 * (safe_log10(a[i]) - safe_log10(b[i])));
    return acc / static_cast<double>(a.size());
}

/// Like response_mae_db after removing the mean dB offset between the two.
inline double aligned_response_mae_db(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw Error(ErrorKind::InvalidArgument, "response size mismatch");
    std::vector<double> diff(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff[i] = 20.0 * (safe_log10(a[i]) - safe_log10(b[i]));
        mean += diff[i];
    }
    mean /= static_cast<double>(a.size());
    double acc = 0.0;
    for (double d : diff) acc += std::abs(d - mean);
    return acc / static_cast<double>(a.size());
}

// ---- normalized parameter space -------------------------------------------

/// Normalized layout: [t_p, t_d, pos_0, diam_0, pos_1, diam_1, ...], each in
/// [0, 1] over its range.
inline std::vector<double> to_normalized(const TractControls& controls) {
    std::vector<double> u;
    u.reserve(2 + 2 * controls.constrictions.size());
    u.push_back(kTonguePositionRange.normalize(controls.tongue_position));
    u.push_back(kTongueDiameterRange.normalize(controls.tongue_diameter));
    for (const auto& c : controls.constrictions) {
        u.push_back(kConstrictionPositionRange.normalize(c.position));
        u.push_back(kConstrictionDiameterRange.normalize(c.diameter));
    }
    return u;
}

inline TractControls from_normalized(std::span<const double> u) {
    if (u.size() < 2 || u.size() % 2 != 0) throw Error(ErrorKind::InvalidArgument, "bad parameter vector length");
    TractControls c;
    c.tongue_position = kTonguePositionRange.denormalize(std::clamp(u[0], 0.0, 1.0));
    c.tongue_diameter = kTongueDiameterRange.denormalize(std::clamp(u[1], 0.0, 1.0));
    for (std::size_t i = 2; i < u.size(); i += 2)
        c.constrictions.push_back({kConstrictionPositionRange.denormalize(std::clamp(u[i], 0.0, 1.0)),
                                   kConstrictionDiameterRange.denormalize(std::clamp(u[i + 1], 0.0, 1.0))});
    return c;
}

using ControlDual = Dual<kMaxParameters>;

/// Scattering coefficients with their derivatives with respect to each
/// normalized control.
inline std::array<ControlDual, kJunctions> reflection_duals(const TractControls& controls) {
    if (controls.constrictions.size() > kMaxConstrictions)
        throw Error(ErrorKind::InvalidArgument, "too many constrictions");
    const auto u = to_normalized(controls);
    auto lift = [&](std::size_t idx, const ParameterRange& range) {
        return range.lo + range.span() * ControlDual::variable(u[idx], idx);
    };
    auto d = rest_profile(lift(0, kTonguePositionRange), lift(1, kTongueDiameterRange));
    for (std::size_t c = 0; c < controls.constrictions.size(); ++c)
        constrict_profile(d, lift(2 + 2 * c, kConstrictionPositionRange), lift(3 + 2 * c, kConstrictionDiameterRange));
    if (!controls.constrictions.empty()) floor_profile(d, kOpenTractFloor);

    std::array<ControlDual, kSegments> area{};
    for (std::size_t i = 0; i < kSegments; ++i) area[i] = (std::numbers::pi * 0.25) * d[i] * d[i];
    std::array<ControlDual, kJunctions> k{};
    for (std::size_t m = 1; m < kSegments; ++m) k[m - 1] = (area[m] - area[m - 1]) / (area[m] + area[m - 1]);
    return k;
}

// ---- loss -------------------------------------------------------------------

struct TransferConfig {
    std::size_t num_freqs = 512;
    SimulationConfig sim{};
    // Remove the mean log error before squaring, making the loss blind to a
    // constant gain between model and target.
    bool gain_invariant = false;

    FrequencyGrid grid() const { return FrequencyGrid{num_freqs}; }
};

struct LossGradient {
    double loss = 0.0;
    std::vector<double> partials;  // normalized units, layout of to_normalized()

    double tongue_position() const { return partials.at(0); }
    double tongue_diameter() const { return partials.at(1); }
    double constriction_position(std::size_t i) const { return partials.at(2 + 2 * i); }
    double constriction_diameter(std::size_t i) const { return partials.at(3 + 2 * i); }
};

namespace detail {

inline void check_target(const Spectrum& target, const TransferConfig& config) {
    if (target.size() != config.num_freqs)
        throw Error(ErrorKind::InvalidArgument, "target not sampled on the configured frequency grid");
}

inline std::vector<double> log_errors(const std::vector<double>& log_h, const Spectrum& target, bool centered) {
    std::vector<double> e(log_h.size());
    double mean = 0.0;
    for (std::size_t f = 0; f < e.size(); ++f) {
        e[f] = log_h[f] - safe_log10(target.magnitudes[f]);
        mean += e[f];
    }
    if (centered) {
        mean /= static_cast<double>(e.size());
        for (double& x : e) x -= mean;
    }
    return e;
}

// log10|H| at each grid point plus, when `dlog` is non-null, d log10|H| / d k_m
// stored row-major (freq x junction).
inline std::vector<double> log_response(const std::array<double, kJunctions>& k, const SimulationConfig& sim,
                                        const FrequencyGrid& grid, std::vector<double>* dlog) {
    const double r0 = sim.glottal_reflection;
    const double rl = sim.lip_reflection;
    double log_gain = 0.0;
    std::array<double, kJunctions> inv_one_plus_k{};
    for (std::size_t m = 0; m < kJunctions; ++m) {
        log_gain += std::log10(1.0 + k[m]);
        inv_one_plus_k[m] = 1.0 / (1.0 + k[m]);
    }
    constexpr double inv_ln10 = 1.0 / std::numbers::ln10;

    std::vector<double> out(grid.count);
    if (dlog) dlog->assign(grid.count * kJunctions, 0.0);
    std::array<Complex, kJunctions + 1> left0{};
    std::array<Complex, kJunctions + 1> left1{};
    for (std::size_t f = 0; f < grid.count; ++f) {
        const double omega = grid.omega(f);
        const Complex zinv = std::polar(1.0, -omega);
        left0[0] = 1.0;
        left1[0] = -r0 * zinv;
        for (std::size_t m = 0; m < kJunctions; ++m) {
            left0[m + 1] = left0[m] + left1[m] * k[m];
            left1[m + 1] = (left0[m] * k[m] + left1[m]) * zinv;
        }
        const Complex den = left0[kJunctions] + left1[kJunctions] * rl;
        const double den_mag = std::abs(den);
        const double num_mag = std::abs(1.0 + zinv);
        const double log_num = safe_log10(num_mag) + log_gain;
        const bool den_floored = den_mag < kMagnitudeFloor;
        const double log_h_raw = log_num - std::log10(std::max(den_mag, kMagnitudeFloor));
        const bool h_floored = log_h_raw < std::log10(kMagnitudeFloor) || num_mag < kMagnitudeFloor;
        out[f] = std::max(log_h_raw, std::log10(kMagnitudeFloor));
        if (!dlog || h_floored) continue;

        double* row = dlog->data() + f * kJunctions;
        const Complex inv_den = den_floored ? Complex(0.0) : 1.0 / den;
        Complex right0 = 1.0;
        Complex right1 = rl;
        for (std::size_t m = kJunctions; m-- > 0;) {
            // d/dk of [[1, k z^-1], [k, z^-1]] is [[0, z^-1], [1, 0]]
            const Complex dden = left0[m] * zinv * right1 + left1[m] * right0;
            row[m] = inv_ln10 * (inv_one_plus_k[m] - (dden * inv_den).real());
            const Complex r0n = right0 + k[m] * zinv * right1;
            const Complex r1n = k[m] * right0 + zinv * right1;
            right0 = r0n;
            right1 = r1n;
        }
    }
    return out;
}

}  // namespace detail

/// log10|H_KL| of a control configuration on the grid.
inline std::vector<double> tract_log_response(const TractControls& controls, const TransferConfig& config) {
    const auto model = reflection_coefficients(area_function(controls), config.sim);
    return detail::log_response(model.k, config.sim, config.grid(), nullptr);
}

/// Mean over the grid of (log10|H_KL| - log10|V|)^2.
inline double spectral_loss(const TractControls& controls, const Spectrum& target, const TransferConfig& config = {}) {
    detail::check_target(target, config);
    const auto e = detail::log_errors(tract_log_response(controls, config), target, config.gain_invariant);
    double acc = 0.0;
    for (double x : e) acc += x * x;
    return acc / static_cast<double>(e.size());
}

/// Loss and its exact gradient with respect to every normalized control.
inline LossGradient loss_gradient(const TractControls& controls, const Spectrum& target,
                                  const TransferConfig& config = {}) {
    detail::check_target(target, config);
    const auto k_dual = reflection_duals(controls);
    std::array<double, kJunctions> k{};
    for (std::size_t m = 0; m < kJunctions; ++m) k[m] = k_dual[m].v;

    std::vector<double> dlog;
    const FrequencyGrid grid = config.grid();
    const auto log_h = detail::log_response(k, config.sim, grid, &dlog);

    // with centering the mean's own derivative drops out since sum(e) = 0
    const auto e = detail::log_errors(log_h, target, config.gain_invariant);
    std::array<double, kJunctions> dloss_dk{};
    double acc = 0.0;
    const double scale = 2.0 / static_cast<double>(grid.count);
    for (std::size_t f = 0; f < grid.count; ++f) {
        acc += e[f] * e[f];
        const double* row = dlog.data() + f * kJunctions;
        for (std::size_t m = 0; m < kJunctions; ++m) dloss_dk[m] += scale * e[f] * row[m];
    }

    LossGradient out;
    out.loss = acc / static_cast<double>(grid.count);
    const std::size_t n = 2 + 2 * controls.constrictions.size();
    out.partials.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double g = 0.0;
        for (std::size_t m = 0; m < kJunctions; ++m) g += dloss_dk[m] * k_dual[m].d[j];
        out.partials[j] = g;
    }
    return out;
}

}  // namespace tractmatch
