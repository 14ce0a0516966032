#pragma once

// Liljencrants-Fant glottal flow derivative driven by the single shape
// parameter Rd, plus the analysis side: YIN F0 tracking and the H1-H2 based
// tenseness estimate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "tractmatch/dsp_core.hpp"
#include "tractmatch/error.hpp"

namespace tractmatch {

struct GlottalParams {
    double f0 = 120.0;
    double tenseness = 0.6;

    GlottalParams() = default;
    GlottalParams(double f0_hz, double t) : f0(f0_hz), tenseness(std::clamp(t, 0.0, 1.0)) {
        if (!(f0_hz > 0.0)) throw Error(ErrorKind::InvalidArgument, "f0 must be positive");
    }
};

inline constexpr double kRdMin = 0.01;
inline constexpr double kRdMax = 3.0;
// Lowest Rd for which the Ra regression stays positive with some margin. The
// synthesizer clamps its shape parameter into [kLfRdMin, kRdMax].
inline constexpr double kLfRdMin = 0.22;

inline double rd_from_tenseness(double tenseness) { return 3.0 * (1.0 - std::clamp(tenseness, 0.0, 1.0)); }

inline double tenseness_from_rd(double rd) { return std::clamp(1.0 - rd / 3.0, 0.0, 1.0); }

/// Inverts H1 - H2 = -7.6 + 11.1 Rd (dB), clamped to [0.01, 3].
inline double rd_from_h1h2(double h1h2_db) {
    return std::clamp((h1h2_db + 7.6) / 11.1, kRdMin, kRdMax);
}

/// One LF period with unit period and unit negative peak (Ee = 1).
struct LFShape {
    double rd = 1.0;
    double tp = 0.0;       // instant of peak flow
    double te = 0.0;       // instant of main excitation (closure)
    double ta = 0.0;       // return-phase time constant
    double epsilon = 0.0;  // return-phase decay rate
    double alpha = 0.0;    // open-phase growth rate
    double e0 = 0.0;       // open-phase amplitude
    double omega = 0.0;    // pi / tp

    double operator()(double phase) const {
        if (phase <= te) return e0 * std::exp(alpha * phase) * std::sin(omega * phase);
        return -(std::exp(-epsilon * (phase - te)) - std::exp(-epsilon * (1.0 - te))) / (epsilon * ta);
    }
};

namespace detail {

template <class F>
double bisect(F&& f, double lo, double hi, double tol = 1e-9) {
    double flo = f(lo);
    for (int it = 0; it < 200 && hi - lo > tol * std::max(1.0, std::abs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Rd to LF timing via the standard Ra/Rk regression, with Rg from the Rd
/// definition. The return-phase constant and the open-phase growth rate are
/// solved by bisection so that the period integrates to zero.
inline LFShape lf_shape(double rd) {
    if (!(rd >= kRdMin && rd <= kRdMax)) throw Error(ErrorKind::RdOutOfRange);
    const double ra = -0.01 + 0.048 * rd;
    const double rk = 0.224 + 0.118 * rd;
    const double denom = 0.11 * rd - ra * (0.5 + 1.2 * rk);
    if (!(ra > 0.0) || !(denom > 0.0)) throw Error(ErrorKind::RdOutOfRange);
    const double rg = (rk / 4.0) * (0.5 + 1.2 * rk) / denom;

    LFShape s;
    s.rd = rd;
    s.ta = ra;
    s.tp = 1.0 / (2.0 * rg);
    s.te = s.tp * (1.0 + rk);
    const double tc = 1.0 - s.te;
    if (!(s.te < 1.0) || !(s.ta < tc)) throw Error(ErrorKind::RdOutOfRange);

    // epsilon * Ta = 1 - exp(-epsilon (1 - Te)), nontrivial root
    auto eps_eq = [&](double e) { return e * s.ta + std::expm1(-e * tc); };
    s.epsilon = detail::bisect(eps_eq, 1e-3, 2.0 / s.ta, 1e-12);

    s.omega = std::numbers::pi / s.tp;
    const double decay = std::exp(-s.epsilon * tc);
    const double return_area = -((1.0 - decay) / s.epsilon - tc * decay) / (s.epsilon * s.ta);
    const double sin_te = std::sin(s.omega * s.te);
    const double cos_te = std::cos(s.omega * s.te);
    auto balance = [&](double a) {
        const double e0 = -1.0 / (std::exp(a * s.te) * sin_te);
        const double open_area =
            (std::exp(a * s.te) * (a * sin_te - s.omega * cos_te) + s.omega) / (a * a + s.omega * s.omega);
        return e0 * open_area + return_area;
    };
    double lo = -10.0;
    double hi = 10.0;
    while (balance(lo) < 0.0 && lo > -1e4) lo *= 2.0;
    while (balance(hi) > 0.0 && hi < 1e4) hi *= 2.0;
    if (balance(lo) < 0.0 || balance(hi) > 0.0) throw Error(ErrorKind::RdOutOfRange);
    s.alpha = detail::bisect(balance, lo, hi, 1e-12);
    s.e0 = -1.0 / (std::exp(s.alpha * s.te) * sin_te);
    return s;
}

/// Aspiration noise: white noise through first-order high/low-pass edges,
/// scaled by gain * (1 - sqrt(T)). The defaults approximate the reference
/// synthesizer: a 500 Hz, Q 0.5 band-pass and 0.2 * 0.3 level on breathy voice.
struct AspirationNoise {
    double gain = 0.06;
    double low_hz = 200.0;
    double high_hz = 1200.0;
};

/// Sample-by-sample LF source with aspiration noise. The shape is refreshed at
/// every period boundary so F0 and tenseness may vary smoothly.
class GlottalOscillator {
public:
    GlottalOscillator(double sample_rate, std::uint64_t seed, AspirationNoise noise = {})
        : sample_rate_(sample_rate), noise_(noise), rng_(seed) {
        hp_coef_ = std::exp(-2.0 * std::numbers::pi * noise_.low_hz / sample_rate_);
        lp_coef_ = std::exp(-2.0 * std::numbers::pi * noise_.high_hz / sample_rate_);
    }

    double next(double f0, double tenseness) {
        const double t = std::clamp(tenseness, 0.0, 1.0);
        if (!shape_valid_) refresh(t);
        const double lf = shape_(phase_);
        phase_ += f0 / sample_rate_;
        if (phase_ >= 1.0) {
            phase_ -= std::floor(phase_);
            refresh(t);
        }
        return lf + noise_.gain * (1.0 - std::sqrt(t)) * filtered_noise();
    }

private:
    void refresh(double tenseness) {
        const double rd = std::clamp(rd_from_tenseness(tenseness), kLfRdMin, kRdMax);
        if (!shape_valid_ || rd != shape_.rd) shape_ = lf_shape(rd);
        shape_valid_ = true;
    }

    double filtered_noise() {
        const double white = uniform_(rng_);
        // one-pole high-pass followed by one-pole low-pass
        const double hp = hp_coef_ * (hp_state_ + white - hp_prev_);
        hp_prev_ = white;
        hp_state_ = hp;
        lp_state_ = (1.0 - lp_coef_) * hp + lp_coef_ * lp_state_;
        return lp_state_;
    }

    double sample_rate_;
    AspirationNoise noise_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> uniform_{-1.0, 1.0};
    double hp_coef_ = 0.0;
    double lp_coef_ = 0.0;
    double hp_state_ = 0.0;
    double hp_prev_ = 0.0;
    double lp_state_ = 0.0;
    double phase_ = 0.0;
    LFShape shape_{};
    bool shape_valid_ = false;
};

inline AudioBuffer synthesize_gfd(const GlottalParams& params, std::size_t duration_samples, double sample_rate,
                                  std::uint64_t noise_seed, AspirationNoise noise = {}) {
    GlottalOscillator osc(sample_rate, noise_seed, noise);
    AudioBuffer out{std::vector<double>(duration_samples), sample_rate};
    for (auto& s : out.samples) s = osc.next(params.f0, params.tenseness);
    return out;
}

// ---- analysis -------------------------------------------------------------

struct YinSettings {
    double fmin = 60.0;
    double fmax = 500.0;
    double threshold = 0.1;
    double window_s = 0.025;
    // When no dip clears `threshold`, the deepest dip still counts as voiced if
    // it is below this ceiling; the first dip within `threshold` of it is taken.
    double voicing_ceiling = 0.5;
};

/// YIN: difference function, cumulative mean normalization, absolute
/// threshold and parabolic refinement of the chosen dip.
inline double estimate_f0(const AudioBuffer& signal, const YinSettings& yin = {}) {
    const double fs = signal.sample_rate;
    const auto max_lag = static_cast<std::size_t>(std::ceil(fs / yin.fmin));
    const auto min_lag = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(fs / yin.fmax)));
    const std::size_t n = signal.size();
    if (n < 2 * max_lag + 2) throw Error(ErrorKind::InvalidArgument, "signal too short for pitch search");
    const std::size_t width = std::min(static_cast<std::size_t>(std::lround(yin.window_s * fs)), n - max_lag - 1);

    const auto& x = signal.samples;
    std::vector<double> diff(max_lag + 2, 0.0);
    for (std::size_t tau = 1; tau < diff.size(); ++tau) {
        double acc = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = x[j] - x[j + tau];
            acc += d * d;
        }
        diff[tau] = acc;
    }
    std::vector<double> cmnd(diff.size(), 1.0);
    double running = 0.0;
    for (std::size_t tau = 1; tau < diff.size(); ++tau) {
        running += diff[tau];
        cmnd[tau] = running > 0.0 ? diff[tau] * static_cast<double>(tau) / running : 1.0;
    }
    if (!(running > 0.0)) throw Error(ErrorKind::UnvoicedFrame);

    auto first_dip = [&](double threshold) {
        std::size_t tau = min_lag;
        for (; tau <= max_lag; ++tau) {
            if (cmnd[tau] < threshold) {
                while (tau + 1 <= max_lag && cmnd[tau + 1] < cmnd[tau]) ++tau;
                break;
            }
        }
        return tau;
    };
    std::size_t tau = first_dip(yin.threshold);
    if (tau > max_lag) {
        const double deepest = *std::min_element(cmnd.begin() + static_cast<std::ptrdiff_t>(min_lag),
                                                 cmnd.begin() + static_cast<std::ptrdiff_t>(max_lag) + 1);
        if (!(deepest < yin.voicing_ceiling)) throw Error(ErrorKind::UnvoicedFrame);
        tau = first_dip(deepest + yin.threshold);
    }

    double refined = static_cast<double>(tau);
    const double a = cmnd[tau - 1];
    const double b = cmnd[tau];
    const double c = cmnd[tau + 1];
    const double curv = a - 2.0 * b + c;
    if (curv > 0.0) refined += 0.5 * (a - c) / curv;
    return fs / refined;
}

namespace detail {

// Peak magnitude (dB) of the local maximum in [lo_hz, hi_hz], refined by a
// parabola through the log magnitudes around the peak bin.
inline double harmonic_peak_db(const Spectrum& spec, double lo_hz, double hi_hz) {
    const std::size_t n = spec.size();
    double best = -1.0;
    std::size_t best_k = 0;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        const double f = spec.bin_frequencies[k];
        if (f < lo_hz || f > hi_hz) continue;
        const double m = spec.magnitudes[k];
        if (m > 0.0 && m >= spec.magnitudes[k - 1] && m >= spec.magnitudes[k + 1] && m > best) {
            best = m;
            best_k = k;
        }
    }
    if (best <= 0.0) throw Error(ErrorKind::HarmonicsNotFound);
    auto db = [&](std::size_t k) { return 20.0 * std::log10(std::max(spec.magnitudes[k], kMagnitudeFloor)); };
    const double a = db(best_k - 1);
    const double b = db(best_k);
    const double c = db(best_k + 1);
    const double curv = a - 2.0 * b + c;
    if (curv >= 0.0) return b;
    const double shift = 0.5 * (a - c) / curv;
    return b - 0.25 * (a - c) * shift;
}

}  // namespace detail

/// H1 - H2 in dB of a GFD waveform with known F0 (Hann-windowed spectrum,
/// peaks searched within +-f0/4 of each harmonic).
inline double measure_h1h2(const AudioBuffer& gfd, double f0) {
    if (!(f0 > 0.0)) throw Error(ErrorKind::InvalidArgument, "f0 must be positive");
    std::size_t fft_size = 4096;
    while (fft_size < 2 * gfd.size()) fft_size *= 2;
    const auto windowed = apply_window(gfd.samples, hann_window(gfd.size()));
    const Spectrum spec = magnitude_spectrum(windowed, gfd.sample_rate, fft_size);
    const double h1 = detail::harmonic_peak_db(spec, f0 - f0 / 4.0, f0 + f0 / 4.0);
    const double h2 = detail::harmonic_peak_db(spec, 2.0 * f0 - f0 / 4.0, 2.0 * f0 + f0 / 4.0);
    return h1 - h2;
}

inline double estimate_tenseness(const AudioBuffer& gfd, double f0) {
    return tenseness_from_rd(rd_from_h1h2(measure_h1h2(gfd, f0)));
}

}  // namespace tractmatch
