#pragma once

// Signal-processing primitives shared by the analysis and synthesis modules:
// linear prediction, all-pole/all-zero filtering, spectra, mel features and
// Savitzky-Golay smoothing. Everything here is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/Polynomials>

#include "tractmatch/error.hpp"

namespace tractmatch {

inline constexpr double kMagnitudeFloor = 1e-12;

struct AudioBuffer {
    std::vector<double> samples;
    double sample_rate = 48000.0;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    double duration() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }
    std::span<const double> view() const noexcept { return samples; }
};

/// Checks the buffer invariants (positive rate, finite samples).
inline void validate(const AudioBuffer& audio) {
    if (!(audio.sample_rate > 0.0) || !std::isfinite(audio.sample_rate))
        throw Error(ErrorKind::InvalidArgument, "sample rate must be positive");
    for (double s : audio.samples)
        if (!std::isfinite(s)) throw Error(ErrorKind::InvalidArgument, "non-finite sample");
}

/// Denominator polynomial A(z) = sum a_i z^-i of an all-pole filter 1/A(z).
struct AllPoleFilter {
    std::vector<double> coefficients{1.0};

    int order() const noexcept { return static_cast<int>(coefficients.size()) - 1; }
};

struct Spectrum {
    std::vector<double> magnitudes;
    std::vector<double> bin_frequencies;

    std::size_t size() const noexcept { return magnitudes.size(); }
};

// Hann window without zero end points (the MATLAB `hanning` convention), so
// that every sample of an analysis frame contributes to the fit.
inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k)
        w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k + 1) /
                                    static_cast<double>(n + 1));
    return w;
}

// Periodic Hann window, used for short-time spectra.
inline std::vector<double> periodic_hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k)
        w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                    static_cast<double>(n));
    return w;
}

inline std::vector<double> apply_window(std::span<const double> x, std::span<const double> w) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * w[i];
    return out;
}

inline std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
    std::vector<double> r(static_cast<std::size_t>(max_lag) + 1, 0.0);
    const std::size_t n = x.size();
    for (int lag = 0; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (std::size_t i = static_cast<std::size_t>(lag); i < n; ++i) acc += x[i] * x[i - lag];
        r[static_cast<std::size_t>(lag)] = acc;
    }
    return r;
}

/// Autocorrelation-method linear prediction solved with the Levinson-Durbin
/// recursion. The frame is expected to be windowed by the caller.
inline AllPoleFilter lpc(std::span<const double> frame, int order) {
    if (order < 1) throw Error(ErrorKind::InvalidArgument, "LPC order must be positive");
    if (frame.size() <= static_cast<std::size_t>(order))
        throw Error(ErrorKind::InvalidArgument, "frame shorter than LPC order");

    const auto r = autocorrelation(frame, order);
    if (!(r[0] > 0.0)) throw Error(ErrorKind::SilentFrame);

    std::vector<double> a(static_cast<std::size_t>(order) + 1, 0.0);
    std::vector<double> prev(a.size(), 0.0);
    a[0] = 1.0;
    double err = r[0];
    for (int i = 1; i <= order; ++i) {
        double acc = r[static_cast<std::size_t>(i)];
        for (int j = 1; j < i; ++j) acc += a[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(i - j)];
        const double k = -acc / err;
        prev = a;
        for (int j = 1; j < i; ++j)
            a[static_cast<std::size_t>(j)] = prev[static_cast<std::size_t>(j)] + k * prev[static_cast<std::size_t>(i - j)];
        a[static_cast<std::size_t>(i)] = k;
        err *= (1.0 - k * k);
        if (!(err > 0.0) || !std::isfinite(err)) throw Error(ErrorKind::UnstableLpc);
    }
    return AllPoleFilter{std::move(a)};
}

/// Step-down recursion: reflection coefficients of a monic polynomial. The
/// filter is minimum-phase iff every |k| < 1.
inline std::vector<double> reflection_from_polynomial(const AllPoleFilter& filter) {
    std::vector<double> a = filter.coefficients;
    const double a0 = a.front();
    for (double& v : a) v /= a0;
    const int p = static_cast<int>(a.size()) - 1;
    std::vector<double> k(static_cast<std::size_t>(std::max(p, 0)), 0.0);
    for (int i = p; i >= 1; --i) {
        const double ki = a[static_cast<std::size_t>(i)];
        k[static_cast<std::size_t>(i - 1)] = ki;
        if (std::abs(ki) >= 1.0) return k;
        const double denom = 1.0 - ki * ki;
        std::vector<double> next(static_cast<std::size_t>(i), 0.0);
        next[0] = 1.0;
        for (int j = 1; j < i; ++j)
            next[static_cast<std::size_t>(j)] =
                (a[static_cast<std::size_t>(j)] - ki * a[static_cast<std::size_t>(i - j)]) / denom;
        a = std::move(next);
    }
    return k;
}

inline bool is_minimum_phase(const AllPoleFilter& filter) {
    for (double k : reflection_from_polynomial(filter))
        if (!(std::abs(k) < 1.0)) return false;
    return true;
}

/// Roots of A(z) in the z-plane (the poles of 1/A(z)).
inline std::vector<std::complex<double>> poles(const AllPoleFilter& filter) {
    const auto& a = filter.coefficients;
    const int p = filter.order();
    if (p < 1) return {};
    // A(z) z^p = a0 z^p + a1 z^(p-1) + ... + ap; Eigen wants ascending powers.
    Eigen::VectorXd poly(p + 1);
    for (int i = 0; i <= p; ++i) poly[i] = a[static_cast<std::size_t>(p - i)];
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver(poly);
    std::vector<std::complex<double>> out;
    out.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index i = 0; i < solver.roots().size(); ++i) out.push_back(solver.roots()[i]);
    return out;
}

/// Reflects any pole on or outside the unit circle to 1/conj(p). The
/// magnitude response only changes by a constant factor per reflected pole.
inline AllPoleFilter stabilize(const AllPoleFilter& filter) {
    if (is_minimum_phase(filter)) return filter;
    auto roots = poles(filter);
    for (auto& r : roots) {
        const double mag = std::abs(r);
        if (mag >= 1.0) r = (mag > 1.0) ? 1.0 / std::conj(r) : r * (1.0 - 1e-9);
    }
    std::vector<std::complex<double>> poly{1.0};
    for (const auto& r : roots) {
        std::vector<std::complex<double>> next(poly.size() + 1, 0.0);
        for (std::size_t i = 0; i < poly.size(); ++i) {
            next[i] += poly[i];
            next[i + 1] -= poly[i] * r;
        }
        poly = std::move(next);
    }
    AllPoleFilter out;
    out.coefficients.resize(poly.size());
    for (std::size_t i = 0; i < poly.size(); ++i) out.coefficients[i] = poly[i].real();
    return out;
}

inline std::complex<double> polynomial_at(const AllPoleFilter& filter, double omega) {
    std::complex<double> acc = 0.0;
    const std::complex<double> zinv = std::polar(1.0, -omega);
    std::complex<double> zp = 1.0;
    for (double c : filter.coefficients) {
        acc += c * zp;
        zp *= zinv;
    }
    return acc;
}

/// |1 / A(e^{i omega})| with the denominator magnitude floored at 1e-12.
inline double filter_magnitude(const AllPoleFilter& filter, double omega) {
    return 1.0 / std::max(std::abs(polynomial_at(filter, omega)), kMagnitudeFloor);
}

/// FIR filtering y[n] = sum b_i x[n-i] with zero initial state.
inline std::vector<double> fir_filter(std::span<const double> x, std::span<const double> b) {
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
        double acc = 0.0;
        const std::size_t taps = std::min(b.size(), n + 1);
        for (std::size_t i = 0; i < taps; ++i) acc += b[i] * x[n - i];
        y[n] = acc;
    }
    return y;
}

/// IIR filtering through 1/A(z) with zero initial state.
inline std::vector<double> all_pole_filter(std::span<const double> x, std::span<const double> a) {
    std::vector<double> y(x.size(), 0.0);
    const double a0 = a[0];
    for (std::size_t n = 0; n < x.size(); ++n) {
        double acc = x[n];
        const std::size_t taps = std::min(a.size(), n + 1);
        for (std::size_t i = 1; i < taps; ++i) acc -= a[i] * y[n - i];
        y[n] = acc / a0;
    }
    return y;
}

/// Removes an all-pole filter's contribution: y[n] = sum a_i x[n-i].
inline AudioBuffer inverse_filter(const AudioBuffer& signal, const AllPoleFilter& filter) {
    return AudioBuffer{fir_filter(signal.samples, filter.coefficients), signal.sample_rate};
}

inline AudioBuffer apply_all_pole(const AudioBuffer& signal, const AllPoleFilter& filter) {
    return AudioBuffer{all_pole_filter(signal.samples, filter.coefficients), signal.sample_rate};
}

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// One-sided magnitude spectrum |X[k]|, k = 0..fft_size/2, of a zero-padded frame.
inline Spectrum magnitude_spectrum(std::span<const double> frame, double sample_rate, std::size_t fft_size) {
    if (!is_power_of_two(fft_size) || fft_size < frame.size())
        throw Error(ErrorKind::InvalidArgument, "fft size must be a power of two >= frame length");
    std::vector<double> padded(fft_size, 0.0);
    std::copy(frame.begin(), frame.end(), padded.begin());
    std::vector<std::complex<double>> bins;
    Eigen::FFT<double> fft;
    fft.fwd(bins, padded);

    Spectrum out;
    const std::size_t half = fft_size / 2 + 1;
    out.magnitudes.resize(half);
    out.bin_frequencies.resize(half);
    for (std::size_t k = 0; k < half; ++k) {
        out.magnitudes[k] = std::abs(bins[k]);
        out.bin_frequencies[k] = sample_rate * static_cast<double>(k) / static_cast<double>(fft_size);
    }
    return out;
}

inline Spectrum magnitude_spectrum(const AudioBuffer& frame, std::size_t fft_size = 4096) {
    return magnitude_spectrum(frame.samples, frame.sample_rate, fft_size);
}

// ---- mel features ---------------------------------------------------------

struct MelConfig {
    int bands = 64;
    std::size_t fft_size = 1024;
    std::size_t hop = 256;
    double log_floor = 1e-10;
    double fmin = 0.0;
    double fmax = 0.0;  // 0 selects Nyquist
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filterbank (bands x (fft_size/2 + 1)) over a power spectrum.
inline Eigen::MatrixXd mel_filterbank(const MelConfig& config, double sample_rate) {
    const std::size_t nbins = config.fft_size / 2 + 1;
    const double fmax = config.fmax > 0.0 ? config.fmax : sample_rate / 2.0;
    const double mlo = hz_to_mel(config.fmin);
    const double mhi = hz_to_mel(fmax);
    std::vector<double> edges(static_cast<std::size_t>(config.bands) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(config.bands + 1));

    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(config.bands, static_cast<Eigen::Index>(nbins));
    for (int b = 0; b < config.bands; ++b) {
        const double lo = edges[static_cast<std::size_t>(b)];
        const double mid = edges[static_cast<std::size_t>(b) + 1];
        const double hi = edges[static_cast<std::size_t>(b) + 2];
        for (std::size_t k = 0; k < nbins; ++k) {
            const double f = sample_rate * static_cast<double>(k) / static_cast<double>(config.fft_size);
            double w = 0.0;
            if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
            else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
            fb(b, static_cast<Eigen::Index>(k)) = w;
        }
    }
    return fb;
}

/// Log mel-band energies, one row per frame.
inline Eigen::MatrixXd mel_spectrogram(const AudioBuffer& signal, const MelConfig& config = {}) {
    if (signal.empty()) throw Error(ErrorKind::InvalidArgument, "empty signal");
    if (!is_power_of_two(config.fft_size) || config.hop == 0 || config.bands < 1)
        throw Error(ErrorKind::InvalidArgument, "invalid mel configuration");

    const std::size_t n = signal.size();
    const std::size_t frames = n <= config.fft_size ? 1 : 1 + (n - config.fft_size) / config.hop;
    const auto window = periodic_hann(config.fft_size);
    const Eigen::MatrixXd fb = mel_filterbank(config, signal.sample_rate);
    const std::size_t nbins = config.fft_size / 2 + 1;

    Eigen::FFT<double> fft;
    std::vector<double> buf(config.fft_size);
    std::vector<std::complex<double>> bins;
    Eigen::VectorXd power(static_cast<Eigen::Index>(nbins));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(frames), config.bands);
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t start = f * config.hop;
        for (std::size_t i = 0; i < config.fft_size; ++i) {
            const std::size_t idx = start + i;
            buf[i] = idx < n ? signal.samples[idx] * window[i] : 0.0;
        }
        fft.fwd(bins, buf);
        for (std::size_t k = 0; k < nbins; ++k) power[static_cast<Eigen::Index>(k)] = std::norm(bins[k]);
        const Eigen::VectorXd energies = fb * power;
        for (int b = 0; b < config.bands; ++b)
            out(static_cast<Eigen::Index>(f), b) = std::log(std::max(energies[b], config.log_floor));
    }
    return out;
}

/// Mean squared difference of two log-mel spectrograms over their common frames.
inline double mel_mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::Index rows = std::min(a.rows(), b.rows());
    const Eigen::Index cols = std::min(a.cols(), b.cols());
    if (rows == 0 || cols == 0) return 0.0;
    return (a.topLeftCorner(rows, cols) - b.topLeftCorner(rows, cols)).array().square().mean();
}

// ---- Savitzky-Golay -------------------------------------------------------

struct SmoothResult {
    std::vector<double> values;
    bool warning = false;  // window did not fit; values returned unchanged
};

namespace detail {

// Least-squares polynomial through samples at offsets `xs`, evaluated at `at`.
// Returned as weights over the samples.
inline Eigen::VectorXd polyfit_weights(const Eigen::VectorXd& xs, int order, double at) {
    const Eigen::Index n = xs.size();
    Eigen::MatrixXd vander(n, order + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        double p = 1.0;
        for (int j = 0; j <= order; ++j) {
            vander(i, j) = p;
            p *= xs[i];
        }
    }
    Eigen::RowVectorXd basis(order + 1);
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
        basis[j] = p;
        p *= at;
    }
    // weights^T = basis * pinv(V)
    const Eigen::MatrixXd pinv = vander.completeOrthogonalDecomposition().pseudoInverse();
    return (basis * pinv).transpose();
}

}  // namespace detail

/// Least-squares polynomial smoothing. Edge samples are evaluated from the
/// polynomial fitted to the first/last full window.
inline SmoothResult savitzky_golay(std::span<const double> series, int window, int poly_order) {
    if (window < 1 || window % 2 == 0) throw Error(ErrorKind::InvalidArgument, "window must be odd");
    if (poly_order < 0 || poly_order >= window)
        throw Error(ErrorKind::InvalidArgument, "poly_order must be < window");

    SmoothResult result;
    result.values.assign(series.begin(), series.end());
    const auto n = static_cast<int>(series.size());
    if (window >= n) {
        result.warning = true;
        return result;
    }
    const int half = window / 2;
    Eigen::VectorXd xs(window);
    for (int i = 0; i < window; ++i) xs[i] = static_cast<double>(i - half);

    const Eigen::VectorXd center = detail::polyfit_weights(xs, poly_order, 0.0);
    for (int i = half; i < n - half; ++i) {
        double acc = 0.0;
        for (int j = 0; j < window; ++j) acc += center[j] * series[static_cast<std::size_t>(i - half + j)];
        result.values[static_cast<std::size_t>(i)] = acc;
    }
    for (int i = 0; i < half; ++i) {
        const Eigen::VectorXd head = detail::polyfit_weights(xs, poly_order, static_cast<double>(i - half));
        const Eigen::VectorXd tail = detail::polyfit_weights(xs, poly_order, static_cast<double>(half - i));
        double acc_head = 0.0;
        double acc_tail = 0.0;
        for (int j = 0; j < window; ++j) {
            acc_head += head[j] * series[static_cast<std::size_t>(j)];
            acc_tail += tail[j] * series[static_cast<std::size_t>(n - window + j)];
        }
        result.values[static_cast<std::size_t>(i)] = acc_head;
        result.values[static_cast<std::size_t>(n - 1 - i)] = acc_tail;
    }
    return result;
}

}  // namespace tractmatch
