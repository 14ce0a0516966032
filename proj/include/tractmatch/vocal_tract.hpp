#pragma once

// Articulatory control model (base diameter -> tongue -> constrictions ->
// area function), Kelly-Lochbaum scattering coefficients and the time-domain
// waveguide that runs at twice the audio rate.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "tractmatch/dsp_core.hpp"
#include "tractmatch/dual.hpp"
#include "tractmatch/error.hpp"
#include "tractmatch/glottal_source.hpp"

namespace tractmatch {

inline constexpr std::size_t kSegments = 44;
inline constexpr std::size_t kJunctions = kSegments - 1;

struct ParameterRange {
    double lo;
    double hi;

    double span() const { return hi - lo; }
    double normalize(double x) const { return (x - lo) / (hi - lo); }
    double denormalize(double u) const { return lo + u * (hi - lo); }
    bool contains(double x) const { return x >= lo && x <= hi; }
    double clamp(double x) const { return std::clamp(x, lo, hi); }
    double midpoint() const { return 0.5 * (lo + hi); }
};

inline constexpr ParameterRange kTonguePositionRange{12.0, 29.0};
inline constexpr ParameterRange kTongueDiameterRange{2.05, 3.5};
inline constexpr ParameterRange kConstrictionPositionRange{0.0, 43.0};
inline constexpr ParameterRange kConstrictionDiameterRange{0.3, 2.0};

inline constexpr double kOpenTractFloor = 0.3;

struct Constriction {
    double position = 0.0;
    double diameter = kConstrictionDiameterRange.hi;

    bool operator==(const Constriction&) const = default;
};

struct TractControls {
    double tongue_position = kTonguePositionRange.midpoint();
    double tongue_diameter = kTongueDiameterRange.midpoint();
    std::vector<Constriction> constrictions;

    bool operator==(const TractControls&) const = default;
};

inline void validate(const TractControls& controls, std::size_t max_constrictions = 2) {
    if (!kTonguePositionRange.contains(controls.tongue_position))
        throw Error(ErrorKind::InvalidArgument, "tongue_position out of range");
    if (!kTongueDiameterRange.contains(controls.tongue_diameter))
        throw Error(ErrorKind::InvalidArgument, "tongue_diameter out of range");
    if (controls.constrictions.size() > max_constrictions)
        throw Error(ErrorKind::InvalidArgument, "too many constrictions");
    for (const auto& c : controls.constrictions) {
        if (!kConstrictionPositionRange.contains(c.position))
            throw Error(ErrorKind::InvalidArgument, "constriction position out of range");
        if (!kConstrictionDiameterRange.contains(c.diameter))
            throw Error(ErrorKind::InvalidArgument, "constriction diameter out of range");
    }
}

inline double area_from_diameter(double d) { return std::numbers::pi * 0.25 * d * d; }
inline double diameter_from_area(double a) { return 2.0 * std::sqrt(a / std::numbers::pi); }

struct AreaFunction {
    std::array<double, kSegments> diameters{};

    double area(std::size_t i) const { return area_from_diameter(diameters[i]); }
    std::array<double, kSegments> areas() const {
        std::array<double, kSegments> a{};
        for (std::size_t i = 0; i < kSegments; ++i) a[i] = area(i);
        return a;
    }
};

// Neutral tract, glottis to lips.
inline double base_diameter(std::size_t segment) {
    if (segment < 7) return 0.6;
    if (segment < 12) return 1.1;
    return 1.5;
}

inline constexpr std::size_t kBladeStart = 10;
inline constexpr std::size_t kTipStart = 32;
inline constexpr std::size_t kLipStart = 39;
inline constexpr double kTongueGridOffset = 1.7;

/// Tongue model on the base diameter. Templated so the same code yields
/// values (double) and exact control derivatives (Dual).
template <class T>
std::array<T, kSegments> rest_profile(const T& tongue_position, const T& tongue_diameter) {
    std::array<T, kSegments> d{};
    for (std::size_t i = 0; i < kSegments; ++i) d[i] = T(base_diameter(i));
    const T fixed = 2.0 + (tongue_diameter - 2.0) / 1.5;
    const T amplitude = (1.5 - fixed) + kTongueGridOffset;
    constexpr double span = static_cast<double>(kTipStart - kBladeStart);
    for (std::size_t i = kBladeStart; i < kLipStart; ++i) {
        using std::cos;
        const T t = (1.1 * std::numbers::pi / span) * (tongue_position - static_cast<double>(i));
        T curve = amplitude * cos(t);
        if (i == kLipStart - 1) curve = curve * 0.8;
        if (i == kBladeStart || i == kLipStart - 2) curve = curve * 0.94;
        d[i] = 1.5 - curve;
    }
    return d;
}

/// Constriction half-width in segments as a function of its position.
template <class T>
T constriction_width(const T& position) {
    constexpr double tip = static_cast<double>(kTipStart);
    if (position < 25.0) return T(10.0);
    if (position >= tip) return T(5.0);
    return 10.0 - 5.0 * (position - 25.0) / (tip - 25.0);
}

/// Raised-cosine dip centred at `position`, blended with the profile by a
/// pointwise minimum. Constrictions only ever narrow the tract.
template <class T>
void constrict_profile(std::array<T, kSegments>& d, const T& position, const T& diameter) {
    const T width = constriction_width(position);
    for (std::size_t i = 0; i < kSegments; ++i) {
        using std::abs;
        using std::cos;
        const T relpos = abs(static_cast<double>(i) - position) - 0.5;
        T shrink;
        if (relpos <= 0.0) shrink = T(0.0);
        else if (width < relpos) shrink = T(1.0);
        else shrink = 0.5 * (1.0 - cos(std::numbers::pi * relpos / width));
        const T candidate = diameter + (d[i] - diameter) * shrink;
        if (candidate < d[i]) d[i] = candidate;
    }
}

template <class T>
void floor_profile(std::array<T, kSegments>& d, double floor) {
    for (auto& x : d)
        if (x < floor) x = T(floor);
}

inline AreaFunction rest_diameter(double tongue_position, double tongue_diameter) {
    AreaFunction out;
    out.diameters = rest_profile(tongue_position, tongue_diameter);
    return out;
}

inline AreaFunction apply_constrictions(const AreaFunction& rest, std::span<const Constriction> constrictions,
                                        double floor = kOpenTractFloor) {
    AreaFunction out = rest;
    for (const auto& c : constrictions) constrict_profile(out.diameters, c.position, c.diameter);
    if (!constrictions.empty()) floor_profile(out.diameters, floor);
    return out;
}

inline AreaFunction area_function(const TractControls& controls, double floor = kOpenTractFloor) {
    return apply_constrictions(rest_diameter(controls.tongue_position, controls.tongue_diameter),
                               controls.constrictions, floor);
}

struct SimulationConfig {
    double sample_rate = 48000.0;
    double speed_of_sound = 350.0;
    double glottal_reflection = 0.75;
    double lip_reflection = -0.85;

    // Each segment is a half-sample delay at the audio rate.
    double tract_length() const {
        return static_cast<double>(kSegments) * speed_of_sound / (2.0 * sample_rate);
    }
};

struct ReflectionModel {
    std::array<double, kJunctions> k{};
    double glottal = 0.75;
    double lip = -0.85;
};

/// k_m = (A_m - A_{m-1}) / (A_m + A_{m-1}), m = 1..43.
inline std::array<double, kJunctions> scattering_coefficients(const std::array<double, kSegments>& areas) {
    std::array<double, kJunctions> k{};
    for (std::size_t m = 1; m < kSegments; ++m) k[m - 1] = (areas[m] - areas[m - 1]) / (areas[m] + areas[m - 1]);
    return k;
}

inline ReflectionModel reflection_coefficients(const AreaFunction& area, const SimulationConfig& config = {}) {
    for (double d : area.diameters)
        if (!(d > 0.0)) throw Error(ErrorKind::InvalidArgument, "non-positive segment diameter");
    ReflectionModel model;
    model.k = scattering_coefficients(area.areas());
    model.glottal = config.glottal_reflection;
    model.lip = config.lip_reflection;
    return model;
}

/// Waveguide state for one synthesis run: right/left travelling volume
/// velocity waves per segment, advanced one tick at twice the audio rate.
class KellyLochbaumTract {
public:
    explicit KellyLochbaumTract(const ReflectionModel& model) : model_(model) {}

    void set_reflections(const std::array<double, kJunctions>& k) { model_.k = k; }

    // Returns the wave arriving at the lips after this tick.
    double tick(double input) {
        std::array<double, kSegments> next_right{};
        std::array<double, kSegments> next_left{};
        next_right[0] = left_[0] * model_.glottal + input;
        next_left[kSegments - 1] = right_[kSegments - 1] * model_.lip;
        for (std::size_t m = 1; m < kSegments; ++m) {
            const double k = model_.k[m - 1];
            const double incident_right = right_[m - 1];
            const double incident_left = left_[m];
            next_right[m] = (1.0 + k) * incident_right - k * incident_left;
            next_left[m - 1] = (1.0 - k) * incident_left + k * incident_right;
        }
        right_ = next_right;
        left_ = next_left;
        return right_[kSegments - 1];
    }

private:
    ReflectionModel model_;
    std::array<double, kSegments> right_{};
    std::array<double, kSegments> left_{};
};

/// Runs `source` through the waveguide. Frame j of `frames` takes effect at
/// sample j * hop_samples; areas are interpolated linearly per tick between
/// frames and held after the last one. Each input sample is held for two
/// ticks and adjacent output ticks are summed back to the audio rate.
inline AudioBuffer kl_synthesize(const AudioBuffer& source, std::span<const TractControls> frames,
                                 std::size_t hop_samples, const SimulationConfig& config = {}) {
    if (frames.empty()) throw Error(ErrorKind::InvalidArgument, "empty control track");
    if (hop_samples == 0) hop_samples = 1;

    std::vector<std::array<double, kSegments>> frame_areas;
    frame_areas.reserve(frames.size());
    for (const auto& f : frames) frame_areas.push_back(area_function(f).areas());

    ReflectionModel model;
    model.glottal = config.glottal_reflection;
    model.lip = config.lip_reflection;
    model.k = scattering_coefficients(frame_areas.front());
    KellyLochbaumTract tract(model);

    AudioBuffer out{std::vector<double>(source.size(), 0.0), source.sample_rate};
    std::array<double, kSegments> areas{};
    const bool static_tract = frames.size() == 1;
    for (std::size_t n = 0; n < source.size(); ++n) {
        double acc = 0.0;
        for (int half = 0; half < 2; ++half) {
            if (!static_tract) {
                const double pos = (static_cast<double>(n) + 0.5 * half) / static_cast<double>(hop_samples);
                const auto j = static_cast<std::size_t>(pos);
                if (j + 1 >= frames.size()) {
                    areas = frame_areas.back();
                } else {
                    const double lambda = pos - static_cast<double>(j);
                    for (std::size_t i = 0; i < kSegments; ++i)
                        areas[i] = (1.0 - lambda) * frame_areas[j][i] + lambda * frame_areas[j + 1][i];
                }
                tract.set_reflections(scattering_coefficients(areas));
            }
            acc += tract.tick(source.samples[n]);
        }
        out.samples[n] = acc;
    }
    return out;
}

inline AudioBuffer kl_synthesize(const AudioBuffer& source, const TractControls& controls,
                                 const SimulationConfig& config = {}) {
    return kl_synthesize(source, std::span<const TractControls>(&controls, 1), source.size(), config);
}

inline void normalize_peak(AudioBuffer& audio, double peak) {
    double max_abs = 0.0;
    for (double s : audio.samples) max_abs = std::max(max_abs, std::abs(s));
    if (max_abs > 0.0)
        for (double& s : audio.samples) s *= peak / max_abs;
}

/// Generates the glottal source for time-aligned parameter frames (linear
/// interpolation of F0 and tenseness between frames).
inline AudioBuffer synthesize_source(std::span<const GlottalParams> glottal, std::size_t hop_samples,
                                     std::size_t num_samples, double sample_rate, std::uint64_t seed,
                                     AspirationNoise noise = {}) {
    if (glottal.empty()) throw Error(ErrorKind::InvalidArgument, "empty glottal track");
    if (hop_samples == 0) hop_samples = 1;
    GlottalOscillator osc(sample_rate, seed, noise);
    AudioBuffer out{std::vector<double>(num_samples), sample_rate};
    for (std::size_t n = 0; n < num_samples; ++n) {
        const double pos = static_cast<double>(n) / static_cast<double>(hop_samples);
        const auto j = static_cast<std::size_t>(pos);
        double f0 = glottal.back().f0;
        double t = glottal.back().tenseness;
        if (j + 1 < glottal.size()) {
            const double lambda = pos - static_cast<double>(j);
            f0 = (1.0 - lambda) * glottal[j].f0 + lambda * glottal[j + 1].f0;
            t = (1.0 - lambda) * glottal[j].tenseness + lambda * glottal[j + 1].tenseness;
        }
        out.samples[n] = osc.next(f0, t);
    }
    return out;
}

/// Source + waveguide, peak-normalized to `peak` (pass 0 to keep raw gain).
inline AudioBuffer synthesize_voice(std::span<const GlottalParams> glottal, std::span<const TractControls> controls,
                                    std::size_t hop_samples, std::size_t num_samples,
                                    const SimulationConfig& config, std::uint64_t seed, double peak = 0.9,
                                    AspirationNoise noise = {}) {
    const AudioBuffer source = synthesize_source(glottal, hop_samples, num_samples, config.sample_rate, seed, noise);
    AudioBuffer out = kl_synthesize(source, controls, hop_samples, config);
    if (peak > 0.0) normalize_peak(out, peak);
    return out;
}

}  // namespace tractmatch
