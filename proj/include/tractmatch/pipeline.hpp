#pragma once

// Frame-by-frame sound matching: inverse filter each frame, estimate the
// glottal controls from the recovered source and fit the tract controls to the
// recovered filter. Also resynthesis and trajectory smoothing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tractmatch/dsp_core.hpp"
#include "tractmatch/error.hpp"
#include "tractmatch/estimation.hpp"
#include "tractmatch/glottal_source.hpp"
#include "tractmatch/inverse_filtering.hpp"
#include "tractmatch/transfer_function.hpp"
#include "tractmatch/vocal_tract.hpp"

namespace tractmatch {

inline constexpr const char* kModelVersion = "tractmatch-kl44-1";
inline constexpr double kF0Min = 60.0;
inline constexpr double kF0Max = 500.0;

struct FrameRecord {
    std::size_t frame_index = 0;
    double time_s = 0.0;
    double f0_hz = 0.0;
    double tenseness = 0.0;
    double tongue_position = 0.0;
    double tongue_diameter = 0.0;
    std::vector<Constriction> constrictions;
    double loss = 0.0;
    bool voiced = false;

    TractControls controls() const { return TractControls{tongue_position, tongue_diameter, constrictions}; }
    void set_controls(const TractControls& c) {
        tongue_position = c.tongue_position;
        tongue_diameter = c.tongue_diameter;
        constrictions = c.constrictions;
    }
    GlottalParams glottal() const { return GlottalParams{f0_hz, tenseness}; }

    bool operator==(const FrameRecord&) const = default;
};

struct TrackHeader {
    double sample_rate = 48000.0;
    double hop_s = 0.01;
    std::string model_version = kModelVersion;

    bool operator==(const TrackHeader&) const = default;
};

struct ParameterTrack {
    TrackHeader header;
    std::vector<FrameRecord> frames;

    bool operator==(const ParameterTrack&) const = default;
};

/// Throws Schema naming the first offending field.
inline void validate(const ParameterTrack& track) {
    auto fail = [](std::size_t i, const std::string& field) {
        throw Error(ErrorKind::Schema, "frames[" + std::to_string(i) + "]." + field);
    };
    if (!(track.header.sample_rate > 0.0)) throw Error(ErrorKind::Schema, "header.sample_rate");
    if (!(track.header.hop_s > 0.0)) throw Error(ErrorKind::Schema, "header.hop_s");
    if (track.frames.empty()) throw Error(ErrorKind::Schema, "frames (empty)");
    for (std::size_t i = 0; i < track.frames.size(); ++i) {
        const auto& f = track.frames[i];
        if (!std::isfinite(f.time_s) || (i > 0 && !(f.time_s > track.frames[i - 1].time_s))) fail(i, "time_s");
        if (!(f.f0_hz >= kF0Min && f.f0_hz <= kF0Max)) fail(i, "f0_hz");
        if (!(f.tenseness >= 0.0 && f.tenseness <= 1.0)) fail(i, "tenseness");
        if (!kTonguePositionRange.contains(f.tongue_position)) fail(i, "tongue_position");
        if (!kTongueDiameterRange.contains(f.tongue_diameter)) fail(i, "tongue_diameter");
        if (f.constrictions.size() > kMaxConstrictions) fail(i, "constrictions");
        for (std::size_t c = 0; c < f.constrictions.size(); ++c) {
            const std::string at = "constrictions[" + std::to_string(c) + "].";
            if (!kConstrictionPositionRange.contains(f.constrictions[c].position)) fail(i, at + "position");
            if (!kConstrictionDiameterRange.contains(f.constrictions[c].diameter)) fail(i, at + "diameter");
        }
        if (f.constrictions.size() != track.frames.front().constrictions.size()) fail(i, "constrictions");
        if (!std::isfinite(f.loss)) fail(i, "loss");
    }
}

enum class Optimizer { Gd, Ga, Pso };

inline const char* optimizer_name(Optimizer o) {
    switch (o) {
        case Optimizer::Gd: return "gd";
        case Optimizer::Ga: return "ga";
        case Optimizer::Pso: return "pso";
    }
    return "gd";
}

inline Optimizer parse_optimizer(const std::string& name) {
    if (name == "gd") return Optimizer::Gd;
    if (name == "ga") return Optimizer::Ga;
    if (name == "pso") return Optimizer::Pso;
    throw Error(ErrorKind::InvalidArgument, "unknown optimizer '" + name + "'");
}

struct MatchSettings {
    double frames_per_second = 100.0;
    double window_s = 0.04;
    GdSettings gd{};
    EvolutionSettings evolution{};
    Optimizer optimizer = Optimizer::Gd;
    std::optional<bool> smooth;  // unset: on for GA/PSO, off for GD
    int sg_window = 9;
    int sg_order = 3;
    std::size_t num_freqs = 512;
    SimulationConfig sim{};
    std::uint64_t seed = 0;

    bool smoothing_enabled() const { return smooth.value_or(optimizer != Optimizer::Gd); }
};

inline void validate(const MatchSettings& s) {
    if (!(s.frames_per_second > 0.0)) throw Error(ErrorKind::InvalidArgument, "frames_per_second must be positive");
    if (!(s.window_s > 0.0)) throw Error(ErrorKind::InvalidArgument, "window must be positive");
    if (s.num_freqs < 1) throw Error(ErrorKind::InvalidArgument, "need at least one frequency");
    if (s.sg_window < 1 || s.sg_window % 2 == 0) throw Error(ErrorKind::InvalidArgument, "sg_window must be odd");
    if (s.sg_order < 0 || s.sg_order >= s.sg_window) throw Error(ErrorKind::InvalidArgument, "sg_order must be < sg_window");
    validate(s.gd);
    validate(s.evolution, s.optimizer == Optimizer::Pso ? 1 : 2);
}

struct SmoothedTrack {
    ParameterTrack track;
    bool warning = false;  // at least one series was too short to smooth
};

/// Savitzky-Golay smoothing of every continuous parameter series, clipped back
/// into the valid ranges. Voiced flags, losses and times are untouched.
inline SmoothedTrack smooth_track(const ParameterTrack& track, int window, int order) {
    SmoothedTrack out{track, false};
    const std::size_t n = track.frames.size();
    if (n == 0) return out;

    auto smooth = [&](auto get, auto set, const ParameterRange& range) {
        std::vector<double> series(n);
        for (std::size_t i = 0; i < n; ++i) series[i] = get(track.frames[i]);
        const SmoothResult r = savitzky_golay(series, window, order);
        out.warning = out.warning || r.warning;
        for (std::size_t i = 0; i < n; ++i) set(out.track.frames[i], range.clamp(r.values[i]));
    };
    smooth([](const FrameRecord& f) { return f.f0_hz; }, [](FrameRecord& f, double v) { f.f0_hz = v; },
           ParameterRange{kF0Min, kF0Max});
    smooth([](const FrameRecord& f) { return f.tenseness; }, [](FrameRecord& f, double v) { f.tenseness = v; },
           ParameterRange{0.0, 1.0});
    smooth([](const FrameRecord& f) { return f.tongue_position; },
           [](FrameRecord& f, double v) { f.tongue_position = v; }, kTonguePositionRange);
    smooth([](const FrameRecord& f) { return f.tongue_diameter; },
           [](FrameRecord& f, double v) { f.tongue_diameter = v; }, kTongueDiameterRange);
    const std::size_t nc = track.frames.front().constrictions.size();
    for (std::size_t c = 0; c < nc; ++c) {
        smooth([c](const FrameRecord& f) { return f.constrictions.at(c).position; },
               [c](FrameRecord& f, double v) { f.constrictions.at(c).position = v; }, kConstrictionPositionRange);
        smooth([c](const FrameRecord& f) { return f.constrictions.at(c).diameter; },
               [c](FrameRecord& f, double v) { f.constrictions.at(c).diameter = v; }, kConstrictionDiameterRange);
    }
    return out;
}

namespace detail {

// Window of `length` samples centred on `centre`, zero outside the signal.
inline AudioBuffer centred_frame(const AudioBuffer& audio, std::ptrdiff_t centre, std::size_t length) {
    AudioBuffer frame{std::vector<double>(length, 0.0), audio.sample_rate};
    const std::ptrdiff_t first = centre - static_cast<std::ptrdiff_t>(length / 2);
    for (std::size_t i = 0; i < length; ++i) {
        const std::ptrdiff_t j = first + static_cast<std::ptrdiff_t>(i);
        if (j >= 0 && j < static_cast<std::ptrdiff_t>(audio.size())) frame.samples[i] = audio.samples[static_cast<std::size_t>(j)];
    }
    return frame;
}

struct FrameAnalysis {
    IaifResult iaif;
    GlottalParams glottal;
};

inline std::optional<FrameAnalysis> analyse_frame(const AudioBuffer& frame, int tract_order) {
    try {
        FrameAnalysis a{gfm_iaif(frame, tract_order), {}};
        const AudioBuffer gfd = settled_gfd(a.iaif);
        const double f0 = estimate_f0(gfd);
        a.glottal = GlottalParams{f0, estimate_tenseness(gfd, f0)};
        return a;
    } catch (const Error& e) {
        switch (e.kind()) {
            case ErrorKind::SilentFrame:
            case ErrorKind::UnstableLpc:
            case ErrorKind::UnvoicedFrame:
            case ErrorKind::HarmonicsNotFound: return std::nullopt;
            default: throw;
        }
    }
}

}  // namespace detail

/// Matches a mono clip at the simulation rate. Frame i is centred on
/// i / frames_per_second. Unvoiced frames repeat the nearest earlier voiced
/// frame (the first voiced frame for leading ones) with voiced = false.
inline ParameterTrack match(const AudioBuffer& audio, const MatchSettings& settings) {
    validate(audio);
    validate(settings);
    const double fs = settings.sim.sample_rate;
    if (audio.sample_rate != fs) throw Error(ErrorKind::InvalidArgument, "audio must be resampled to the simulation rate");

    const double hop_exact = fs / settings.frames_per_second;
    const auto window = static_cast<std::size_t>(std::lround(settings.window_s * fs));
    const auto num_frames = static_cast<std::size_t>(std::ceil(static_cast<double>(audio.size()) / hop_exact));
    const int tract_order = default_tract_order(fs);
    TransferConfig transfer{settings.num_freqs, settings.sim, true};
    const FrequencyGrid grid = transfer.grid();
    const std::size_t free = settings.optimizer == Optimizer::Gd ? settings.gd.num_free_constrictions
                                                                 : settings.evolution.num_free_constrictions;

    ParameterTrack track;
    track.header.sample_rate = fs;
    track.header.hop_s = 1.0 / settings.frames_per_second;
    std::optional<TractControls> previous;
    std::optional<std::size_t> first_voiced;
    for (std::size_t i = 0; i < num_frames; ++i) {
        const auto centre = static_cast<std::ptrdiff_t>(std::lround(static_cast<double>(i) * hop_exact));
        FrameRecord rec;
        rec.frame_index = i;
        rec.time_s = static_cast<double>(i) / settings.frames_per_second;
        const AudioBuffer frame = detail::centred_frame(audio, centre, window);
        const auto analysis = detail::analyse_frame(frame, tract_order);
        if (!analysis || analysis->glottal.f0 < kF0Min || analysis->glottal.f0 > kF0Max) {
            if (!track.frames.empty()) {
                const FrameRecord& last = track.frames.back();
                rec.f0_hz = last.f0_hz;
                rec.tenseness = last.tenseness;
                rec.set_controls(last.controls());
                rec.loss = last.loss;
            }
            rec.voiced = false;
            track.frames.push_back(rec);
            continue;
        }

        rec.voiced = true;
        rec.f0_hz = analysis->glottal.f0;
        rec.tenseness = analysis->glottal.tenseness;
        const Spectrum target = tract_response_from_iaif(analysis->iaif, grid.count);
        TractControls fitted;
        if (settings.optimizer == Optimizer::Gd) {
            const TractControls init = previous ? *previous : midpoint_controls(free);
            fitted = fit_controls_gd(target, settings.gd, init, transfer).controls;
        } else {
            // candidate source: the frame's glottal estimate, with half a window to settle the tract
            const std::size_t warmup = window / 2;
            const AudioBuffer source = synthesize_source(std::span<const GlottalParams>(&analysis->glottal, 1),
                                                         warmup + window, warmup + window, fs, settings.seed + i);
            const MelFitness fitness(frame, source, warmup, settings.sim);
            EvolutionSettings evo = settings.evolution;
            evo.seed = settings.evolution.seed + settings.seed + i;
            fitted = settings.optimizer == Optimizer::Ga ? fit_controls_ga(fitness, evo).controls
                                                         : fit_controls_pso(fitness, evo).controls;
        }
        rec.set_controls(fitted);
        rec.loss = spectral_loss(fitted, target, transfer);
        previous = fitted;
        if (!first_voiced) first_voiced = track.frames.size();
        track.frames.push_back(rec);
    }
    if (!first_voiced) throw Error(ErrorKind::NoVoicedFrames);
    for (std::size_t i = 0; i < *first_voiced; ++i) {
        const FrameRecord& v = track.frames[*first_voiced];
        FrameRecord& f = track.frames[i];
        f.f0_hz = v.f0_hz;
        f.tenseness = v.tenseness;
        f.set_controls(v.controls());
        f.loss = v.loss;
    }
    if (settings.smoothing_enabled()) track = smooth_track(track, settings.sg_window, settings.sg_order).track;
    return track;
}

/// Renders a track. Parameters are interpolated linearly between frames and
/// the source is gated by the voiced flags, also interpolated. `num_samples`
/// of 0 covers one hop per frame. Output is peak-normalized to 0.9.
inline AudioBuffer resynthesize(const ParameterTrack& track, const SimulationConfig& config = {},
                                std::uint64_t seed = 0, std::size_t num_samples = 0,
                                AspirationNoise noise = {}) {
    validate(track);
    const double fs = config.sample_rate;
    const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(track.header.hop_s * fs)));
    if (num_samples == 0) num_samples = hop * track.frames.size();

    std::vector<GlottalParams> glottal;
    std::vector<TractControls> controls;
    for (const auto& f : track.frames) {
        glottal.push_back(f.glottal());
        controls.push_back(f.controls());
    }
    AudioBuffer source = synthesize_source(glottal, hop, num_samples, fs, seed, noise);
    for (std::size_t n = 0; n < num_samples; ++n) {
        const double pos = static_cast<double>(n) / static_cast<double>(hop);
        const auto j = static_cast<std::size_t>(pos);
        double gate = track.frames.back().voiced ? 1.0 : 0.0;
        if (j + 1 < track.frames.size()) {
            const double lambda = pos - static_cast<double>(j);
            gate = (1.0 - lambda) * (track.frames[j].voiced ? 1.0 : 0.0) +
                   lambda * (track.frames[j + 1].voiced ? 1.0 : 0.0);
        }
        source.samples[n] *= gate;
    }
    AudioBuffer out = kl_synthesize(source, controls, hop, config);
    normalize_peak(out, 0.9);
    return out;
}

}  // namespace tractmatch
