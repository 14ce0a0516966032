#pragma once

// Fitting articulatory controls to a target: momentum gradient descent on the
// analytic log-spectral loss, plus the black-box GA / PSO baselines that score
// candidates by mel-spectrogram distance of resynthesized audio.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "tractmatch/dsp_core.hpp"
#include "tractmatch/error.hpp"
#include "tractmatch/glottal_source.hpp"
#include "tractmatch/inverse_filtering.hpp"
#include "tractmatch/transfer_function.hpp"
#include "tractmatch/vocal_tract.hpp"

namespace tractmatch {

struct GdSettings {
    int steps = 100;
    double step_size = 1e-4;
    double momentum = 0.9;
    std::size_t num_free_constrictions = 2;
};

inline void validate(const GdSettings& s) {
    if (s.steps < 0) throw Error(ErrorKind::InvalidArgument, "steps must be >= 0");
    if (!(s.step_size > 0.0)) throw Error(ErrorKind::InvalidArgument, "step_size must be positive");
    if (!(s.momentum >= 0.0 && s.momentum < 1.0)) throw Error(ErrorKind::InvalidArgument, "momentum must be in [0, 1)");
    if (s.num_free_constrictions > kMaxConstrictions)
        throw Error(ErrorKind::InvalidArgument, "too many free constrictions");
}

/// A free constriction that leaves any tract narrower than the range maximum
/// untouched.
inline Constriction open_constriction() {
    return Constriction{kConstrictionPositionRange.midpoint(), kConstrictionDiameterRange.hi};
}

// Where free constrictions start. A fully open one sits in the flat part of the
// min-blend and never receives a gradient, so they start half closed, one behind
// and one ahead of the tongue body.
inline constexpr std::array<double, kMaxConstrictions> kConstrictionSeedPositions{14.0, 35.0, 24.5, 6.0};

inline Constriction seed_constriction(std::size_t index) {
    return Constriction{kConstrictionSeedPositions.at(index), kConstrictionDiameterRange.midpoint()};
}

/// Tongue at range midpoints plus `num_constrictions` seeded constrictions.
inline TractControls midpoint_controls(std::size_t num_constrictions) {
    TractControls c;
    for (std::size_t i = 0; i < num_constrictions; ++i) c.constrictions.push_back(seed_constriction(i));
    return c;
}

/// Pads or truncates the constriction list to exactly `count` entries.
inline TractControls with_constriction_count(TractControls controls, std::size_t count) {
    if (controls.constrictions.size() > count) controls.constrictions.resize(count);
    while (controls.constrictions.size() < count)
        controls.constrictions.push_back(seed_constriction(controls.constrictions.size()));
    return controls;
}

struct GdResult {
    TractControls controls;
    double loss = 0.0;
    std::vector<double> loss_trace;  // loss of every visited iterate, init first
    std::vector<double> best_trace;  // best-so-far, non-increasing
};

/// Momentum gradient descent in normalized control space with projection onto
/// [0, 1]. The update direction is the gradient of the error summed over the
/// grid (F times the mean loss), so `step_size` is independent of the grid
/// resolution in the sense of a per-frequency learning rate. Returns the best
/// iterate visited.
inline GdResult fit_controls_gd(const Spectrum& target, const GdSettings& settings, const TractControls& init,
                                const TransferConfig& config = {}) {
    validate(settings);
    for (double m : target.magnitudes)
        if (!std::isfinite(m)) throw Error(ErrorKind::InvalidTarget);

    const TractControls start = with_constriction_count(init, settings.num_free_constrictions);
    std::vector<double> theta = to_normalized(start);
    for (double& u : theta) u = std::clamp(u, 0.0, 1.0);
    std::vector<double> velocity(theta.size(), 0.0);
    const double grid_scale = static_cast<double>(config.num_freqs);

    GdResult result;
    result.loss = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= settings.steps; ++step) {
        const TractControls current = from_normalized(theta);
        const bool last = step == settings.steps;
        const LossGradient lg = last ? LossGradient{spectral_loss(current, target, config), {}}
                                     : loss_gradient(current, target, config);
        if (!std::isfinite(lg.loss)) {
            if (step == 0) throw Error(ErrorKind::InvalidTarget);
            break;
        }
        result.loss_trace.push_back(lg.loss);
        if (lg.loss < result.loss) {
            result.loss = lg.loss;
            result.controls = current;
        }
        result.best_trace.push_back(result.loss);
        if (last) break;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            velocity[i] = settings.momentum * velocity[i] - settings.step_size * grid_scale * lg.partials[i];
            theta[i] = std::clamp(theta[i] + velocity[i], 0.0, 1.0);
        }
    }
    return result;
}

// ---- black-box baselines ----------------------------------------------------

struct EvolutionSettings {
    std::size_t population = 64;  // GA individuals or PSO particles
    int generations = 100;         // GA generations or PSO iterations
    std::size_t tournament = 4;
    double mutation_sigma = 0.05;
    std::size_t elitism = 1;
    double inertia = 0.72;
    double cognitive = 1.49;
    double social = 1.49;
    std::size_t num_free_constrictions = 2;
    std::uint64_t seed = 0;
};

inline void validate(const EvolutionSettings& s, std::size_t min_population = 2) {
    if (s.population < min_population) throw Error(ErrorKind::InvalidArgument, "population too small");
    if (s.generations < 0) throw Error(ErrorKind::InvalidArgument, "generations must be >= 0");
    if (s.tournament < 1) throw Error(ErrorKind::InvalidArgument, "tournament size must be >= 1");
    if (!(s.mutation_sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "mutation sigma must be >= 0");
    if (s.elitism > s.population) throw Error(ErrorKind::InvalidArgument, "elitism exceeds population");
    if (!(s.inertia >= 0.0 && s.inertia < 1.0) || !(s.cognitive >= 0.0) || !(s.social >= 0.0))
        throw Error(ErrorKind::InvalidArgument, "invalid swarm weights");
    if (s.num_free_constrictions > kMaxConstrictions)
        throw Error(ErrorKind::InvalidArgument, "too many free constrictions");
}

/// Mel-spectrogram distance between a target clip and the waveguide driven by a
/// fixed source. The first `warmup` source samples let the tract settle and are
/// dropped; both signals are peak-normalized before comparison.
class MelFitness {
public:
    MelFitness(const AudioBuffer& target, AudioBuffer source, std::size_t warmup = 0, SimulationConfig sim = {},
               MelConfig mel = {})
        : source_(std::move(source)), warmup_(warmup), length_(target.size()), sim_(sim), mel_(mel) {
        validate(target);
        if (source_.size() < warmup_ + length_)
            throw Error(ErrorKind::InvalidArgument, "source shorter than warmup + target");
        AudioBuffer t = target;
        normalize_peak(t, 1.0);
        target_mel_ = mel_spectrogram(t, mel_);
    }

    AudioBuffer render(const TractControls& controls) const {
        const AudioBuffer full = kl_synthesize(source_, controls, sim_);
        AudioBuffer out{std::vector<double>(full.samples.begin() + static_cast<std::ptrdiff_t>(warmup_),
                                            full.samples.begin() + static_cast<std::ptrdiff_t>(warmup_ + length_)),
                        full.sample_rate};
        normalize_peak(out, 1.0);
        return out;
    }

    double operator()(const TractControls& controls) const { return mel_mse(mel_spectrogram(render(controls), mel_), target_mel_); }
    double operator()(std::span<const double> normalized) const { return (*this)(from_normalized(normalized)); }

private:
    AudioBuffer source_;
    std::size_t warmup_;
    std::size_t length_;
    SimulationConfig sim_;
    MelConfig mel_;
    Eigen::MatrixXd target_mel_;
};

struct EvolutionResult {
    TractControls controls;
    double fitness = 0.0;
    std::vector<double> best_trace;  // best fitness after each generation, generation 0 first
};

namespace detail {

inline std::vector<std::vector<double>> random_population(std::size_t count, std::size_t dims, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> pop(count, std::vector<double>(dims));
    for (auto& ind : pop)
        for (double& g : ind) g = unit(rng);
    return pop;
}

}  // namespace detail

/// Genetic algorithm in normalized space: tournament selection, uniform
/// crossover, Gaussian mutation, elitism.
template <class Fitness>
EvolutionResult fit_controls_ga(const Fitness& fitness, const EvolutionSettings& settings) {
    validate(settings);
    const std::size_t dims = 2 + 2 * settings.num_free_constrictions;
    std::mt19937_64 rng(settings.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, settings.mutation_sigma);
    std::uniform_int_distribution<std::size_t> pick(0, settings.population - 1);

    auto pop = detail::random_population(settings.population, dims, rng);
    std::vector<double> fit(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) fit[i] = fitness(std::span<const double>(pop[i]));

    std::vector<std::size_t> order(pop.size());
    auto rank = [&] {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fit[a] < fit[b]; });
    };
    auto tournament = [&] {
        std::size_t best = pick(rng);
        for (std::size_t t = 1; t < settings.tournament; ++t) {
            const std::size_t c = pick(rng);
            if (fit[c] < fit[best]) best = c;
        }
        return best;
    };

    EvolutionResult result;
    rank();
    result.best_trace.push_back(fit[order[0]]);
    for (int gen = 0; gen < settings.generations; ++gen) {
        std::vector<std::vector<double>> next;
        std::vector<double> next_fit;
        next.reserve(pop.size());
        for (std::size_t e = 0; e < settings.elitism; ++e) {
            next.push_back(pop[order[e]]);
            next_fit.push_back(fit[order[e]]);
        }
        while (next.size() < pop.size()) {
            const auto& a = pop[tournament()];
            const auto& b = pop[tournament()];
            std::vector<double> child(dims);
            for (std::size_t g = 0; g < dims; ++g) {
                child[g] = unit(rng) < 0.5 ? a[g] : b[g];
                child[g] = std::clamp(child[g] + gauss(rng), 0.0, 1.0);
            }
            next_fit.push_back(fitness(std::span<const double>(child)));
            next.push_back(std::move(child));
        }
        pop = std::move(next);
        fit = std::move(next_fit);
        rank();
        result.best_trace.push_back(std::min(fit[order[0]], result.best_trace.back()));
    }
    result.controls = from_normalized(pop[order[0]]);
    result.fitness = fit[order[0]];
    return result;
}

/// Global-best particle swarm in normalized space, velocities start at zero and
/// positions are clipped to the unit box.
template <class Fitness>
EvolutionResult fit_controls_pso(const Fitness& fitness, const EvolutionSettings& settings) {
    validate(settings, 1);
    const std::size_t dims = 2 + 2 * settings.num_free_constrictions;
    std::mt19937_64 rng(settings.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto pos = detail::random_population(settings.population, dims, rng);
    std::vector<std::vector<double>> vel(pos.size(), std::vector<double>(dims, 0.0));
    auto best_pos = pos;
    std::vector<double> best_fit(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) best_fit[i] = fitness(std::span<const double>(pos[i]));
    std::size_t leader = static_cast<std::size_t>(std::min_element(best_fit.begin(), best_fit.end()) - best_fit.begin());

    EvolutionResult result;
    result.best_trace.push_back(best_fit[leader]);
    for (int it = 0; it < settings.generations; ++it) {
        const std::vector<double> global = best_pos[leader];
        for (std::size_t i = 0; i < pos.size(); ++i) {
            for (std::size_t g = 0; g < dims; ++g) {
                vel[i][g] = settings.inertia * vel[i][g] +
                            settings.cognitive * unit(rng) * (best_pos[i][g] - pos[i][g]) +
                            settings.social * unit(rng) * (global[g] - pos[i][g]);
                pos[i][g] = std::clamp(pos[i][g] + vel[i][g], 0.0, 1.0);
            }
            const double f = fitness(std::span<const double>(pos[i]));
            if (f < best_fit[i]) {
                best_fit[i] = f;
                best_pos[i] = pos[i];
            }
        }
        leader = static_cast<std::size_t>(std::min_element(best_fit.begin(), best_fit.end()) - best_fit.begin());
        result.best_trace.push_back(best_fit[leader]);
    }
    result.controls = from_normalized(best_pos[leader]);
    result.fitness = best_fit[leader];
    return result;
}

inline EvolutionResult fit_controls_ga(const AudioBuffer& target_audio, const AudioBuffer& source,
                                       const EvolutionSettings& settings, std::size_t warmup = 0,
                                       const SimulationConfig& sim = {}) {
    return fit_controls_ga(MelFitness(target_audio, source, warmup, sim), settings);
}

inline EvolutionResult fit_controls_pso(const AudioBuffer& target_audio, const AudioBuffer& source,
                                        const EvolutionSettings& settings, std::size_t warmup = 0,
                                        const SimulationConfig& sim = {}) {
    return fit_controls_pso(MelFitness(target_audio, source, warmup, sim), settings);
}

// ---- in-domain recovery experiment -----------------------------------------------

struct ExperimentSettings {
    std::size_t trials_per_condition = 100;
    std::uint64_t seed = 0;
    GdSettings gd{};
    TransferConfig transfer{};
    double duration_s = 0.2;
    double frame_start_s = 0.1;
    double frame_s = 0.04;
    AspirationNoise noise{};
};

inline constexpr std::array<std::size_t, 3> kConstrictionCounts{0, 1, 2};

struct ConditionMetrics {
    double tongue_position = 0.0;   // segments
    double tongue_diameter = 0.0;   // cm
    double total_diameter = 0.0;    // cm, mean over all segments
    double frequency_response = 0.0;        // dB, gain-aligned against the optimization target
    double frequency_response_truth = 0.0;  // dB, against the ground-truth response
    std::size_t trials = 0;
    std::size_t failures = 0;
};

struct GlottalMetrics {
    double tenseness_original = 0.0;
    double f0_original = 0.0;
    double tenseness_recovered = 0.0;
    double f0_recovered = 0.0;
    std::size_t trials = 0;
    std::size_t failures = 0;
};

struct ExperimentReport {
    std::size_t trials_per_condition = 0;
    std::uint64_t seed = 0;
    std::array<ConditionMetrics, 3> given{};
    std::array<ConditionMetrics, 3> inverse_filtered{};
    std::array<GlottalMetrics, 3> glottal_by_condition{};
    GlottalMetrics glottal{};
    std::size_t failures = 0;

    bool has_failures() const { return failures > 0; }
};

/// One randomly drawn in-domain example. Glottal parameters are drawn before
/// the tract so every constriction condition shares them for a given index.
struct TrialSample {
    GlottalParams glottal;
    std::uint64_t noise_seed = 0;
    TractControls controls;
};

inline TrialSample draw_trial(std::uint64_t seed, std::size_t constrictions) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    TrialSample t;
    t.glottal.f0 = 80.0 + 120.0 * unit(rng);
    t.glottal.tenseness = unit(rng);
    t.noise_seed = rng();
    t.controls.tongue_position = kTonguePositionRange.denormalize(unit(rng));
    t.controls.tongue_diameter = kTongueDiameterRange.denormalize(unit(rng));
    for (std::size_t c = 0; c < constrictions; ++c) {
        const double position = kConstrictionPositionRange.denormalize(unit(rng));
        const double diameter = kConstrictionDiameterRange.denormalize(unit(rng));
        t.controls.constrictions.push_back({position, diameter});
    }
    return t;
}

namespace detail {

inline double mean_abs_diameter_error(const TractControls& a, const TractControls& b) {
    const auto da = area_function(a);
    const auto db = area_function(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < kSegments; ++i) acc += std::abs(da.diameters[i] - db.diameters[i]);
    return acc / static_cast<double>(kSegments);
}

inline void accumulate(ConditionMetrics& m, const TractControls& truth, const TractControls& fit,
                       const Spectrum& target, const Spectrum& truth_response, const FrequencyGrid& grid,
                       const SimulationConfig& sim) {
    const auto fitted = tract_response(fit, grid, sim);
    m.tongue_position += std::abs(fit.tongue_position - truth.tongue_position);
    m.tongue_diameter += std::abs(fit.tongue_diameter - truth.tongue_diameter);
    m.total_diameter += mean_abs_diameter_error(fit, truth);
    m.frequency_response += aligned_response_mae_db(fitted.magnitudes, target.magnitudes);
    m.frequency_response_truth += response_mae_db(fitted.magnitudes, truth_response.magnitudes);
    ++m.trials;
}

inline void finish(ConditionMetrics& m) {
    if (m.trials == 0) return;
    const double n = static_cast<double>(m.trials);
    m.tongue_position /= n;
    m.tongue_diameter /= n;
    m.total_diameter /= n;
    m.frequency_response /= n;
    m.frequency_response_truth /= n;
}

inline void finish(GlottalMetrics& m) {
    if (m.trials == 0) return;
    const double n = static_cast<double>(m.trials);
    m.tenseness_original /= n;
    m.f0_original /= n;
    m.tenseness_recovered /= n;
    m.f0_recovered /= n;
}

inline AudioBuffer slice(const AudioBuffer& a, std::size_t start, std::size_t length) {
    return AudioBuffer{std::vector<double>(a.samples.begin() + static_cast<std::ptrdiff_t>(start),
                                           a.samples.begin() + static_cast<std::ptrdiff_t>(start + length)),
                       a.sample_rate};
}

}  // namespace detail

/// Recovers randomly drawn tract configurations from their exact response and
/// from GFM-IAIF applied to synthesized audio, for 0, 1 and 2 constrictions.
inline ExperimentReport run_indomain_experiment(const ExperimentSettings& settings) {
    if (settings.trials_per_condition < 1) throw Error(ErrorKind::InvalidArgument, "trials must be >= 1");
    validate(settings.gd);
    const SimulationConfig& sim = settings.transfer.sim;
    const double fs = sim.sample_rate;
    const auto total = static_cast<std::size_t>(std::lround(settings.duration_s * fs));
    const auto start = static_cast<std::size_t>(std::lround(settings.frame_start_s * fs));
    const auto length = static_cast<std::size_t>(std::lround(settings.frame_s * fs));
    if (start + length > total) throw Error(ErrorKind::InvalidArgument, "analysis frame exceeds trial duration");

    const FrequencyGrid grid = settings.transfer.grid();
    TransferConfig given_config = settings.transfer;
    given_config.gain_invariant = false;
    TransferConfig if_config = settings.transfer;
    if_config.gain_invariant = true;
    const int tract_order = default_tract_order(fs);

    ExperimentReport report;
    report.trials_per_condition = settings.trials_per_condition;
    report.seed = settings.seed;
    for (std::size_t ci = 0; ci < kConstrictionCounts.size(); ++ci) {
        for (std::size_t i = 0; i < settings.trials_per_condition; ++i) {
            const TrialSample trial = draw_trial(settings.seed + i, kConstrictionCounts[ci]);
            const TractControls init = midpoint_controls(settings.gd.num_free_constrictions);
            const Spectrum truth_response = tract_response(trial.controls, grid, sim);

            const GdResult given = fit_controls_gd(truth_response, settings.gd, init, given_config);
            detail::accumulate(report.given[ci], trial.controls, given.controls, truth_response, truth_response, grid,
                               sim);

            const AudioBuffer source = synthesize_source(std::span<const GlottalParams>(&trial.glottal, 1), total,
                                                         total, fs, trial.noise_seed, settings.noise);
            AudioBuffer voice = kl_synthesize(source, trial.controls, sim);
            normalize_peak(voice, 0.9);
            const AudioBuffer frame = detail::slice(voice, start, length);
            const AudioBuffer source_frame = detail::slice(source, start, length);
            try {
                const IaifResult iaif = gfm_iaif(frame, tract_order);
                const Spectrum target = tract_response_from_iaif(iaif, grid.count);
                const GdResult fit = fit_controls_gd(target, settings.gd, init, if_config);
                detail::accumulate(report.inverse_filtered[ci], trial.controls, fit.controls, target,
                                   truth_response, grid, sim);

                const AudioBuffer gfd = settled_gfd(iaif);
                const double f0_a = estimate_f0(source_frame);
                const double t_a = estimate_tenseness(source_frame, f0_a);
                const double f0_b = estimate_f0(gfd);
                const double t_b = estimate_tenseness(gfd, f0_b);
                for (GlottalMetrics* g : {&report.glottal_by_condition[ci], &report.glottal}) {
                    g->f0_original += std::abs(f0_a - trial.glottal.f0);
                    g->tenseness_original += std::abs(t_a - trial.glottal.tenseness);
                    g->f0_recovered += std::abs(f0_b - trial.glottal.f0);
                    g->tenseness_recovered += std::abs(t_b - trial.glottal.tenseness);
                    ++g->trials;
                }
            } catch (const Error&) {
                ++report.inverse_filtered[ci].failures;
                ++report.glottal_by_condition[ci].failures;
                ++report.glottal.failures;
                ++report.failures;
            }
        }
        detail::finish(report.given[ci]);
        detail::finish(report.inverse_filtered[ci]);
        detail::finish(report.glottal_by_condition[ci]);
    }
    detail::finish(report.glottal);
    return report;
}

}  // namespace tractmatch
