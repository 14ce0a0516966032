#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <gtest/gtest.h>

#include "tractmatch/estimation.hpp"

using namespace tractmatch;

namespace {

// squared distance to a fixed point in normalized space, counts evaluations
struct Bowl {
    std::vector<double> centre;
    mutable int calls = 0;
    double operator()(std::span<const double> u) const {
        ++calls;
        double acc = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] - centre[i]) * (u[i] - centre[i]);
        return acc;
    }
};

EvolutionSettings small_settings(std::size_t population, int generations, std::size_t constrictions = 2) {
    EvolutionSettings s;
    s.population = population;
    s.generations = generations;
    s.num_free_constrictions = constrictions;
    s.seed = 3;
    return s;
}

void expect_in_box(const TractControls& c) {
    for (double u : to_normalized(c)) {
        EXPECT_GE(u, 0.0);
        EXPECT_LE(u, 1.0);
    }
}

void expect_non_increasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LE(v[i], v[i - 1]) << "at " << i;
}

}  // namespace

TEST(GradientDescent, ZeroStepsReturnsInitial) {
    const TransferConfig cfg;
    const Spectrum target = tract_response(TractControls{14.0, 2.0, {}}, cfg.grid());
    GdSettings s;
    s.steps = 0;
    s.num_free_constrictions = 0;
    const TractControls init{25.0, 3.0, {}};
    const GdResult r = fit_controls_gd(target, s, init, cfg);
    EXPECT_EQ(r.controls, init);
    ASSERT_EQ(r.loss_trace.size(), 1u);
    EXPECT_DOUBLE_EQ(r.loss, spectral_loss(init, target, cfg));
}

TEST(GradientDescent, BestTraceNonIncreasingAndLossDrops) {
    const TransferConfig cfg;
    const TrialSample t = draw_trial(11, 1);
    const Spectrum target = tract_response(t.controls, cfg.grid());
    const GdResult r = fit_controls_gd(target, GdSettings{}, midpoint_controls(2), cfg);
    ASSERT_EQ(r.best_trace.size(), 101u);
    expect_non_increasing(r.best_trace);
    EXPECT_EQ(r.best_trace.back(), r.loss);
    EXPECT_LT(r.loss, 0.5 * r.loss_trace.front());
    expect_in_box(r.controls);
}

TEST(GradientDescent, RecoversTongueOnSmallSample) {
    const TransferConfig cfg;
    double pos = 0.0, fr = 0.0;
    const int n = 8;
    for (int i = 0; i < n; ++i) {
        const TrialSample t = draw_trial(500 + i, 0);
        const Spectrum target = tract_response(t.controls, cfg.grid());
        const GdResult r = fit_controls_gd(target, GdSettings{}, midpoint_controls(2), cfg);
        pos += std::abs(r.controls.tongue_position - t.controls.tongue_position);
        fr += aligned_response_mae_db(tract_response(r.controls, cfg.grid()).magnitudes, target.magnitudes);
    }
    EXPECT_LT(pos / n, 6.0);
    EXPECT_LT(fr / n, 3.0);
}

TEST(GradientDescent, InvalidTarget) {
    const TransferConfig cfg;
    Spectrum target = tract_response(TractControls{}, cfg.grid());
    target.magnitudes[5] = std::numeric_limits<double>::quiet_NaN();
    try {
        fit_controls_gd(target, GdSettings{}, midpoint_controls(2), cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidTarget);
    }
}

TEST(GradientDescent, InvalidSettings) {
    const TransferConfig cfg;
    const Spectrum target = tract_response(TractControls{}, cfg.grid());
    GdSettings s;
    s.steps = -1;
    EXPECT_THROW(fit_controls_gd(target, s, midpoint_controls(2), cfg), Error);
    s = GdSettings{};
    s.num_free_constrictions = 5;
    EXPECT_THROW(fit_controls_gd(target, s, midpoint_controls(2), cfg), Error);
}

TEST(GradientDescent, Deterministic) {
    const TransferConfig cfg;
    const Spectrum target = tract_response(draw_trial(3, 2).controls, cfg.grid());
    const GdResult a = fit_controls_gd(target, GdSettings{}, midpoint_controls(2), cfg);
    const GdResult b = fit_controls_gd(target, GdSettings{}, midpoint_controls(2), cfg);
    EXPECT_EQ(a.controls, b.controls);
    EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Genetic, ConvergesOnBowl) {
    const Bowl f{{0.2, 0.8, 0.5, 0.1, 0.9, 0.3}};
    const EvolutionResult r = fit_controls_ga(f, small_settings(32, 60));
    EXPECT_LT(r.fitness, 0.01);
    expect_non_increasing(r.best_trace);
    EXPECT_EQ(r.best_trace.size(), 61u);
    EXPECT_NEAR(r.fitness, f(to_normalized(r.controls)), 1e-12);  // controls round-trip through physical units
    expect_in_box(r.controls);
}

TEST(Genetic, DeterministicPerSeed) {
    const Bowl f{{0.5, 0.5, 0.5, 0.5, 0.5, 0.5}};
    const EvolutionResult a = fit_controls_ga(f, small_settings(16, 10));
    const EvolutionResult b = fit_controls_ga(f, small_settings(16, 10));
    EXPECT_EQ(a.controls, b.controls);
    EXPECT_EQ(a.best_trace, b.best_trace);
}

TEST(Genetic, ElitismKeepsBest) {
    // with a single elite the per-generation best can never get worse
    EvolutionSettings s = small_settings(8, 20, 0);
    s.mutation_sigma = 0.5;
    const Bowl f{{0.3, 0.7}};
    const EvolutionResult r = fit_controls_ga(f, s);
    expect_non_increasing(r.best_trace);
    EXPECT_DOUBLE_EQ(r.fitness, r.best_trace.back());
}

TEST(Genetic, PopulationTwoSingleGeneration) {
    const Bowl f{{0.5, 0.5, 0.5, 0.5}};
    const EvolutionResult r = fit_controls_ga(f, small_settings(2, 1, 1));
    EXPECT_EQ(r.best_trace.size(), 2u);
    EXPECT_EQ(f.calls, 3);  // two initial, one child next to the elite
    EXPECT_EQ(r.controls.constrictions.size(), 1u);
}

TEST(Genetic, RejectsTinyPopulation) {
    const Bowl f{{0.5, 0.5}};
    EXPECT_THROW(fit_controls_ga(f, small_settings(1, 1, 0)), Error);
}

TEST(Swarm, ConvergesOnBowl) {
    const Bowl f{{0.2, 0.8, 0.5, 0.1, 0.9, 0.3}};
    const EvolutionResult r = fit_controls_pso(f, small_settings(24, 60));
    EXPECT_LT(r.fitness, 1e-3);
    expect_non_increasing(r.best_trace);
    EXPECT_NEAR(r.fitness, f(to_normalized(r.controls)), 1e-12);  // controls round-trip through physical units
    expect_in_box(r.controls);
}

TEST(Swarm, SingleParticle) {
    const Bowl f{{0.5, 0.5}};
    const EvolutionResult r = fit_controls_pso(f, small_settings(1, 5, 0));
    EXPECT_EQ(r.best_trace.size(), 6u);
    expect_non_increasing(r.best_trace);
}

TEST(Swarm, DeterministicPerSeed) {
    const Bowl f{{0.1, 0.2, 0.3, 0.4}};
    const EvolutionResult a = fit_controls_pso(f, small_settings(8, 10, 1));
    const EvolutionResult b = fit_controls_pso(f, small_settings(8, 10, 1));
    EXPECT_EQ(a.controls, b.controls);
}

TEST(MelFitness, ZeroAtTruthAndPositiveElsewhere) {
    const TrialSample t = draw_trial(21, 1);
    const std::size_t warmup = 2400, length = 4800;
    const AudioBuffer source = synthesize_source(std::span<const GlottalParams>(&t.glottal, 1), warmup + length,
                                                 warmup + length, 48000.0, t.noise_seed);
    const AudioBuffer full = kl_synthesize(source, t.controls);
    const AudioBuffer target{{full.samples.begin() + warmup, full.samples.end()}, 48000.0};
    const MelFitness f(target, source, warmup);
    EXPECT_NEAR(f(t.controls), 0.0, 1e-12);
    TractControls other = t.controls;
    other.tongue_position = other.tongue_position > 20 ? 12.0 : 28.0;
    EXPECT_GT(f(other), 0.0);
    EXPECT_THROW(MelFitness(target, source, warmup + 1), Error);
}

TEST(DrawTrial, SharedGlottisAcrossConditions) {
    const TrialSample a = draw_trial(9, 0), b = draw_trial(9, 2);
    EXPECT_EQ(a.glottal.f0, b.glottal.f0);
    EXPECT_EQ(a.glottal.tenseness, b.glottal.tenseness);
    EXPECT_EQ(a.controls.tongue_position, b.controls.tongue_position);
    EXPECT_EQ(b.controls.constrictions.size(), 2u);
    EXPECT_GE(a.glottal.f0, 80.0);
    EXPECT_LE(a.glottal.f0, 200.0);
    expect_in_box(b.controls);
}

TEST(Experiment, SingleTrialRuns) {
    ExperimentSettings s;
    s.trials_per_condition = 1;
    s.seed = 7;
    const ExperimentReport r = run_indomain_experiment(s);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(r.given[c].trials, 1u);
        EXPECT_EQ(r.inverse_filtered[c].trials + r.inverse_filtered[c].failures, 1u);
        EXPECT_TRUE(std::isfinite(r.given[c].frequency_response));
    }
    EXPECT_EQ(r.glottal.trials + r.glottal.failures, 3u);
}

TEST(Experiment, RejectsZeroTrials) {
    ExperimentSettings s;
    s.trials_per_condition = 0;
    EXPECT_THROW(run_indomain_experiment(s), Error);
}
