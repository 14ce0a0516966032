// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tractmatch/estimation.hpp"
#include "tractmatch/pipeline.hpp"
#include "tractmatch/serialization.hpp"
#include "tractmatch/wav_io.hpp"

using namespace tractmatch;
namespace fs = std::filesystem;

namespace {

constexpr double kFs = 48000.0;

struct Outcome {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += "[FAIL " + what + "] ";
        }
    }
    void note(const std::string& s) { detail += s + " "; }
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TractControls random_controls(std::mt19937_64& rng, std::size_t constrictions) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(2 + 2 * constrictions);
    for (double& x : v) x = u(rng);
    return from_normalized(v);
}

// ---- 1 ------------------------------------------------------------------

Outcome gradient_correctness() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    const TransferConfig cfg;
    const double h = 1e-5;
    double worst = 0.0;
    std::size_t checked = 0, bad = 0;
    for (int i = 0; i < 200; ++i) {
        const TractControls c = random_controls(rng, static_cast<std::size_t>(i % 3));
        const Spectrum target = tract_response(random_controls(rng, static_cast<std::size_t>((i / 3) % 3)), cfg.grid());
        const LossGradient g = loss_gradient(c, target, cfg);
        const auto u = to_normalized(c);
        for (std::size_t j = 0; j < u.size(); ++j) {
            auto up = u, dn = u;
            up[j] += h;
            dn[j] -= h;
            const double fd = (spectral_loss(from_normalized(up), target, cfg) -
                               spectral_loss(from_normalized(dn), target, cfg)) / (2.0 * h);
            if (std::abs(g.partials[j]) <= 1e-8) continue;
            const double rel = std::abs(g.partials[j] - fd) / std::abs(g.partials[j]);
            worst = std::max(worst, rel);
            ++checked;
            if (rel >= 1e-3) ++bad;
        }
    }
    const double elapsed = seconds_since(t0);
    o.check(bad == 0, std::to_string(bad) + " partials off");
    o.check(elapsed < 30.0, "runtime");
    o.note("partials " + std::to_string(checked) + ", worst rel err " + fmt("%.2e", worst) + ", " +
           fmt("%.1f s", elapsed));
    return o;
}

// ---- 2 ------------------------------------------------------------------

double max_db_gap(const ReflectionModel& model, const AudioBuffer& h) {
    const Spectrum s = magnitude_spectrum(h, h.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double f = s.bin_frequencies[k];
        if (f < 100.0 || f > 8000.0) continue;
        const double analytic = std::abs(evaluate_hkl(model, 2.0 * std::numbers::pi * f / kFs));
        worst = std::max(worst, std::abs(20.0 * std::log10(s.magnitudes[k] / analytic)));
    }
    return worst;
}

Outcome analytic_equivalence() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = 16384;
    AudioBuffer impulse{std::vector<double>(n, 0.0), kFs};
    impulse.samples[0] = 1.0;

    std::mt19937_64 rng(99);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const TractControls c = random_controls(rng, static_cast<std::size_t>(i % 3));
        worst = std::max(worst, max_db_gap(reflection_coefficients(area_function(c)), kl_synthesize(impulse, c)));
    }
    o.check(worst <= 1.0, "random tracts");

    // uniform tube: waveguide peak against the closed form (1 + z^-1) z^-22 / (1 - R0 RL z^-44)
    AreaFunction uniform;
    uniform.diameters.fill(1.5);
    const ReflectionModel model = reflection_coefficients(uniform);
    const std::size_t m = 65536;
    KellyLochbaumTract tract(model);
    AudioBuffer h{std::vector<double>(m), kFs};
    for (std::size_t i = 0; i < m; ++i) {
        const double in = i == 0 ? 1.0 : 0.0;
        h.samples[i] = tract.tick(in) + tract.tick(in);
    }
    const Spectrum s = magnitude_spectrum(h, m);
    std::size_t peak = 1;
    for (std::size_t k = 1; k < s.size() && s.bin_frequencies[k] < 1000.0; ++k)
        if (s.magnitudes[k] > s.magnitudes[peak]) peak = k;
    double closed_peak = 0.0, closed_best = 0.0;
    for (double f = 100.0; f < 1000.0; f += 0.1) {
        const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f / kFs);
        const double mag = std::abs((1.0 + z1) * std::pow(z1, 22) / (1.0 - 0.75 * -0.85 * std::pow(z1, 44)));
        if (mag > closed_best) {
            closed_best = mag;
            closed_peak = f;
        }
    }
    const double f1 = s.bin_frequencies[peak];
    o.check(std::abs(f1 - 545.0) <= 15.0, "waveguide resonance");
    o.check(std::abs(closed_peak - 545.0) <= 15.0, "closed-form resonance");
    const double elapsed = seconds_since(t0);
    o.check(elapsed < 10.0, "runtime");
    o.note("worst gap " + fmt("%.3f dB", worst) + ", uniform tube F1 " + fmt("%.1f Hz", f1) + " (closed form " +
           fmt("%.1f Hz", closed_peak) + "), " + fmt("%.1f s", elapsed));
    return o;
}

// ---- 3, 4, 5 --------------------------------------------------------------

std::string row(const std::array<ConditionMetrics, 3>& m, double ConditionMetrics::*field) {
    std::string s;
    for (std::size_t c = 0; c < 3; ++c) s += (c ? "/" : "") + fmt("%.3f", m[c].*field);
    return s;
}

constexpr double ConditionMetrics::*kMetrics[] = {&ConditionMetrics::tongue_position, &ConditionMetrics::tongue_diameter,
                                                 &ConditionMetrics::total_diameter,
                                                 &ConditionMetrics::frequency_response};
constexpr const char* kMetricNames[] = {"t_p", "t_d", "total diameter", "FR"};

Outcome given_column(const ExperimentReport& r) {
    Outcome o;
    const ConditionMetrics& g0 = r.given[0];
    o.check(g0.tongue_position <= 0.6, "t_p MAE");
    o.check(g0.tongue_diameter <= 0.06, "t_d MAE");
    o.check(g0.total_diameter <= 0.05, "total diameter MAE");
    o.check(g0.frequency_response <= 0.5, "FR MAE");
    o.check(r.given[2].frequency_response <= 1.5, "FR MAE at 2 constrictions");
    for (std::size_t k = 0; k < 4; ++k) {
        const auto f = kMetrics[k];
        o.check(r.given[0].*f <= r.given[1].*f && r.given[1].*f <= r.given[2].*f,
                std::string("monotone ") + kMetricNames[k]);
    }
    for (std::size_t k = 0; k < 4; ++k) o.note(std::string(kMetricNames[k]) + " " + row(r.given, kMetrics[k]));
    return o;
}

Outcome if_column(const ExperimentReport& r) {
    Outcome o;
    o.check(r.inverse_filtered[0].frequency_response <= 3.5, "FR MAE at 0 constrictions");
    o.check(r.inverse_filtered[2].frequency_response <= 4.0, "FR MAE at 2 constrictions");
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < 4; ++k) {
            const auto f = kMetrics[k];
            o.check(r.given[c].*f < r.inverse_filtered[c].*f,
                    std::string("given below IF, ") + kMetricNames[k] + " at " + std::to_string(c));
        }
    for (std::size_t k = 0; k < 4; ++k) o.note(std::string(kMetricNames[k]) + " " + row(r.inverse_filtered, kMetrics[k]));
    o.note("failures " + std::to_string(r.failures));
    return o;
}

double relative_spread(const std::array<GlottalMetrics, 3>& g, double GlottalMetrics::*field) {
    double lo = 1e300, hi = -1e300, mean = 0.0;
    for (const auto& m : g) {
        lo = std::min(lo, m.*field);
        hi = std::max(hi, m.*field);
        mean += m.*field / 3.0;
    }
    return mean > 0.0 ? (hi - lo) / mean : 0.0;
}

Outcome glottal_estimation(const ExperimentReport& r) {
    Outcome o;
    const GlottalMetrics& g = r.glottal;
    o.check(g.tenseness_original <= 0.05, "original T MAE");
    o.check(g.f0_original <= 0.5, "original F0 MAE");
    o.check(g.tenseness_recovered <= 0.10, "recovered T MAE");
    o.check(g.f0_recovered <= 1.0, "recovered F0 MAE");
    const double so_t = relative_spread(r.glottal_by_condition, &GlottalMetrics::tenseness_original);
    const double so_f = relative_spread(r.glottal_by_condition, &GlottalMetrics::f0_original);
    const double sr_t = relative_spread(r.glottal_by_condition, &GlottalMetrics::tenseness_recovered);
    const double sr_f = relative_spread(r.glottal_by_condition, &GlottalMetrics::f0_recovered);
    o.check(so_t < 0.02 && so_f < 0.02, "constriction independence, original");
    o.check(sr_t < 0.02 && sr_f < 0.02, "constriction independence, recovered");
    o.note("original T " + fmt("%.4f", g.tenseness_original) + " F0 " + fmt("%.3f Hz", g.f0_original) +
           "; recovered T " + fmt("%.4f", g.tenseness_recovered) + " F0 " + fmt("%.3f Hz", g.f0_recovered) + ";");
    std::string groups;
    for (std::size_t c = 0; c < 3; ++c)
        groups += (c ? "/" : "") + fmt("%.4f", r.glottal_by_condition[c].tenseness_recovered);
    o.note("recovered T by group " + groups + ";");
    groups.clear();
    for (std::size_t c = 0; c < 3; ++c) groups += (c ? "/" : "") + fmt("%.3f", r.glottal_by_condition[c].f0_recovered);
    o.note("recovered F0 by group " + groups + ";");
    o.note("spread original " + fmt("%.1f%%", 100 * std::max(so_t, so_f)) + ", recovered T " +
           fmt("%.1f%%", 100 * sr_t) + " F0 " + fmt("%.1f%%", 100 * sr_f));
    return o;
}

// ---- 6 ------------------------------------------------------------------

Outcome baseline_sanity() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const FrequencyGrid grid{512};
    const std::size_t warmup = 960, length = 1920, lead = 4800, total = lead + length;
    double fr_gd = 0.0, fr_ga = 0.0, fr_pso = 0.0;
    std::string reductions;
    for (int k = 0; k < 5; ++k) {
        const TrialSample trial = draw_trial(100 + static_cast<std::uint64_t>(k), static_cast<std::size_t>(k % 3));
        const AudioBuffer source = synthesize_source(std::span<const GlottalParams>(&trial.glottal, 1), total, total,
                                                     kFs, trial.noise_seed);
        AudioBuffer voice = kl_synthesize(source, trial.controls);
        normalize_peak(voice, 0.9);
        const AudioBuffer frame{{voice.samples.begin() + lead, voice.samples.end()}, kFs};

        EvolutionSettings es;
        es.seed = static_cast<std::uint64_t>(k);

        // optimizer check: the generating source, so the true controls score zero
        const AudioBuffer exact{{source.samples.begin() + (lead - warmup), source.samples.end()}, kFs};
        const MelFitness exact_fit(frame, exact, warmup);
        for (const bool ga : {true, false}) {
            const EvolutionResult r = ga ? fit_controls_ga(exact_fit, es) : fit_controls_pso(exact_fit, es);
            const double reduction = 1.0 - r.fitness / r.best_trace.front();
            o.check(reduction >= 0.5, std::string(ga ? "GA" : "PSO") + " reduction on target " + std::to_string(k));
            reductions += (reductions.empty() ? "" : " ") + fmt("%.0f%%", 100 * reduction);
        }

        // matching setting: every method sees only the audio
        const IaifResult iaif = gfm_iaif(frame, 50);
        const AudioBuffer gfd = settled_gfd(iaif);
        GlottalParams est{estimate_f0(gfd), 0.0};
        est.tenseness = estimate_tenseness(gfd, est.f0);
        const AudioBuffer guessed_full = synthesize_source(std::span<const GlottalParams>(&est, 1), total, total, kFs, 12345);
        const AudioBuffer guessed{{guessed_full.samples.begin() + (lead - warmup), guessed_full.samples.end()}, kFs};
        const MelFitness fit(frame, guessed, warmup);
        TransferConfig cfg;
        cfg.gain_invariant = true;
        const GdResult gd = fit_controls_gd(tract_response_from_iaif(iaif, grid.count), GdSettings{}, midpoint_controls(2), cfg);
        const Spectrum truth = tract_response(trial.controls, grid);
        auto fr = [&](const TractControls& c) {
            return aligned_response_mae_db(tract_response(c, grid).magnitudes, truth.magnitudes);
        };
        fr_gd += fr(gd.controls) / 5.0;
        fr_ga += fr(fit_controls_ga(fit, es).controls) / 5.0;
        fr_pso += fr(fit_controls_pso(fit, es).controls) / 5.0;
    }
    o.check(fr_gd < fr_ga && fr_gd < fr_pso, "gradient method FR");
    o.note("fitness reductions (GA PSO per target) " + reductions + "; FR vs truth GD " + fmt("%.2f", fr_gd) + " GA " +
           fmt("%.2f", fr_ga) + " PSO " + fmt("%.2f dB", fr_pso) + ", " + fmt("%.0f s", seconds_since(t0)));
    return o;
}

// ---- 7 ------------------------------------------------------------------

AudioBuffer render_clip(const std::function<TractControls(double)>& tract_at, GlottalParams g, double seconds,
                        std::uint64_t seed) {
    const std::size_t hop = 480;
    const auto frames = static_cast<std::size_t>(seconds * kFs / hop);
    std::vector<GlottalParams> gl(frames, g);
    std::vector<TractControls> c;
    for (std::size_t i = 0; i < frames; ++i) c.push_back(tract_at(static_cast<double>(i) / frames));
    AudioBuffer v = kl_synthesize(synthesize_source(gl, hop, frames * hop, kFs, seed), c, hop);
    normalize_peak(v, 0.9);
    return v;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.empty() ? 1e300 : v[v.size() / 2];
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string("\"") + TRACTMATCH_CLI + "\" -q " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome pipeline_round_trip() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    MatchSettings settings;

    // static vowels: F0 of the estimated track and of the resynthesis
    std::vector<double> err_track, err_resynth;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const TrialSample t = draw_trial(300 + s, s % 3);
        const AudioBuffer clip = render_clip([&](double) { return t.controls; }, t.glottal, 0.3, t.noise_seed);
        const ParameterTrack track = match(clip, settings);
        const ParameterTrack again = match(resynthesize(track, {}, s, clip.size()), settings);
        for (const auto& f : track.frames)
            if (f.voiced) err_track.push_back(std::abs(f.f0_hz - t.glottal.f0));
        for (const auto& f : again.frames)
            if (f.voiced) err_resynth.push_back(std::abs(f.f0_hz - t.glottal.f0));
    }
    const double med_track = median(err_track), med_resynth = median(err_resynth);
    o.check(med_track <= 2.0 && med_resynth <= 2.0, "F0 contour");

    // sweeps both ways
    std::string rhos;
    for (const bool up : {true, false}) {
        const AudioBuffer clip = render_clip(
            [&](double x) { return TractControls{up ? 14.0 + 13.0 * x : 27.0 - 13.0 * x, 2.2, {}}; },
            GlottalParams{115.0, 0.7}, 0.5, 3);
        MatchSettings s = settings;
        s.gd.num_free_constrictions = 0;
        const ParameterTrack track = match(clip, s);
        std::vector<double> time, tp;
        for (const auto& f : track.frames)
            if (f.voiced) {
                time.push_back(f.time_s);
                tp.push_back(f.tongue_position);
            }
        const double rho = up ? spearman(time, tp) : -spearman(time, tp);
        o.check(rho >= 0.9, up ? "rising sweep" : "falling sweep");
        rhos += (rhos.empty() ? "" : "/") + fmt("%.3f", rho);
    }

    // formats and determinism
    const TrialSample t = draw_trial(400, 1);
    const AudioBuffer clip = render_clip([&](double) { return t.controls; }, t.glottal, 0.15, 1);
    const ParameterTrack a = match(clip, settings);
    o.check(a == match(clip, settings), "match determinism");
    o.check(track_from_string(to_json(a).dump()) == a, "track JSON round trip");
    const AudioBuffer ra = resynthesize(a, {}, 9);
    o.check(ra.samples == resynthesize(a, {}, 9).samples, "resynthesis determinism");
    AudioBuffer as_float = ra;
    for (double& v : as_float.samples) v = static_cast<double>(static_cast<float>(v));
    o.check(parse_wav(encode_wav(ra)).samples == as_float.samples, "WAV round trip");
    ExperimentSettings es;
    es.trials_per_condition = 2;
    es.seed = 5;
    const Json rep = to_json(run_indomain_experiment(es));
    o.check(rep == to_json(run_indomain_experiment(es)), "experiment determinism");
    o.check(Json::parse(rep.dump()) == rep, "report JSON round trip");
    EvolutionSettings evo;
    evo.population = 8;
    evo.generations = 3;
    o.check(fit_controls_ga(MelFitness(clip, clip), evo).controls == fit_controls_ga(MelFitness(clip, clip), evo).controls &&
                fit_controls_pso(MelFitness(clip, clip), evo).controls ==
                    fit_controls_pso(MelFitness(clip, clip), evo).controls,
            "baseline determinism");

    // command line, every subcommand twice with the same seed
    const fs::path dir = fs::temp_directory_path() / ("tractmatch_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    wav_write(dir / "in.wav", clip);
    bool cli_ok = true;
    for (const char* tag : {"1", "2"}) {
        const std::string p = (dir / (std::string("p") + tag + ".json")).string();
        cli_ok = cli_ok && run_cli("match --seed 4 --in " + (dir / "in.wav").string() + " --steps 20 --out-params " + p +
                                   " --out-audio " + (dir / (std::string("m") + tag + ".wav")).string()) == 0;
        cli_ok = cli_ok && run_cli("synth --seed 4 --in " + p + " --out " +
                                   (dir / (std::string("s") + tag + ".wav")).string()) == 0;
        cli_ok = cli_ok && run_cli("experiment --seed 4 --trials 1 --steps 10 --out-report " +
                                   (dir / (std::string("r") + tag + ".json")).string()) == 0;
    }
    for (const char* stem : {"p", "m", "s", "r"}) {
        const std::string ext = (std::string(stem) == "p" || std::string(stem) == "r") ? ".json" : ".wav";
        cli_ok = cli_ok && slurp(dir / (stem + std::string("1") + ext)) == slurp(dir / (stem + std::string("2") + ext)) &&
                 !slurp(dir / (stem + std::string("1") + ext)).empty();
    }
    fs::remove_all(dir);
    o.check(cli_ok, "command-line determinism");

    o.note("median F0 error track " + fmt("%.2f", med_track) + " / resynthesis " + fmt("%.2f Hz", med_resynth) +
           "; sweep rank correlation " + rhos + ", " + fmt("%.0f s", seconds_since(t0)));
    return o;
}

void report(int n, const std::string& name, const Outcome& o, int& failures) {
    std::printf("criterion %d %s: %s  %s\n", n, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

}  // namespace

int main() {
    int failures = 0;
    report(1, "gradient correctness", gradient_correctness(), failures);
    report(2, "analytic/time-domain equivalence", analytic_equivalence(), failures);

    ExperimentSettings settings;
    settings.trials_per_condition = 100;
    settings.seed = 7;
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentReport r = run_indomain_experiment(settings);
    std::printf("experiment: 100 trials per condition, seed 7, %.0f s\n%s", seconds_since(t0),
                format_report_table(r).c_str());
    report(3, "given-response recovery", given_column(r), failures);
    report(4, "inverse-filtered recovery", if_column(r), failures);
    report(5, "glottal estimation", glottal_estimation(r), failures);
    report(6, "baseline sanity", baseline_sanity(), failures);
    report(7, "pipeline round trip", pipeline_round_trip(), failures);
    std::printf("%d of 7 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
