// tractmatch command line: match, synth, experiment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "tractmatch/error.hpp"
#include "tractmatch/estimation.hpp"
#include "tractmatch/pipeline.hpp"
#include "tractmatch/serialization.hpp"
#include "tractmatch/transfer_function.hpp"
#include "tractmatch/vocal_tract.hpp"
#include "tractmatch/wav_io.hpp"

namespace fs = std::filesystem;
using namespace tractmatch;

namespace {

enum Exit { kOk = 0, kInternal = 1, kInput = 2, kNoVoiced = 3 };

int verbosity = 1;

void log(int level, const std::string& msg) {
    if (verbosity >= level) std::cerr << msg << '\n';
}

// parent directory of an output must exist before any work starts
void check_output(const std::string& path, const char* flag) {
    if (path.empty()) return;
    const fs::path parent = fs::absolute(fs::path(path)).parent_path();
    if (!fs::is_directory(parent))
        throw Error(ErrorKind::Io, std::string(flag) + ": directory '" + parent.string() + "' does not exist");
}

// area function (segment, diameter) and fitted response (Hz, dB) per frame
std::string plot_csv(const ParameterTrack& track, std::size_t num_freqs, const SimulationConfig& sim) {
    std::ostringstream out;
    out.precision(10);
    out << "frame_index,curve,index,x,value\n";
    TransferConfig tc;
    tc.num_freqs = num_freqs;
    tc.sim = sim;
    const FrequencyGrid grid = tc.grid();
    for (const auto& f : track.frames) {
        const AreaFunction area = area_function(f.controls());
        for (std::size_t s = 0; s < kSegments; ++s)
            out << f.frame_index << ",area," << s << ',' << s << ',' << area.diameters[s] << '\n';
        const Spectrum h = tract_response(f.controls(), grid, sim);
        for (std::size_t k = 0; k < h.size(); ++k)
            out << f.frame_index << ",response," << k << ',' << h.bin_frequencies[k] << ','
                << 20.0 * safe_log10(h.magnitudes[k]) << '\n';
    }
    return out.str();
}

struct MatchArgs {
    std::string in, out_params, out_audio, plot;
    int steps = 100;
    double lr = 1e-4;
    double momentum = 0.9;
    std::size_t constrictions = 2;
    std::size_t freqs = 512;
    std::string optimizer = "gd";
    bool smooth = false;
    CLI::Option* smooth_opt = nullptr;
    int sg_window = 9;
    int sg_order = 3;
    double fps = 100.0;
    double window = 0.04;
    std::size_t population = 64;
    int generations = 100;
};

int cmd_match(const MatchArgs& a, std::uint64_t seed) {
    check_output(a.out_params, "--out-params");
    check_output(a.out_audio, "--out-audio");
    check_output(a.plot, "--plot-csv");

    MatchSettings s;
    s.frames_per_second = a.fps;
    s.window_s = a.window;
    s.gd.steps = a.steps;
    s.gd.step_size = a.lr;
    s.gd.momentum = a.momentum;
    s.gd.num_free_constrictions = a.constrictions;
    s.evolution.population = a.population;
    s.evolution.generations = a.generations;
    s.evolution.num_free_constrictions = a.constrictions;
    s.optimizer = parse_optimizer(a.optimizer);
    if (a.smooth_opt->count() > 0) s.smooth = a.smooth;
    s.sg_window = a.sg_window;
    s.sg_order = a.sg_order;
    s.num_freqs = a.freqs;
    s.seed = seed;
    validate(s);

    const AudioBuffer audio = wav_read(a.in, s.sim.sample_rate);
    log(2, "read " + a.in + ": " + std::to_string(audio.size()) + " samples at 48 kHz");
    const ParameterTrack track = match(audio, s);

    std::vector<double> losses;
    for (const auto& f : track.frames) {
        if (f.voiced) losses.push_back(f.loss);
        if (verbosity >= 2) {
            char line[160];
            std::snprintf(line, sizeof line, "frame %4zu  t %.3f  %s  f0 %6.1f  T %.3f  t_p %6.2f  t_d %.3f  loss %.5f",
                          f.frame_index, f.time_s, f.voiced ? "V" : "-", f.f0_hz, f.tenseness, f.tongue_position,
                          f.tongue_diameter, f.loss);
            log(2, line);
        }
    }
    std::vector<double> sorted = losses;
    std::sort(sorted.begin(), sorted.end());
    char summary[200];
    std::snprintf(summary, sizeof summary, "frames %zu, voiced %zu, loss mean %.5f median %.5f max %.5f",
                  track.frames.size(), losses.size(),
                  std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size()),
                  sorted[sorted.size() / 2], sorted.back());
    if (verbosity >= 1) std::cout << summary << '\n';

    std::vector<std::pair<fs::path, std::string>> outputs;
    if (!a.out_params.empty()) outputs.emplace_back(a.out_params, to_json(track).dump(2) + "\n");
    if (!a.out_audio.empty())
        outputs.emplace_back(a.out_audio, encode_wav(resynthesize(track, s.sim, seed, audio.size())));
    if (!a.plot.empty()) outputs.emplace_back(a.plot, plot_csv(track, a.freqs, s.sim));
    write_files_atomic(outputs);
    return kOk;
}

struct SynthArgs {
    std::string in, out, plot;
    double duration = 0.0;
    std::size_t freqs = 512;
};

int cmd_synth(const SynthArgs& a, std::uint64_t seed) {
    check_output(a.out, "--out-audio");
    check_output(a.plot, "--plot-csv");
    std::ifstream file(a.in, std::ios::binary);
    if (!file) throw Error(ErrorKind::Io, "cannot open '" + a.in + "'");
    std::stringstream text;
    text << file.rdbuf();
    const ParameterTrack track = track_from_string(text.str());
    const SimulationConfig sim;
    const auto n = static_cast<std::size_t>(std::lround(a.duration * sim.sample_rate));
    const AudioBuffer audio = resynthesize(track, sim, seed, n);
    log(1, "synthesized " + std::to_string(audio.size()) + " samples from " + std::to_string(track.frames.size()) +
               " frames");

    std::vector<std::pair<fs::path, std::string>> outputs;
    outputs.emplace_back(a.out, encode_wav(audio));
    if (!a.plot.empty()) outputs.emplace_back(a.plot, plot_csv(track, a.freqs, sim));
    write_files_atomic(outputs);
    return kOk;
}

struct ExperimentArgs {
    std::size_t trials = 100;
    std::string out_report, out_table;
    int steps = 100;
    double lr = 1e-4;
    double momentum = 0.9;
    std::size_t freqs = 512;
};

int cmd_experiment(const ExperimentArgs& a, std::uint64_t seed) {
    check_output(a.out_report, "--out-report");
    check_output(a.out_table, "--out-table");
    if (a.trials < 1) throw Error(ErrorKind::InvalidArgument, "--trials must be >= 1");
    ExperimentSettings s;
    s.trials_per_condition = a.trials;
    s.seed = seed;
    s.gd.steps = a.steps;
    s.gd.step_size = a.lr;
    s.gd.momentum = a.momentum;
    s.transfer.num_freqs = a.freqs;
    const ExperimentReport report = run_indomain_experiment(s);
    const std::string table = format_report_table(report);
    if (verbosity >= 1) std::cout << table;

    std::vector<std::pair<fs::path, std::string>> outputs;
    if (!a.out_report.empty()) outputs.emplace_back(a.out_report, to_json(report).dump(2) + "\n");
    if (!a.out_table.empty()) outputs.emplace_back(a.out_table, table);
    write_files_atomic(outputs);
    return kOk;
}

int exit_code(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::NoVoicedFrames: return kNoVoiced;
        case ErrorKind::Io:
        case ErrorKind::Schema:
        case ErrorKind::InvalidArgument:
        case ErrorKind::InvalidTarget: return kInput;
        default: return kInternal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Articulatory sound matching with a Kelly-Lochbaum vocal tract."};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::uint64_t seed = 0;
    int verbose = 0;
    bool quiet = false;
    app.add_option("--seed", seed, "Random seed (env TRACTMATCH_SEED)")->envname("TRACTMATCH_SEED");
    app.add_flag("-v,--verbose", verbose, "More output (repeatable)");
    app.add_flag("-q,--quiet", quiet, "Only errors");

    MatchArgs m;
    CLI::App* match_cmd = app.add_subcommand("match", "Estimate a parameter track from a WAV file");
    match_cmd->add_option("--in", m.in, "Input WAV (PCM16 or float32)")->required()->check(CLI::ExistingFile);
    match_cmd->add_option("--out-params", m.out_params, "Parameter track JSON");
    match_cmd->add_option("--out-audio", m.out_audio, "Resynthesized WAV (float32, 48 kHz)");
    match_cmd->add_option("--plot-csv", m.plot, "Area function and response curves as CSV");
    match_cmd->add_option("--steps", m.steps, "Gradient steps per frame")->check(CLI::NonNegativeNumber);
    match_cmd->add_option("--lr", m.lr, "Gradient step size")->check(CLI::PositiveNumber);
    match_cmd->add_option("--momentum", m.momentum, "Momentum")->check(CLI::Range(0.0, 1.0));
    match_cmd->add_option("--constrictions", m.constrictions, "Free constrictions")->check(CLI::Range(0, 4));
    match_cmd->add_option("--freqs", m.freqs, "Frequency grid size")->check(CLI::PositiveNumber);
    match_cmd->add_option("--optimizer", m.optimizer, "Optimizer")->check(CLI::IsMember({"gd", "ga", "pso"}));
    m.smooth_opt = match_cmd->add_flag("--smooth,!--no-smooth", m.smooth,
                                       "Savitzky-Golay smoothing (default: on for ga/pso, off for gd)");
    match_cmd->add_option("--sg-window", m.sg_window, "Smoothing window (odd)");
    match_cmd->add_option("--sg-order", m.sg_order, "Smoothing polynomial order");
    match_cmd->add_option("--fps", m.fps, "Analysis frames per second")->check(CLI::PositiveNumber);
    match_cmd->add_option("--window", m.window, "Analysis window [s]")->check(CLI::PositiveNumber);
    match_cmd->add_option("--population", m.population, "GA/PSO population size")->check(CLI::PositiveNumber);
    match_cmd->add_option("--generations", m.generations, "GA/PSO generations")->check(CLI::NonNegativeNumber);

    SynthArgs sy;
    CLI::App* synth_cmd = app.add_subcommand("synth", "Render a parameter track to a WAV file");
    synth_cmd->add_option("--in", sy.in, "Parameter track JSON")->required()->check(CLI::ExistingFile);
    synth_cmd->add_option("--out-audio,--out", sy.out, "Output WAV (float32, 48 kHz)")->required();
    synth_cmd->add_option("--duration", sy.duration, "Length [s], 0 = one hop per frame")
        ->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--plot-csv", sy.plot, "Area function and response curves as CSV");
    synth_cmd->add_option("--freqs", sy.freqs, "Frequency grid size for --plot-csv")->check(CLI::PositiveNumber);

    ExperimentArgs ex;
    CLI::App* exp_cmd = app.add_subcommand("experiment", "In-domain recovery experiment on synthetic vowels");
    exp_cmd->add_option("--trials", ex.trials, "Trials per constriction condition")->check(CLI::PositiveNumber);
    exp_cmd->add_option("--out-report", ex.out_report, "Report JSON");
    exp_cmd->add_option("--out-table", ex.out_table, "Report table (text)");
    exp_cmd->add_option("--steps", ex.steps, "Gradient steps")->check(CLI::NonNegativeNumber);
    exp_cmd->add_option("--lr", ex.lr, "Gradient step size")->check(CLI::PositiveNumber);
    exp_cmd->add_option("--momentum", ex.momentum, "Momentum")->check(CLI::Range(0.0, 1.0));
    exp_cmd->add_option("--freqs", ex.freqs, "Frequency grid size")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInput;
    }
    verbosity = quiet ? 0 : 1 + verbose;

    try {
        if (*match_cmd) return cmd_match(m, seed);
        if (*synth_cmd) return cmd_synth(sy, seed);
        if (*exp_cmd) return cmd_experiment(ex, seed);
    } catch (const Error& e) {
        std::cerr << "tractmatch: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "tractmatch: internal error: " << e.what() << '\n';
        return kInternal;
    }
    return kInternal;
}
