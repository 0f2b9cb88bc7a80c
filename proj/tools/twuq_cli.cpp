// twuq: data generation, ensemble training, evaluation and sweeps.
//
//   twuq gen --config exp.toml --split test --out data/test.twuq
//   twuq train --config exp.toml --members 4 --out model/
//   twuq eval --config exp.toml --model model/ --data data/test.twuq --out eval/
//   twuq sweep-calibration --config exp.toml --model model/ --out sweep/
//   twuq sweep-noise --config exp.toml --model model/ --out noise/
//   twuq report --runs runs/

#include "twuq/config.hpp"
#include "twuq/errors.hpp"
#include "twuq/experiment.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdlib>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace twuq;

namespace {

std::vector<double> parse_list(const std::string& s, const char* flag) {
    std::vector<double> v;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(std::string(flag) + ": bad number '" + item + "'");
        }
    }
    if (v.empty()) throw ConfigError(std::string(flag) + " is empty");
    return v;
}

void configure_threads(bool deterministic) {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("TWUQ_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    if (deterministic) n = 1;
    omp_set_num_threads(n);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ensemble U-Net uncertainty quantification for four-channel optical form measurement"};
    app.require_subcommand(1);
    // Global flags may also follow the subcommand.
    app.fallthrough();
    app.set_version_flag("--version", experiment::kToolVersion);

    std::string config_path;
    bool deterministic = false, allow_m1 = false, quiet = false;
    app.add_option("--config", config_path, "experiment config (TOML subset); defaults when omitted");
    app.add_flag("--deterministic", deterministic, "run on a single thread");
    app.add_flag("--allow-m1", allow_m1, "accept single-member ensembles");
    app.add_flag("-q,--quiet", quiet, "suppress progress output");

    std::string split = "test", out, data, model, alphas, sigmas, runs;
    std::uint64_t seed = 0;
    std::size_t members = 0;
    double z = 1.96;

    auto* gen = app.add_subcommand("gen", "generate a dataset split");
    gen->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}));
    gen->add_option("--out", out, "output TWUQ file")->required();
    auto* seed_opt = gen->add_option("--seed", seed, "base seed override");

    auto* train = app.add_subcommand("train", "train the ensemble");
    train->add_option("--members", members, "ensemble size (config default)");
    train->add_option("--out", out, "checkpoint directory")->required();
    train->add_option("--data", data, "training TWUQ file; generated from the config when omitted");

    auto* eval = app.add_subcommand("eval", "evaluate an ensemble on a dataset");
    eval->add_option("--model", model, "checkpoint directory")->required();
    eval->add_option("--data", data, "test TWUQ file")->required();
    eval->add_option("--z", z, "tube half-width in units of uc (config default 1.96)");
    eval->add_option("--out", out, "output directory")->required();

    auto* sweep_cal = app.add_subcommand("sweep-calibration", "calibration-error sweep");
    sweep_cal->add_option("--model", model, "checkpoint directory")->required();
    sweep_cal->add_option("--alphas", alphas, "comma-separated error fractions");
    sweep_cal->add_option("--out", out, "output directory")->required();

    auto* sweep_noise = app.add_subcommand("sweep-noise", "noise x calibration-error sweep");
    sweep_noise->add_option("--model", model, "checkpoint directory")->required();
    sweep_noise->add_option("--sigmas", sigmas, "comma-separated noise levels [m]");
    sweep_noise->add_option("--alphas", alphas, "comma-separated error fractions");
    sweep_noise->add_option("--out", out, "output directory")->required();

    auto* report = app.add_subcommand("report", "merge run outputs into a markdown report");
    report->add_option("--runs", runs, "directory holding run outputs")->required();
    report->add_option("--out", out, "report directory (default <runs>/report)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::Usage);
    }

    try {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        cfg.validate();
        configure_threads(deterministic);
        experiment::Options opt;
        opt.allow_single_member = allow_m1;
        opt.log = quiet ? nullptr : &std::cout;

        if (*gen) {
            std::optional<std::uint64_t> s;
            if (*seed_opt) s = seed;
            experiment::cmd_gen(cfg, experiment::parse_split(split), out, s, opt);
        } else if (*train) {
            const auto status =
                experiment::cmd_train(cfg, members ? members : cfg.ensemble.members, out, data, opt);
            std::size_t failed = 0;
            for (const auto& st : status) {
                if (!st.ok) {
                    ++failed;
                    std::cerr << "member " << st.index << " (seed " << st.seed << ") failed: " << st.error << "\n";
                }
            }
            if (failed) return static_cast<int>(ExitCode::Training);
        } else if (*eval) {
            experiment::cmd_eval(cfg, model, data, *eval->get_option("--z") ? z : cfg.sweep.z, out, opt);
        } else if (*sweep_cal) {
            const auto a = alphas.empty() ? cfg.sweep.alphas : parse_list(alphas, "--alphas");
            experiment::cmd_sweep_calibration(cfg, model, a, out, opt);
        } else if (*sweep_noise) {
            const auto a = alphas.empty() ? cfg.sweep.alphas : parse_list(alphas, "--alphas");
            const auto s = sigmas.empty() ? cfg.sweep.sigmas : parse_list(sigmas, "--sigmas");
            experiment::cmd_sweep_noise(cfg, model, s, a, out, opt);
        } else if (*report) {
            const fs::path dest = out.empty() ? fs::path(runs) / "report" : fs::path(out);
            const auto path = experiment::cmd_report(runs, dest, opt);
            std::cout << path.string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(exit_code(e));
    }
    return 0;
}
