// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   twuq_acceptance [--work DIR] [--reuse]
//
// --reuse keeps an existing desk-scale model in DIR instead of retraining.

#include "twuq/binary_io.hpp"
#include "twuq/config.hpp"
#include "twuq/dataset.hpp"
#include "twuq/errors.hpp"
#include "twuq/nn/unet.hpp"
#include "twuq/optics.hpp"
#include "twuq/text.hpp"
#include "twuq/zernike.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace twuq;
using Clock = std::chrono::steady_clock;

namespace {

fs::path g_work = "acceptance_work";
bool g_reuse = false;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int shell(const std::string& cmd, const fs::path& log) {
    const std::string full = cmd + " >> " + log.string() + " 2>&1";
    const int status = std::system(full.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int cli(const std::string& args, const fs::path& log) {
    return shell(std::string(TWUQ_CLI_PATH) + " " + args, log);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Comment lines ('#') are skipped; the first remaining line is the header.
std::vector<std::map<std::string, double>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    std::vector<std::string> header;
    std::vector<std::map<std::string, double>> rows;
    for (std::string line; std::getline(in, line);) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (header.empty()) {
            header = cells;
            continue;
        }
        std::map<std::string, double> row;
        for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = std::stod(cells[i]);
        rows.push_back(row);
    }
    return rows;
}

std::vector<double> column(const std::vector<std::map<std::string, double>>& rows, const std::string& key) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.at(key));
    return v;
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) { return pearson(ranks(x), ranks(y)); }

// Runs a subset of the unit-test binary and checks that it ran at least one
// case and none failed.
Outcome unit_subset(const std::string& filter, double limit_s) {
    const fs::path log = g_work / "unit_subset.log";
    fs::remove(log);
    const auto t0 = Clock::now();
    const int rc = shell(std::string(TWUQ_TESTS_PATH) + " --test-case=\"" + filter + "\"", log);
    const double dt = seconds_since(t0);
    const std::string out = slurp(log);
    std::smatch m;
    std::size_t cases = 0, failed = 1;
    if (std::regex_search(out, m, std::regex(R"(test cases:\s*(\d+)\s*\|\s*(\d+) passed\s*\|\s*(\d+) failed)"))) {
        cases = std::stoul(m[1]);
        failed = std::stoul(m[3]);
    }
    Outcome o;
    o.pass = rc == 0 && cases > 0 && failed == 0 && dt < limit_s;
    o.detail = std::to_string(cases) + " cases, " + std::to_string(failed) + " failed, " + num(std::round(dt * 10) / 10) +
               " s (limit " + num(limit_s) + " s)";
    return o;
}

// --- criteria ----------------------------------------------------------

Outcome zernike_orthonormality() {
    const auto t0 = Clock::now();
    const DiscGrid grid(512);
    const auto g = zernike::gram_matrix(16, grid);
    double worst = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            worst = std::max(worst, std::abs(g(i, j) / std::numbers::pi - (i == j ? 1.0 : 0.0)));
        }
    }
    const double dt = seconds_since(t0);
    return {worst < 1e-2 && dt < 30.0, "max |gram/pi - delta| = " + num(worst) + " over j <= 15, " + num(dt) + " s"};
}

Outcome format_round_trips() {
    const fs::path dir = g_work / "formats";
    fs::create_directories(dir);
    ExperimentConfig cfg;
    cfg.reference.probe_count = 4;
    const auto system = make_system(cfg);
    const auto ds = dataset::build_dataset({16, 3, 0.4, 10e-9, cfg.hash()}, system, cfg.generation);
    dataset::save_dataset(ds, dir / "a.twuq");
    const auto back = dataset::load_dataset(dir / "a.twuq");
    dataset::save_dataset(back, dir / "b.twuq");
    bool ok = back == ds && slurp(dir / "a.twuq") == slurp(dir / "b.twuq");
    std::string detail = ok ? "TWUQ bitwise" : "TWUQ round trip differs";

    const auto w = nn::init_weights<float>(cfg.network, 77);
    nn::save_weights(w, cfg.hash(), dir / "a.twnn");
    const auto wl = nn::load_weights(dir / "a.twnn", cfg.network);
    nn::save_weights(wl.weights, wl.config_hash, dir / "b.twnn");
    bool same = wl.config_hash == cfg.hash();
    for (std::size_t i = 0; i < w.params.size(); ++i) same = same && w.params[i].value == wl.weights.params[i].value;
    same = same && slurp(dir / "a.twnn") == slurp(dir / "b.twnn");
    ok = ok && same;
    detail += same ? ", TWNN bitwise" : ", TWNN round trip differs";

    // Typed errors for targeted corruptions, and no crash on random ones.
    struct Target {
        fs::path good;
        std::function<void(const fs::path&)> load;
    };
    const std::vector<Target> targets{
        {dir / "a.twuq", [](const fs::path& p) { dataset::load_dataset(p); }},
        {dir / "a.twnn", [&](const fs::path& p) { nn::load_weights(p, cfg.network); }},
    };
    std::size_t typed = 0, untyped = 0, accepted = 0;
    auto attempt = [&](const Target& t, const std::string& bytes, int want_kind) {
        const fs::path bad = dir / "bad.bin";
        {
            std::ofstream out(bad, std::ios::binary | std::ios::trunc);
            out << bytes;
        }
        try {
            t.load(bad);
            ++accepted;
            return want_kind < 0;
        } catch (const FormatError& e) {
            ++typed;
            return want_kind < 0 || static_cast<int>(e.kind()) == want_kind;
        } catch (const Error&) {
            ++typed;
            return want_kind < 0;
        } catch (...) {
            ++untyped;
            return false;
        }
    };
    bool kinds = true;
    std::mt19937_64 rng(1);
    for (const auto& t : targets) {
        const std::string good = slurp(t.good);
        std::string m = good;
        m[0] ^= 0x20;
        kinds = attempt(t, m, static_cast<int>(FormatError::Kind::Header)) && kinds;
        m = good;
        m[4] = static_cast<char>(m[4] + 1);
        kinds = attempt(t, m, static_cast<int>(FormatError::Kind::Version)) && kinds;
        kinds = attempt(t, good.substr(0, good.size() - 5), static_cast<int>(FormatError::Kind::Payload)) && kinds;
        kinds = attempt(t, good.substr(0, 2), -1) && kinds;
        for (int k = 0; k < 300; ++k) {
            std::string f = good;
            const std::size_t span = std::min<std::size_t>(f.size(), 96);
            for (int b = 0; b < 1 + k % 4; ++b) f[rng() % span] = static_cast<char>(rng());
            attempt(t, f, -1);
        }
    }
    ok = ok && kinds && untyped == 0;
    detail += ", corruptions: " + std::to_string(typed) + " typed errors, " + std::to_string(accepted) +
              " benign, " + std::to_string(untyped) + " untyped" + (kinds ? "" : ", wrong error kind");
    return {ok, detail};
}

Outcome determinism() {
    const fs::path dir = g_work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = dir / "tiny.toml";
    std::ofstream(cfg) << "[grid]\nsize = 8\n\n[reference]\nprobe_count = 2\n\n[unet]\nlevels = 1\nbase_width = 4\n\n"
                          "[training]\nepochs = 2\nbatch_size = 8\n\n[ensemble]\nmembers = 2\n\n"
                          "[data]\nn_train = 32\nn_test = 8\n";
    const fs::path log = dir / "run.log";
    const std::string base = "--deterministic -q --config " + cfg.string() + " ";
    std::vector<fs::path> artifacts;
    for (const std::string run : {"r1", "r2"}) {
        const fs::path r = dir / run;
        fs::create_directories(r);
        if (cli(base + "gen --split train --out " + (r / "train.twuq").string(), log) != 0 ||
            cli(base + "gen --split test --out " + (r / "test.twuq").string(), log) != 0 ||
            cli(base + "train --data " + (r / "train.twuq").string() + " --out " + (r / "model").string(), log) != 0 ||
            cli(base + "eval --model " + (r / "model").string() + " --data " + (r / "test.twuq").string() + " --out " +
                    (r / "eval").string(),
                log) != 0) {
            return {false, "tiny run " + run + " failed, see " + log.string()};
        }
    }
    std::size_t compared = 0;
    std::vector<std::string> differ;
    for (const auto& e : fs::recursive_directory_iterator(dir / "r1")) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension();
        if (ext != ".twuq" && ext != ".twnn" && ext != ".csv") continue;
        const auto rel = fs::relative(e.path(), dir / "r1");
        ++compared;
        if (slurp(e.path()) != slurp(dir / "r2" / rel)) differ.push_back(rel.string());
    }
    std::string detail = std::to_string(compared) + " dataset/checkpoint/CSV files compared";
    for (const auto& d : differ) detail += ", differs: " + d;
    return {differ.empty() && compared >= 8, detail};
}

struct Desk {
    bool ok = false;
    std::string error;
    double train_eval_s = 0.0;
    std::vector<std::map<std::string, double>> eval, cal, noise;
};

Desk desk_run() {
    Desk d;
    const fs::path dir = g_work / "desk";
    const fs::path log = g_work / "desk.log";
    const fs::path model = dir / "model";
    const bool have_model = g_reuse && fs::exists(model / "member_3.twnn");
    if (!have_model) fs::remove_all(dir);
    fs::create_directories(dir);
    const auto t0 = Clock::now();
    if (!have_model && cli("train --out " + model.string(), log) != 0) {
        d.error = "train failed, see " + log.string();
        return d;
    }
    if (cli("-q gen --split test --out " + (dir / "test.twuq").string(), log) != 0 ||
        cli("eval --model " + model.string() + " --data " + (dir / "test.twuq").string() + " --out " +
                (dir / "eval").string(),
            log) != 0) {
        d.error = "gen/eval failed, see " + log.string();
        return d;
    }
    d.train_eval_s = have_model ? -1.0 : seconds_since(t0);
    if (cli("sweep-calibration --model " + model.string() + " --out " + (dir / "cal").string(), log) != 0) {
        d.error = "sweep-calibration failed, see " + log.string();
        return d;
    }
    if (cli("sweep-noise --model " + model.string() + " --sigmas 0,1e-8,5e-8 --alphas 0 --out " +
                (dir / "noise").string(),
            log) != 0) {
        d.error = "sweep-noise failed, see " + log.string();
        return d;
    }
    d.eval = read_csv(dir / "eval" / "summary.csv");
    d.cal = read_csv(dir / "cal" / "calibration_sweep.csv");
    d.noise = read_csv(dir / "noise" / "noise_sweep.csv");
    d.ok = true;
    return d;
}

Outcome jensen(const Desk& d) {
    if (!d.ok) return {false, d.error};
    std::size_t runs = 0, violations = 0;
    for (const auto* table : {&d.eval, &d.cal, &d.noise}) {
        for (const auto& r : *table) {
            ++runs;
            if (!(r.at("ensemble_mse") <= r.at("mean_member_mse")) || r.at("jensen_holds") != 1.0) ++violations;
        }
    }
    return {violations == 0 && runs > 0,
            std::to_string(runs) + " evaluations, " + std::to_string(violations) + " violations"};
}

Outcome clean_coverage(const Desk& d) {
    if (!d.ok) return {false, d.error};
    const double cp = d.eval.at(0).at("total_cp");
    const bool timed = d.train_eval_s >= 0.0;
    const bool fast = !timed || d.train_eval_s < 1800.0;
    std::string detail = "total_cp = " + num(cp) + " (band [0.85, 0.99]), ensemble rmse = " +
                         num(d.eval.at(0).at("ensemble_rmse") * 1e9) + " nm, topography uc = " +
                         num(d.eval.at(0).at("topography_uc") * 1e9) + " nm, ";
    detail += timed ? "train+eval " + num(std::round(d.train_eval_s)) + " s" : "runtime not measured (--reuse)";
    return {cp >= 0.85 && cp <= 0.99 && fast, detail};
}

Outcome calibration_trends(const Desk& d) {
    if (!d.ok) return {false, d.error};
    // (a) on zero-topography probes, straight from the forward model
    ExperimentConfig cfg;
    const auto system = make_system(cfg);
    const Topography zero(system.grid);
    const auto base = optics::forward_model(zero, system.channels, optics::set_calibration_error(system.reference, 0.0),
                                            system.grid, system.forward);
    std::vector<double> alphas, rmsd;
    for (int i = 0; i <= 10; ++i) {
        const double a = i / 10.0;
        const auto s = optics::forward_model(zero, system.channels,
                                             optics::set_calibration_error(system.reference, a), system.grid,
                                             system.forward);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t k = 0; k < s.values.size(); ++k) {
            if (!s.valid[k]) continue;
            sum += (s.values[k] - base.values[k]) * (s.values[k] - base.values[k]);
            ++n;
        }
        alphas.push_back(a);
        rmsd.push_back(std::sqrt(sum / static_cast<double>(n)));
    }
    bool increasing = true;
    for (std::size_t i = 1; i < rmsd.size(); ++i) increasing = increasing && rmsd[i] > rmsd[i - 1];
    const double r = pearson(alphas, rmsd);
    const double r2 = r * r;
    const bool a_ok = increasing && r2 > 0.999;

    const auto cal_alpha = column(d.cal, "alpha");
    const auto uc = column(d.cal, "topography_uc");
    const auto cp = column(d.cal, "total_cp");
    const double rho_uc = spearman(cal_alpha, uc);
    const double rho_cp = spearman(cal_alpha, cp);
    const bool b_ok = cal_alpha.size() == 11 && rho_uc >= 0.9;
    const bool c_ok = cal_alpha.size() == 11 && rho_cp <= -0.8;
    std::size_t better = 0;
    for (const auto& row : d.cal) better += row.at("ensemble_rmse") < row.at("single_net_rmse") ? 1 : 0;
    const bool d_ok = better == d.cal.size() && !d.cal.empty();

    auto tag = [](bool b) { return b ? "ok" : "FAIL"; };
    std::string detail = std::string("(a) ") + tag(a_ok) + " R^2 = " + num(r2) + ", alpha=1 rmsd " +
                         num(rmsd.back() * 1e9) + " nm; (b) " + tag(b_ok) + " Spearman(uc) = " + num(rho_uc) +
                         ", uc " + num(uc.front() * 1e9) + " -> " + num(uc.back() * 1e9) + " nm; (c) " + tag(c_ok) +
                         " Spearman(cp) = " + num(rho_cp) + ", cp " + num(cp.front()) + " -> " + num(cp.back()) +
                         "; (d) " + tag(d_ok) + " ensemble < single at " + std::to_string(better) + "/" +
                         std::to_string(d.cal.size()) + " steps";
    return {a_ok && b_ok && c_ok && d_ok, detail};
}

Outcome noise_trends(const Desk& d) {
    if (!d.ok) return {false, d.error};
    std::map<double, std::map<std::string, double>> by_sigma;
    for (const auto& r : d.noise) {
        if (r.at("alpha") == 0.0) by_sigma[r.at("sigma")] = r;
    }
    if (by_sigma.size() != 3) return {false, "expected sigma = 0, 10 nm, 50 nm at alpha = 0"};
    const auto& s0 = by_sigma.at(0.0);
    const auto& s10 = by_sigma.at(1e-8);
    const auto& s50 = by_sigma.at(5e-8);
    const double rel = s10.at("ensemble_rmse") / s0.at("ensemble_rmse") - 1.0;
    const bool a = rel < 0.15;
    const bool b = s50.at("ensemble_rmse") >= s10.at("ensemble_rmse");
    const bool c = s50.at("topography_uc") >= s0.at("topography_uc");
    auto nm = [](double v) { return num(std::round(v * 1e11) / 100.0); };
    return {a && b && c, "rmse " + nm(s0.at("ensemble_rmse")) + " / " + nm(s10.at("ensemble_rmse")) + " / " +
                             nm(s50.at("ensemble_rmse")) + " nm at 0 / 10 / 50 nm (10 nm increase " +
                             num(std::round(rel * 1e4) / 100.0) + "%); uc " + nm(s0.at("topography_uc")) + " -> " +
                             nm(s50.at("topography_uc")) + " nm"};
}

void report(int id, const std::string& name, const Outcome& o, bool& all) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << name << " -- " << o.detail << std::endl;
    all = all && o.pass;
}

template <class F>
Outcome guarded(F f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc) {
            g_work = argv[++i];
        } else if (a == "--reuse") {
            g_reuse = true;
        } else {
            std::cerr << "usage: twuq_acceptance [--work DIR] [--reuse]\n";
            return 1;
        }
    }
    fs::create_directories(g_work);
    bool all = true;

    report(1, "Zernike orthonormality", guarded(zernike_orthonormality), all);
    report(2, "gradient checks", guarded([] { return unit_subset("gradient check*", 120.0); }), all);
    report(3, "ensemble / uncertainty / rmse / median oracles",
           guarded([] {
               return unit_subset("ensemble statistics against a two-pass oracle,topography uncertainty,"
                                  "rmse and median error",
                                  600.0);
           }),
           all);
    report(4, "coverage boundary semantics",
           guarded([] { return unit_subset("coverage boundaries over sign and zero cases", 600.0); }), all);

    Desk desk;
    try {
        desk = desk_run();
    } catch (const std::exception& e) {
        desk.error = std::string("exception: ") + e.what();
    }
    report(5, "Jensen bound on every evaluation", guarded([&] { return jensen(desk); }), all);
    report(6, "clean-system coverage", guarded([&] { return clean_coverage(desk); }), all);
    report(7, "calibration-error sweep trends", guarded([&] { return calibration_trends(desk); }), all);
    report(8, "noise study trends", guarded([&] { return noise_trends(desk); }), all);
    report(9, "determinism", guarded(determinism), all);
    report(10, "format round trips", guarded(format_round_trips), all);
    return all ? 0 : 1;
}
