#include "twuq/experiment.hpp"

#include "twuq/binary_io.hpp"
#include "twuq/errors.hpp"
#include "twuq/nn/train.hpp"
#include "twuq/svg.hpp"
#include "twuq/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

namespace twuq::experiment {

namespace fs = std::filesystem;

namespace {

std::mutex log_mutex;

template <class... A>
void log(const Options& opt, const A&... parts) {
    if (!opt.log) return;
    std::lock_guard lock(log_mutex);
    ((*opt.log) << ... << parts) << std::endl;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_text(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void write_config_snapshot(const ExperimentConfig& cfg, const fs::path& dir) {
    auto out = open_text(dir / "config.toml");
    out << "# config_hash=" << io::hex64(cfg.hash()) << "\n" << to_toml(cfg);
}

void check_hash(std::uint64_t got, std::uint64_t want, const std::string& what) {
    if (got != want) {
        throw FingerprintError(what + " was produced with config hash " + io::hex64(got) + ", current config is " +
                               io::hex64(want));
    }
}

std::string sweep_header() {
    return "sigma,alpha,input_rmsd,single_net_rmse,ensemble_rmse,median_error,topography_uc,total_cp,"
           "ensemble_mse,mean_member_mse,jensen_holds,members,samples,z,target_hash";
}

std::string sweep_line(const SweepRow& r) {
    const auto& s = r.summary;
    return num(r.sigma) + "," + num(r.alpha) + "," + num(r.input_rmsd) + "," + num(s.single_net_rmse) + "," +
           num(s.ensemble_rmse) + "," + num(s.median_error) + "," + num(s.topography_uc) + "," + num(s.total_cp) +
           "," + num(s.ensemble_mse) + "," + num(s.mean_member_mse) + "," + (s.jensen_holds ? "1" : "0") + "," +
           std::to_string(s.members) + "," + std::to_string(s.samples) + "," + num(s.z) + "," +
           io::hex64(r.target_hash);
}

void require_jensen(const uq::UqSummary& s) {
    if (!s.jensen_holds) {
        throw Error("Jensen bound violated at alpha=" + num(s.alpha) + " sigma=" + num(s.sigma) +
                    ": ensemble mse " + num(s.ensemble_mse) + " > mean member mse " + num(s.mean_member_mse));
    }
}

// Rows already written to path, so an interrupted sweep can be inspected.
class RowWriter {
public:
    RowWriter(const fs::path& path, std::uint64_t hash) : out_(open_text(path)), path_(path) {
        out_ << "# config_hash=" << io::hex64(hash) << "\n"
             << "# tool_version=" << kToolVersion << "\n"
             << sweep_header() << "\n";
        out_.flush();
    }

    void add(const SweepRow& r) {
        out_ << sweep_line(r) << "\n";
        out_.flush();
        if (!out_) throw IoError("write failed: " + path_.string());
    }

private:
    std::ofstream out_;
    fs::path path_;
};

struct SweepContext {
    const ExperimentConfig& cfg;
    dataset::SystemModel system;
    uq::EnsembleModel model;
    dataset::Dataset baseline;  // alpha = 0, sigma = 0 test inputs
};

struct SweepPoint {
    SweepRow row;
    uq::UqReport report;
};

double pooled_input_rmsd(const dataset::Dataset& a, const dataset::Dataset& b) { return dataset::input_rmsd(a, b); }

SweepPoint run_point(const SweepContext& ctx, double alpha, double sigma, const Options& opt) {
    const auto ds = make_split(ctx.cfg, ctx.system, Split::Test, alpha, sigma);
    const auto preds = uq::predict_members(ctx.model, ds, ctx.cfg.sweep.eval_batch);
    SweepPoint pt;
    pt.report = uq::evaluate(preds, ds, ctx.cfg.sweep.z);
    pt.row.sigma = sigma;
    pt.row.alpha = alpha;
    pt.row.input_rmsd = pooled_input_rmsd(ds, ctx.baseline);
    pt.row.summary = pt.report.summary;
    pt.row.target_hash = target_hash(ds);
    if (pt.row.target_hash != target_hash(ctx.baseline)) {
        throw Error("test targets changed at alpha=" + num(alpha) + " sigma=" + num(sigma));
    }
    const auto& s = pt.report.summary;
    log(opt, "  sigma=", num(sigma), " alpha=", num(alpha), " input_rmsd=", num(pt.row.input_rmsd),
        " rmse(single)=", num(s.single_net_rmse), " rmse(ens)=", num(s.ensemble_rmse), " uc=",
        num(s.topography_uc), " cp=", num(s.total_cp));
    return pt;
}

SweepContext make_context(const ExperimentConfig& cfg, const fs::path& model_dir, const Options& opt) {
    SweepContext ctx{cfg, make_system(cfg), load_model(cfg, model_dir, opt), {}};
    ctx.baseline = make_split(cfg, ctx.system, Split::Test, 0.0, 0.0);
    return ctx;
}

std::vector<double> column(const std::vector<SweepRow>& rows, double (*get)(const SweepRow&)) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(get(r));
    return v;
}

constexpr double kNm = 1e9;

svg::Series scatter_series(const uq::UqReport& r, const std::string& label) {
    svg::Series s{label, {}, {}, {}, svg::Style::Points};
    for (const auto& row : r.rows) {
        s.x.push_back(row.topography_uc * kNm);
        s.y.push_back(row.rmse * kNm);
    }
    return s;
}

void write_eval_figures(const ExperimentConfig& cfg, const uq::UqReport& report, const dataset::Dataset& ds,
                        const fs::path& out) {
    const std::uint64_t hash = cfg.hash();
    svg::Plot fig5{"rmse vs topography uncertainty", "topography uc [nm]", "rmse [nm]", {}, true};
    fig5.series.push_back(scatter_series(report, "test samples"));
    svg::write(out / "fig5_rmse_vs_uc.svg", svg::render(fig5, hash));

    svg::HeatMap cov{"cp", report.coverage.size, report.coverage.cp, report.coverage.mask, 0.0, 1.0};
    svg::write(out / "fig7_coverage_map.svg",
               svg::render({cov}, "pixelwise coverage, total " + num(report.summary.total_cp), hash));

    // Central row profiles with the +-z uc tube.
    const std::size_t D = ds.size, row = D / 2;
    const std::size_t shown = std::min<std::size_t>(4, ds.samples.size());
    for (std::size_t i = 0; i < shown; ++i) {
        const auto& f = report.fields[i];
        const auto tube = uq::uncertainty_tube(f, report.summary.z);
        const auto& t = ds.samples[i].target;
        svg::Series band{"mean +- " + num(report.summary.z) + " uc", {}, {}, {}, svg::Style::Band};
        svg::Series truth{"truth", {}, {}, {}, svg::Style::Line};
        svg::Series mean{"ensemble mean", {}, {}, {}, svg::Style::Line};
        for (std::size_t c = 0; c < D; ++c) {
            const std::size_t p = row * D + c;
            if (!t.valid[p]) continue;
            const double x = (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(D) - 1.0;
            band.x.push_back(x);
            band.y.push_back(tube.lower[p] * kNm);
            band.y_upper.push_back(tube.upper[p] * kNm);
            truth.x.push_back(x);
            truth.y.push_back(t.height[p] * kNm);
            mean.x.push_back(x);
            mean.y.push_back(f.mean[p] * kNm);
        }
        svg::Plot fig6{"sample " + std::to_string(ds.samples[i].meta.id) + ", row " + std::to_string(row), "x",
                       "height [nm]", {band, truth, mean}, false};
        svg::write(out / ("fig6_profile_" + std::to_string(i) + ".svg"), svg::render(fig6, hash));
    }
}

void write_summary_csv(const uq::UqReport& r, std::uint64_t hash, const fs::path& path) {
    auto out = open_text(path);
    out << "# config_hash=" << io::hex64(hash) << "\n# tool_version=" << kToolVersion << "\n";
    out << "alpha,sigma,members,samples,z,single_net_rmse,ensemble_rmse,median_error,topography_uc,total_cp,"
           "ensemble_mse,mean_member_mse,jensen_holds\n";
    const auto& s = r.summary;
    out << num(s.alpha) << ',' << num(s.sigma) << ',' << s.members << ',' << s.samples << ',' << num(s.z) << ','
        << num(s.single_net_rmse) << ',' << num(s.ensemble_rmse) << ',' << num(s.median_error) << ','
        << num(s.topography_uc) << ',' << num(s.total_cp) << ',' << num(s.ensemble_mse) << ','
        << num(s.mean_member_mse) << ',' << (s.jensen_holds ? 1 : 0) << '\n';
}

}  // namespace

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split '" + s + "' (train | test)");
}

dataset::Dataset make_split(const ExperimentConfig& cfg, const dataset::SystemModel& system, Split split,
                            double alpha, double sigma, std::optional<std::uint64_t> seed) {
    dataset::BuildRequest req;
    req.count = split == Split::Train ? cfg.data.n_train : cfg.data.n_test;
    req.base_seed = seed.value_or(split == Split::Train ? cfg.data.train_seed : cfg.data.test_seed);
    req.alpha = alpha;
    req.sigma = sigma;
    req.config_hash = cfg.hash();
    return dataset::build_dataset(req, system, cfg.generation);
}

std::uint64_t target_hash(const dataset::Dataset& ds) {
    std::uint64_t h = io::fnv1a("targets");
    for (const auto& s : ds.samples) {
        const auto& t = s.target;
        h = io::fnv1a(std::string_view(reinterpret_cast<const char*>(t.height.data()), t.height.size() * sizeof(double)),
                      h);
        h = io::fnv1a(std::string_view(reinterpret_cast<const char*>(t.valid.data()), t.valid.size()), h);
    }
    return h;
}

std::optional<std::string> read_config_hash(const fs::path& path) {
    std::ifstream in(path);
    std::string line;
    const std::string key = "config_hash=";
    for (int i = 0; i < 8 && std::getline(in, line); ++i) {
        const auto pos = line.find(key);
        if (pos == std::string::npos) continue;
        std::string v = line.substr(pos + key.size());
        const auto end = v.find_first_of(" \r\t-");
        return v.substr(0, end);
    }
    return std::nullopt;
}

GenResult cmd_gen(const ExperimentConfig& cfg, Split split, const fs::path& out, std::optional<std::uint64_t> seed,
                  const Options& opt) {
    cfg.validate();
    const auto system = make_system(cfg);
    GenResult r;
    r.data = make_split(cfg, system, split, 0.0, 0.0, seed);
    r.stats = dataset::topography_stats(r.data);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    dataset::save_dataset(r.data, out);
    log(opt, "samples=", r.data.samples.size(), " median_rms=", num(r.stats.median_rms), " m mean_rms=",
        num(r.stats.mean_rms), " m pv_range=[", num(r.stats.min_pv), ", ", num(r.stats.max_pv), "] m");
    return r;
}

std::vector<MemberStatus> cmd_train(const ExperimentConfig& cfg, std::size_t members, const fs::path& out,
                                    const fs::path& data, const Options& opt) {
    cfg.validate();
    if (members < 1 || (members < 2 && !opt.allow_single_member)) {
        throw ConfigError("an ensemble needs at least 2 members (use --allow-m1 for a single network)");
    }
    const std::uint64_t hash = cfg.hash();
    dataset::Dataset ds;
    if (data.empty()) {
        ds = make_split(cfg, make_system(cfg), Split::Train);
    } else {
        ds = dataset::load_dataset(data);
        check_hash(ds.provenance.config_hash, hash, data.string());
    }
    ensure_dir(out);
    write_config_snapshot(cfg, out);
    const auto set = nn::TrainingSet<float>::pack(ds);
    nn::UNetConfig ucfg = cfg.network;

    std::vector<MemberStatus> status(members);
    std::vector<std::vector<nn::EpochRecord>> history(members);
    const auto m_count = static_cast<std::ptrdiff_t>(members);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t mi = 0; mi < m_count; ++mi) {
        const auto i = static_cast<std::size_t>(mi);
        auto& st = status[i];
        st.index = i;
        st.seed = cfg.ensemble.member_seed + i;
        try {
            auto result = nn::train_network(set, ucfg, cfg.training, st.seed, [&](const nn::EpochRecord& rec) {
                history[i].push_back(rec);
                log(opt, "member ", i, " epoch ", rec.epoch, " lr=", num(rec.learning_rate),
                    " loss=", num(rec.data_loss), " um^2 l2=", num(rec.l2_penalty));
            });
            nn::save_weights(result.weights, hash, out / ("member_" + std::to_string(i) + ".twnn"));
            st.ok = true;
            st.final_loss = result.history.empty() ? 0.0 : result.history.back().data_loss;
        } catch (const std::exception& e) {
            st.ok = false;
            st.error = e.what();
            log(opt, "member ", i, " failed: ", e.what());
        }
    }

    auto csv = open_text(out / "loss_history.csv");
    csv << "# config_hash=" << io::hex64(hash) << "\nmember,epoch,learning_rate,data_loss_um2,l2_penalty\n";
    for (std::size_t i = 0; i < members; ++i) {
        for (const auto& rec : history[i]) {
            csv << i << ',' << rec.epoch << ',' << num(rec.learning_rate) << ',' << num(rec.data_loss) << ','
                << num(rec.l2_penalty) << '\n';
        }
    }
    nlohmann::json manifest;
    manifest["config_hash"] = io::hex64(hash);
    manifest["tool_version"] = kToolVersion;
    manifest["fingerprint"] = ucfg.fingerprint();
    manifest["training_samples"] = ds.samples.size();
    for (const auto& st : status) {
        nlohmann::json m;
        m["index"] = st.index;
        m["seed"] = st.seed;
        m["ok"] = st.ok;
        if (st.ok) {
            m["checkpoint"] = "member_" + std::to_string(st.index) + ".twnn";
            m["final_loss_um2"] = st.final_loss;
        } else {
            m["error"] = st.error;
        }
        manifest["members"].push_back(m);
    }
    open_text(out / "train_manifest.json") << manifest.dump(2) << "\n";
    return status;
}

uq::EnsembleModel load_model(const ExperimentConfig& cfg, const fs::path& dir, const Options& opt) {
    auto model = uq::load_ensemble(dir, cfg.network);
    model.validate(opt.allow_single_member);
    check_hash(model.config_hash, cfg.hash(), "model " + dir.string());
    return model;
}

uq::UqReport cmd_eval(const ExperimentConfig& cfg, const fs::path& model_dir, const fs::path& data, double z,
                      const fs::path& out, const Options& opt) {
    cfg.validate();
    if (!(z >= 0.0)) throw ConfigError("--z must be non-negative");
    const auto model = load_model(cfg, model_dir, opt);
    const auto ds = dataset::load_dataset(data);
    check_hash(ds.provenance.config_hash, model.config_hash, "dataset " + data.string());
    const auto preds = uq::predict_members(model, ds, cfg.sweep.eval_batch);
    auto report = uq::evaluate(preds, ds, z);
    ensure_dir(out);
    uq::write_report_csv(report, out / "uq_report.csv");
    uq::write_coverage_map(report, out / "coverage_map.csv");
    write_summary_csv(report, model.config_hash, out / "summary.csv");
    write_eval_figures(cfg, report, ds, out);
    const auto& s = report.summary;
    log(opt, "members=", s.members, " samples=", s.samples, " rmse(single)=", num(s.single_net_rmse),
        " rmse(ensemble)=", num(s.ensemble_rmse), " median_error=", num(s.median_error), " topography_uc=",
        num(s.topography_uc), " total_cp=", num(s.total_cp));
    require_jensen(s);
    return report;
}

std::vector<SweepRow> cmd_sweep_calibration(const ExperimentConfig& cfg, const fs::path& model_dir,
                                            const std::vector<double>& alphas, const fs::path& out,
                                            const Options& opt) {
    auto c = cfg;
    c.sweep.alphas = alphas;
    c.validate();
    const auto ctx = make_context(c, model_dir, opt);
    ensure_dir(out);
    RowWriter writer(out / "calibration_sweep.csv", c.hash());
    std::vector<SweepRow> rows;
    std::vector<svg::Series> scatters;
    std::vector<svg::HeatMap> maps;
    for (double a : alphas) {
        auto pt = run_point(ctx, a, 0.0, opt);
        writer.add(pt.row);
        require_jensen(pt.row.summary);
        rows.push_back(pt.row);
        scatters.push_back(scatter_series(pt.report, "alpha " + num(a)));
        maps.push_back({"a=" + num(a), pt.report.coverage.size, pt.report.coverage.cp, pt.report.coverage.mask, 0.0,
                        1.0});
    }
    const std::uint64_t hash = c.hash();
    auto input_nm = column(rows, [](const SweepRow& r) { return r.input_rmsd * kNm; });
    svg::Plot fig8{"uncertainty vs input perturbation", "input rmsd [nm]", "[nm]", {}, false};
    fig8.series.push_back({"topography uc", input_nm,
                           column(rows, [](const SweepRow& r) { return r.summary.topography_uc * kNm; }), {},
                           svg::Style::Line});
    fig8.series.push_back({"ensemble rmse", input_nm,
                           column(rows, [](const SweepRow& r) { return r.summary.ensemble_rmse * kNm; }), {},
                           svg::Style::Line});
    fig8.series.push_back({"single-net rmse", input_nm,
                           column(rows, [](const SweepRow& r) { return r.summary.single_net_rmse * kNm; }), {},
                           svg::Style::Line});
    svg::write(out / "fig8_uc_vs_input.svg", svg::render(fig8, hash));
    svg::Plot fig9{"rmse vs topography uncertainty per alpha", "topography uc [nm]", "rmse [nm]", scatters, true};
    svg::write(out / "fig9_scatter_by_alpha.svg", svg::render(fig9, hash));
    svg::write(out / "fig10_coverage_strip.svg", svg::render(maps, "pixelwise coverage by alpha", hash));
    return rows;
}

std::vector<SweepRow> cmd_sweep_noise(const ExperimentConfig& cfg, const fs::path& model_dir,
                                      const std::vector<double>& sigmas, const std::vector<double>& alphas,
                                      const fs::path& out, const Options& opt) {
    auto c = cfg;
    c.sweep.alphas = alphas;
    c.sweep.sigmas = sigmas;
    c.validate();
    const auto ctx = make_context(c, model_dir, opt);
    ensure_dir(out);
    RowWriter writer(out / "noise_sweep.csv", c.hash());
    std::vector<SweepRow> rows;
    svg::Plot fig11{"rmse vs topography uncertainty per noise level", "topography uc [nm]", "ensemble rmse [nm]",
                    {}, false};
    for (double s : sigmas) {
        svg::Series curve{"sigma " + num(s * kNm) + " nm", {}, {}, {}, svg::Style::Line};
        for (double a : alphas) {
            auto pt = run_point(ctx, a, s, opt);
            writer.add(pt.row);
            require_jensen(pt.row.summary);
            rows.push_back(pt.row);
            curve.x.push_back(pt.row.summary.topography_uc * kNm);
            curve.y.push_back(pt.row.summary.ensemble_rmse * kNm);
        }
        fig11.series.push_back(curve);
    }
    svg::write(out / "fig11_noise.svg", svg::render(fig11, c.hash()));
    return rows;
}

fs::path cmd_report(const fs::path& runs, const fs::path& out, const Options& opt) {
    if (!fs::is_directory(runs)) throw IoError("no runs found: " + runs.string() + " is not a directory");
    std::vector<fs::path> csvs, svgs;
    for (const auto& e : fs::recursive_directory_iterator(runs)) {
        if (!e.is_regular_file()) continue;
        // Skip a previous report.
        if (fs::weakly_canonical(e.path()).parent_path() == fs::weakly_canonical(out)) continue;
        if (e.path().extension() == ".csv") csvs.push_back(e.path());
        if (e.path().extension() == ".svg") svgs.push_back(e.path());
    }
    std::sort(csvs.begin(), csvs.end());
    std::sort(svgs.begin(), svgs.end());

    std::map<std::string, std::vector<fs::path>> by_hash;
    std::vector<fs::path> unmarked;
    for (const auto& p : csvs) {
        if (auto h = read_config_hash(p)) {
            by_hash[*h].push_back(p);
        } else {
            unmarked.push_back(p);
        }
    }
    for (const auto& p : svgs) {
        if (auto h = read_config_hash(p)) by_hash[*h].push_back(p);
    }
    if (by_hash.empty()) throw IoError("no runs found under " + runs.string());
    if (!unmarked.empty()) {
        std::string list;
        for (const auto& p : unmarked) list += "\n  " + p.string();
        throw FingerprintError("files without a config hash:" + list);
    }
    if (by_hash.size() > 1) {
        std::string list;
        for (const auto& [h, files] : by_hash) {
            for (const auto& p : files) list += "\n  " + h + "  " + p.string();
        }
        throw FingerprintError("refusing to merge runs with different config hashes:" + list);
    }
    const std::string hash = by_hash.begin()->first;

    ensure_dir(out);
    auto tables = open_text(out / "tables.csv");
    tables << "# config_hash=" << hash << "\n# tool_version=" << kToolVersion << "\nsource," << sweep_header()
           << "\n";
    std::ostringstream md;
    md << "# Ensemble UQ report\n\n"
       << "- config hash: `" << hash << "`\n"
       << "- tool version: " << kToolVersion << "\n\n";
    bool any_sweep = false;
    for (const auto& p : csvs) {
        const auto name = p.filename().string();
        if (name != "calibration_sweep.csv" && name != "noise_sweep.csv") continue;
        any_sweep = true;
        std::ifstream in(p);
        std::string line;
        std::vector<std::vector<std::string>> rows;
        bool header_seen = false;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            if (!header_seen) {
                header_seen = true;
                if (line != sweep_header()) throw FormatError(FormatError::Kind::Header, p.string() + ": unexpected columns");
                continue;
            }
            tables << fs::relative(p, runs).string() << ',' << line << '\n';
            std::vector<std::string> cells;
            std::stringstream ss(line);
            for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
            rows.push_back(cells);
        }
        md << "## " << fs::relative(p, runs).string() << "\n\n"
           << "| sigma [nm] | alpha | input rmsd [nm] | rmse single [nm] | rmse ensemble [nm] | median error [nm] "
              "| topography uc [nm] | total cp |\n"
           << "|---|---|---|---|---|---|---|---|\n";
        auto nm = [](const std::string& s) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.1f", std::stod(s) * kNm);
            return std::string(buf);
        };
        for (const auto& c : rows) {
            if (c.size() < 8) continue;
            char cp[16];
            std::snprintf(cp, sizeof cp, "%.3f", std::stod(c[7]));
            md << "| " << nm(c[0]) << " | " << c[1] << " | " << nm(c[2]) << " | " << nm(c[3]) << " | " << nm(c[4])
               << " | " << nm(c[5]) << " | " << nm(c[6]) << " | " << cp << " |\n";
        }
        md << "\n";
    }
    if (!any_sweep) md << "No sweep tables found.\n\n";
    if (!svgs.empty()) {
        md << "## Figures\n\n";
        for (const auto& p : svgs) {
            const auto rel = fs::relative(p, out).generic_string();
            md << "### " << fs::relative(p, runs).generic_string() << "\n\n![" << p.stem().string() << "](" << rel
               << ")\n\n";
        }
    }
    const auto path = out / "report.md";
    open_text(path) << md.str();
    log(opt, "report: ", path.string(), " (", csvs.size(), " csv, ", svgs.size(), " svg)");
    return path;
}

}  // namespace twuq::experiment
