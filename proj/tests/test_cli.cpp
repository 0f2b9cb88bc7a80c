#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "twuq_test_cli";

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args) {
    fs::create_directories(kRoot);
    const fs::path log = kRoot / "last.log";
    const std::string cmd = std::string(TWUQ_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    r.output.assign(std::istreambuf_iterator<char>(in), {});
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path write_config(const std::string& name, const std::string& body) {
    fs::create_directories(kRoot);
    const fs::path p = kRoot / name;
    std::ofstream(p) << body;
    return p;
}

const char* kTiny = R"([grid]
size = 8

[reference]
probe_count = 2

[unet]
levels = 1
base_width = 4

[training]
epochs = 2
batch_size = 8

[ensemble]
members = 2

[data]
n_train = 24
n_test = 6
)";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage and config errors map to exit codes") {
    CHECK(run("").code == 1);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("gen").code == 1);
    CHECK(run("--version").code == 0);

    // A path below a regular file cannot be created, even by root.
    const auto blocker = write_config("blocker", "");
    const auto unwritable = (blocker / "x.twuq").string();

    const auto bad = write_config("bad_grid.toml", "[grid]\nsize = 18\n");
    // The config is rejected before the unwritable output path is touched.
    const auto r = run("--config " + bad.string() + " gen --out " + unwritable);
    CHECK(r.code == 2);
    CHECK(r.output.find("not divisible") != std::string::npos);

    const auto unknown = write_config("unknown.toml", "[grid]\ncolour = 1\n");
    CHECK(run("--config " + unknown.string() + " gen --out x.twuq").code == 2);
    CHECK(run("--config /nonexistent/c.toml gen --out x.twuq").code == 3);
    CHECK(run("gen --out " + unwritable + " -q").code == 3);
}

TEST_CASE("gen is deterministic and honours --seed") {
    const auto cfg = write_config("tiny.toml", kTiny);
    const auto a = kRoot / "gen_a.twuq", b = kRoot / "gen_b.twuq", c = kRoot / "gen_c.twuq";
    const auto r = run("--config " + cfg.string() + " gen --split test --out " + a.string());
    REQUIRE(r.code == 0);
    CHECK(r.output.find("median_rms=") != std::string::npos);
    REQUIRE(run("--config " + cfg.string() + " gen --split test -q --out " + b.string()).code == 0);
    REQUIRE(run("--config " + cfg.string() + " gen --split test -q --seed 5 --out " + c.string()).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
}

TEST_CASE("train, eval and report on a tiny config") {
    const auto cfg = write_config("tiny.toml", kTiny);
    const auto base = "--config " + cfg.string() + " -q ";
    const auto model = kRoot / "model";
    fs::remove_all(model);
    REQUIRE(run(base + "train --out " + model.string()).code == 0);
    REQUIRE(fs::exists(model / "member_0.twnn"));
    REQUIRE(fs::exists(model / "member_1.twnn"));
    CHECK_FALSE(fs::exists(model / "member_2.twnn"));
    CHECK(slurp(model / "member_0.twnn") != slurp(model / "member_1.twnn"));
    CHECK(fs::exists(model / "loss_history.csv"));
    CHECK(fs::exists(model / "train_manifest.json"));

    const auto test = kRoot / "test.twuq";
    REQUIRE(run(base + "gen --split test --out " + test.string()).code == 0);
    const auto ev = kRoot / "runs" / "eval";
    fs::remove_all(kRoot / "runs");
    REQUIRE(run(base + "eval --model " + model.string() + " --data " + test.string() + " --out " + ev.string()).code == 0);
    CHECK(fs::exists(ev / "uq_report.csv"));
    CHECK(fs::exists(ev / "coverage_map.csv"));
    CHECK(fs::exists(ev / "fig7_coverage_map.svg"));

    // z = 0 collapses the tube; only exact matches would count.
    const auto ev0 = kRoot / "eval_z0";
    REQUIRE(run(base + "eval --z 0 --model " + model.string() + " --data " + test.string() + " --out " + ev0.string())
                .code == 0);
    CHECK(slurp(ev0 / "uq_report.csv").find("# total_cp=0\n") != std::string::npos);

    const auto rep = run(base + "report --runs " + (kRoot / "runs").string());
    CHECK(rep.code == 0);
    CHECK(fs::exists(kRoot / "runs" / "report" / "report.md"));

    // A dataset generated under another config is refused.
    const auto other = write_config("other.toml", std::string(kTiny) + "\n[generation]\ndecay = 1.0\n");
    const auto foreign = kRoot / "foreign.twuq";
    REQUIRE(run("--config " + other.string() + " -q gen --out " + foreign.string()).code == 0);
    CHECK(run(base + "eval --model " + model.string() + " --data " + foreign.string() + " --out " +
              (kRoot / "eval_foreign").string())
              .code == 5);
    // So is a model trained under another config.
    CHECK(run("--config " + other.string() + " -q eval --model " + model.string() + " --data " + foreign.string() +
              " --out " + (kRoot / "eval_foreign").string())
              .code == 5);
}

TEST_CASE("single-member ensembles need --allow-m1") {
    const auto cfg = write_config("tiny.toml", kTiny);
    const auto base = "--config " + cfg.string() + " -q ";
    const auto model = kRoot / "model_m1";
    fs::remove_all(model);
    CHECK(run(base + "train --members 1 --out " + model.string()).code != 0);
    REQUIRE(run(base + "--allow-m1 train --members 1 --out " + model.string()).code == 0);
    const auto test = kRoot / "test_m1.twuq";
    REQUIRE(run(base + "gen --out " + test.string()).code == 0);
    const std::string eval_args = "eval --model " + model.string() + " --data " + test.string() + " --out ";
    CHECK(run(base + eval_args + (kRoot / "eval_m1").string()).code != 0);
    CHECK(run(base + "--allow-m1 " + eval_args + (kRoot / "eval_m1").string()).code == 0);
}

TEST_CASE("report refuses empty and mixed run directories") {
    const auto empty = kRoot / "empty_runs";
    fs::remove_all(empty);
    fs::create_directories(empty);
    const auto r = run("report --runs " + empty.string());
    CHECK(r.code != 0);
    CHECK(r.output.find("no runs found") != std::string::npos);

    const auto mixed = kRoot / "mixed_runs";
    fs::remove_all(mixed);
    fs::create_directories(mixed / "a");
    fs::create_directories(mixed / "b");
    std::ofstream(mixed / "a" / "uq_report.csv") << "# config_hash=0000000000000001\nsample_id,rmse\n0,1\n";
    std::ofstream(mixed / "b" / "uq_report.csv") << "# config_hash=0000000000000002\nsample_id,rmse\n0,1\n";
    const auto m = run("report --runs " + mixed.string());
    CHECK(m.code == 5);
    CHECK(m.output.find("uq_report.csv") != std::string::npos);
}

}  // TEST_SUITE
