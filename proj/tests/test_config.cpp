#include "twuq/config.hpp"
#include "twuq/errors.hpp"

#include <doctest.h>

#include <string>

using namespace twuq;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty text gives the defaults") {
    const auto c = parse_config("");
    const ExperimentConfig d;
    CHECK(c.grid_size == 16);
    CHECK(c.network.image_size == 16);
    CHECK(c.network.levels == 2);
    CHECK(c.network.base_width == 16);
    CHECK(c.network.dropout_rate == 0.1);
    CHECK(c.training.epochs == 10);
    CHECK(c.training.batch_size == 32);
    CHECK(c.training.initial_lr == 5e-5);
    CHECK(c.training.l2_lambda == 0.002);
    CHECK(c.ensemble.members == 4);
    CHECK(c.data.n_train == 4000);
    CHECK(c.data.n_test == 500);
    CHECK(c.reference.target_rmsd == 219e-9);
    CHECK(c.sweep.alphas.size() == 11);
    CHECK(c.sweep.alphas.back() == 1.0);
    CHECK(c.sweep.z == 1.96);
    CHECK(c.hash() == d.hash());
}

TEST_CASE("parsing values, comments and arrays") {
    const auto c = parse_config(R"(# experiment
[grid]
size = 32   # pixels per side

[channels]
theta = [0, 0.05, 0.1, 0.15]
sector = ["full", "sector240", "sector240", "full"]

[training]
epochs = 3
initial_lr = 1e-3

[sweep]
alphas = [0, 0.5, 1]

[output]
dir = "out # not a comment"
)");
    CHECK(c.grid_size == 32);
    CHECK(c.network.image_size == 32);
    CHECK(c.channels[3].theta == 0.15);
    CHECK(c.channels[3].rule == optics::SectorRule::FullDisc);
    CHECK(c.channels[1].rule == optics::SectorRule::Sector240);
    CHECK(c.training.epochs == 3);
    CHECK(c.training.initial_lr == 1e-3);
    CHECK(c.sweep.alphas == std::vector<double>{0, 0.5, 1});
    CHECK(c.output_dir == "out # not a comment");
}

TEST_CASE("to_toml round trips") {
    ExperimentConfig c;
    c.grid_size = 32;
    c.network.image_size = 32;
    c.network.levels = 3;
    c.generation.amp_max = 3.3e-6;
    c.channels[2].theta = 0.123456789012345;
    c.training.shuffle_seed = 18446744073709551615ull;
    c.sweep.sigmas = {0, 1e-9};
    c.output_dir = "elsewhere";
    const auto back = parse_config(to_toml(c));
    CHECK(back.canonical() == c.canonical());
    CHECK(back.hash() == c.hash());
    CHECK(back.channels[2].theta == c.channels[2].theta);
    CHECK(back.training.shuffle_seed == c.training.shuffle_seed);
    CHECK(back.sweep.sigmas == c.sweep.sigmas);
    CHECK(back.output_dir == "elsewhere");
    CHECK(to_toml(back) == to_toml(c));
}

TEST_CASE("hash covers experiment settings but not sweep or output") {
    const ExperimentConfig base;
    const auto h = base.hash();
    CHECK(h == ExperimentConfig{}.hash());
    auto c = base;
    c.training.epochs = 11;
    CHECK(c.hash() != h);
    c = base;
    c.reference.seed = 8;
    CHECK(c.hash() != h);
    c = base;
    c.channels[0].source_u = 0.1;
    CHECK(c.hash() != h);
    c = base;
    c.sweep.z = 3.0;
    c.sweep.alphas = {0.5};
    c.output_dir = "x";
    CHECK(c.hash() == h);
}

TEST_CASE("errors name the line") {
    CHECK(contains(error_of("[grid]\nsize = 16\n[nope]\n"), "config line 3: unknown section [nope]"));
    CHECK(contains(error_of("[grid]\nwidth = 16\n"), "config line 2: unknown key 'grid.width'"));
    CHECK(contains(error_of("[grid]\nsize = 16\nsize = 32\n"), "config line 3: duplicate key 'grid.size'"));
    CHECK(contains(error_of("[training]\nepochs = ten\n"), "config line 2"));
    CHECK(contains(error_of("[training]\ninitial_lr = 1e-3x\n"), "bad number"));
    CHECK(contains(error_of("[sweep]\nalphas = [0, 0.5,\n  1]\n"), "same line"));
    CHECK(contains(error_of("size = 16\n"), "outside of any section"));
    CHECK(contains(error_of("[grid\n"), "malformed section header"));
    CHECK(contains(error_of("[channels]\ntheta = [0, 0.1, 0.2]\n"), "expected 4 entries"));
    CHECK(contains(error_of("[channels]\nsector = [\"full\", \"full\", \"full\", \"half\"]\n"), "unknown sector rule"));
    CHECK(contains(error_of("[output]\ndir = elsewhere\n"), "expected a quoted string"));
    CHECK(contains(error_of("[training]\nepochs = -1\n"), "non-negative integer"));
}

TEST_CASE("semantic validation") {
    CHECK(contains(error_of("[grid]\nsize = 18\n"), "not divisible"));
    CHECK(contains(error_of("[grid]\nsize = 2\n"), "at least 4"));
    CHECK(contains(error_of("[sweep]\nalphas = [0, 1.5]\n"), "[0, 1]"));
    CHECK(contains(error_of("[sweep]\nsigmas = [-1e-9]\n"), "non-negative"));
    CHECK(contains(error_of("[channels]\ntheta = [0, 0.1, 0.2, 1.2]\n"), "theta"));
    CHECK(contains(error_of("[unet]\ndropout = 1\n"), "dropout"));
    CHECK(contains(error_of("[generation]\namp_min = 2e-6\namp_max = 1e-6\n"), "amp_min"));
    CHECK(contains(error_of("[ensemble]\nmembers = 0\n"), "members"));
    CHECK(contains(error_of("[training]\nlr_drop_factor = 1.5\n"), "lr_drop_factor"));
    CHECK_THROWS_AS(load_config("/nonexistent/twuq.toml"), IoError);
}

TEST_CASE("make_system calibrates the reference planes") {
    ExperimentConfig c;
    c.reference.probe_count = 4;
    const auto s = make_system(c);
    CHECK(s.grid.size() == 16);
    CHECK(s.reference.source.rows == 6);
    CHECK(s.reference.alpha == 0.0);
    const auto again = make_system(c);
    CHECK(again.reference.source == s.reference.source);
    CHECK(again.reference.pixel == s.reference.pixel);
}

}  // TEST_SUITE
