#pragma once

#include "twuq/config.hpp"
#include "twuq/dataset.hpp"
#include "twuq/uq.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace twuq::experiment {

inline constexpr const char* kToolVersion = "0.1.0";

struct Options {
    bool allow_single_member = false;
    std::ostream* log = nullptr;  // progress lines; nullptr for silence
};

enum class Split { Train, Test };
Split parse_split(const std::string& s);

// Dataset for one split of the config at the given alpha and sigma.
dataset::Dataset make_split(const ExperimentConfig& cfg, const dataset::SystemModel& system, Split split,
                            double alpha = 0.0, double sigma = 0.0, std::optional<std::uint64_t> seed = {});

struct GenResult {
    dataset::Dataset data;
    dataset::TopographyStats stats;
};

// Writes a TWUQ file for the split and reports target statistics.
GenResult cmd_gen(const ExperimentConfig& cfg, Split split, const std::filesystem::path& out,
                  std::optional<std::uint64_t> seed, const Options& opt);

struct MemberStatus {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double final_loss = 0.0;
};

// Trains members 0..M-1 with seed member_seed + i on the training split
// (loaded from data when given, generated otherwise). Writes
// member_<i>.twnn, loss_history.csv, train_manifest.json and config.toml.
// A diverging member is reported in its status; the others still finish.
std::vector<MemberStatus> cmd_train(const ExperimentConfig& cfg, std::size_t members, const std::filesystem::path& out,
                                    const std::filesystem::path& data, const Options& opt);

// Loads the ensemble and checks it against the config hash.
uq::EnsembleModel load_model(const ExperimentConfig& cfg, const std::filesystem::path& dir, const Options& opt);

// Writes uq_report.csv, coverage_map.csv, summary.csv and the SVG figures.
// Throws Error when the Jensen bound fails.
uq::UqReport cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& model_dir,
                      const std::filesystem::path& data, double z, const std::filesystem::path& out,
                      const Options& opt);

struct SweepRow {
    double sigma = 0.0;
    double alpha = 0.0;
    double input_rmsd = 0.0;  // vs. the alpha = 0, sigma = 0 inputs
    uq::UqSummary summary;
    std::uint64_t target_hash = 0;
};

// One row per alpha at sigma = 0; rows are flushed to calibration_sweep.csv
// as they complete.
std::vector<SweepRow> cmd_sweep_calibration(const ExperimentConfig& cfg, const std::filesystem::path& model_dir,
                                            const std::vector<double>& alphas, const std::filesystem::path& out,
                                            const Options& opt);

// Crossed sigma x alpha sweep written to noise_sweep.csv.
std::vector<SweepRow> cmd_sweep_noise(const ExperimentConfig& cfg, const std::filesystem::path& model_dir,
                                      const std::vector<double>& sigmas, const std::vector<double>& alphas,
                                      const std::filesystem::path& out, const Options& opt);

// Collects every CSV under runs (recursively) that carries a config_hash
// header, refuses mixed hashes, and writes report.md plus tables.csv to
// out. Returns the report path.
std::filesystem::path cmd_report(const std::filesystem::path& runs, const std::filesystem::path& out,
                                 const Options& opt);

// Hash of the targets (heights and masks) of a dataset.
std::uint64_t target_hash(const dataset::Dataset& ds);

// Reads the "# config_hash=" header of a text artifact; nullopt if absent.
std::optional<std::string> read_config_hash(const std::filesystem::path& path);

}  // namespace twuq::experiment
