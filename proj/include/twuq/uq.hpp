#pragma once

#include "twuq/dataset.hpp"
#include "twuq/grid.hpp"
#include "twuq/nn/unet.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace twuq::uq {

struct EnsembleModel {
    nn::UNetConfig config;
    std::vector<nn::NetworkWeights<float>> members;
    std::uint64_t config_hash = 0;

    std::size_t size() const { return members.size(); }
    // Requires M >= 2 (M >= 1 with allow_single) and one shared fingerprint.
    void validate(bool allow_single = false) const;
};

// Loads member_0.twnn, member_1.twnn, ... from dir until the first gap.
// Throws IoError when no checkpoint is found, FingerprintError when
// members disagree on the config hash.
EnsembleModel load_ensemble(const std::filesystem::path& dir, const nn::UNetConfig& cfg);

// Pixelwise ensemble mean and population standard deviation [m].
struct UqField {
    std::size_t size = 0;
    std::vector<double> mean;
    std::vector<double> uc;
    std::vector<std::uint8_t> mask;

    std::size_t valid_count() const;
};

// Member values at each pixel are sorted before pairwise summation, so the
// result does not depend on member order.
UqField ensemble_stats(std::span<const Topography> members);

// member_outputs[i][j] = prediction of member j for sample i.
using MemberPredictions = std::vector<std::vector<Topography>>;

// Runs every member on every sample of ds in eval mode. Members are
// evaluated in parallel; each member's outputs do not depend on the thread
// count.
MemberPredictions predict_members(const EnsembleModel& model, const dataset::Dataset& ds,
                                  std::size_t batch_size = 64);

UqField ensemble_predict(const EnsembleModel& model, const optics::OpldStack& input);

// rms of uc over the valid pixels.
double topography_uncertainty(const UqField& field);

struct Tube {
    std::vector<double> lower;
    std::vector<double> upper;
};

Tube uncertainty_tube(const UqField& field, double z = 1.96);

// hit(p) = |truth - mean| <= z * uc. With uc = 0 (or z = 0) this is exact
// equality. Invalid pixels are 0.
std::vector<std::uint8_t> coverage(const UqField& field, const Topography& truth, double z = 1.96);

struct CoverageMap {
    std::size_t size = 0;
    std::size_t samples = 0;
    std::vector<double> cp;
    std::vector<std::uint8_t> mask;
};

// cp(p) = mean over samples of hit(p).
CoverageMap coverage_probability_map(std::span<const std::vector<std::uint8_t>> hits,
                                     std::span<const std::uint8_t> mask, std::size_t size);
double total_coverage(const CoverageMap& map);

double rmse(std::span<const double> pred, const Topography& truth);
// Lower-middle element for even pixel counts.
double median_abs_error(std::span<const double> pred, const Topography& truth);

struct SampleRow {
    std::uint64_t id = 0;
    double rmse = 0.0;
    double median_abs_error = 0.0;
    double topography_uc = 0.0;
    double mean_member_rmse = 0.0;
    double hit_fraction = 0.0;
};

struct UqSummary {
    double alpha = 0.0;
    double sigma = 0.0;
    std::size_t members = 0;
    std::size_t samples = 0;
    double z = 1.96;
    double single_net_rmse = 0.0;   // mean over members and samples of per-sample rmse
    double ensemble_rmse = 0.0;     // mean over samples of per-sample rmse
    double median_error = 0.0;      // median of all pooled absolute errors
    double topography_uc = 0.0;     // mean over samples
    double total_cp = 0.0;
    double ensemble_mse = 0.0;      // pooled over all valid pixels
    double mean_member_mse = 0.0;
    bool jensen_holds = false;      // ensemble_mse <= mean_member_mse
};

struct UqReport {
    UqSummary summary;
    std::vector<SampleRow> rows;
    CoverageMap coverage;
    std::vector<UqField> fields;  // one per sample
    std::uint64_t config_hash = 0;
};

UqReport evaluate(const MemberPredictions& preds, const dataset::Dataset& truth, double z = 1.96);

// One row per sample; header comment lines carry the config hash and the
// run metadata. See docs/formats.md.
void write_report_csv(const UqReport& report, const std::filesystem::path& path);
void write_coverage_map(const UqReport& report, const std::filesystem::path& path);

}  // namespace twuq::uq
