#include "twuq/uq.hpp"

#include "twuq/binary_io.hpp"
#include "twuq/errors.hpp"
#include "twuq/nn/train.hpp"
#include "twuq/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace twuq::uq {

namespace {

// Sums v in a fixed binary-tree order.
double pairwise_sum(const double* v, std::size_t n) {
    if (n == 0) return 0.0;
    if (n == 1) return v[0];
    const std::size_t h = n / 2;
    return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

void check_grid(std::size_t n_pred, const Topography& truth) {
    if (n_pred != truth.height.size()) throw DimensionError("prediction and truth differ in size");
}

std::vector<double> abs_errors(std::span<const double> pred, const Topography& truth) {
    check_grid(pred.size(), truth);
    std::vector<double> e;
    for (std::size_t p = 0; p < pred.size(); ++p) {
        if (truth.valid[p]) e.push_back(std::abs(pred[p] - truth.height[p]));
    }
    if (e.empty()) throw ArgumentError("no valid pixels");
    return e;
}

double lower_median(std::vector<double>& v) {
    const std::size_t k = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

double sum_sq_error(std::span<const double> pred, const Topography& truth) {
    double s = 0.0;
    for (std::size_t p = 0; p < pred.size(); ++p) {
        if (!truth.valid[p]) continue;
        const double d = pred[p] - truth.height[p];
        s += d * d;
    }
    return s;
}

}  // namespace

void EnsembleModel::validate(bool allow_single) const {
    config.validate();
    const std::size_t min_m = allow_single ? 1 : 2;
    if (members.size() < min_m) {
        throw ConfigError("ensemble needs at least " + std::to_string(min_m) + " members, got " +
                          std::to_string(members.size()));
    }
    const std::string fp = config.fingerprint();
    for (const auto& m : members) {
        if (m.fingerprint != fp) throw FingerprintError("member '" + m.fingerprint + "' does not match '" + fp + "'");
    }
}

EnsembleModel load_ensemble(const std::filesystem::path& dir, const nn::UNetConfig& cfg) {
    EnsembleModel model;
    model.config = cfg;
    for (std::size_t i = 0;; ++i) {
        const auto path = dir / ("member_" + std::to_string(i) + ".twnn");
        if (!std::filesystem::exists(path)) break;
        auto loaded = nn::load_weights(path, cfg);
        if (i == 0) {
            model.config_hash = loaded.config_hash;
        } else if (loaded.config_hash != model.config_hash) {
            throw FingerprintError(path.string() + ": config hash " + io::hex64(loaded.config_hash) +
                                   " differs from member_0 (" + io::hex64(model.config_hash) + ")");
        }
        model.members.push_back(std::move(loaded.weights));
    }
    if (model.members.empty()) throw IoError(dir.string() + ": no member_*.twnn checkpoints");
    return model;
}

std::size_t UqField::valid_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

UqField ensemble_stats(std::span<const Topography> members) {
    if (members.empty()) throw ArgumentError("ensemble has no members");
    const auto& first = members.front();
    for (const auto& m : members) {
        if (m.size != first.size || m.valid != first.valid) throw DimensionError("member outputs differ in shape");
    }
    const std::size_t M = members.size();
    UqField f;
    f.size = first.size;
    f.mask = first.valid;
    f.mean.assign(first.height.size(), 0.0);
    f.uc.assign(first.height.size(), 0.0);
    std::vector<double> v(M), dev(M);
    for (std::size_t p = 0; p < f.mean.size(); ++p) {
        if (!f.mask[p]) continue;
        for (std::size_t j = 0; j < M; ++j) v[j] = members[j].height[p];
        std::sort(v.begin(), v.end());
        const double mean = pairwise_sum(v.data(), M) / static_cast<double>(M);
        for (std::size_t j = 0; j < M; ++j) dev[j] = (v[j] - mean) * (v[j] - mean);
        std::sort(dev.begin(), dev.end());
        f.mean[p] = mean;
        f.uc[p] = std::sqrt(pairwise_sum(dev.data(), M) / static_cast<double>(M));
    }
    return f;
}

MemberPredictions predict_members(const EnsembleModel& model, const dataset::Dataset& ds, std::size_t batch_size) {
    if (ds.samples.empty()) throw ArgumentError("empty dataset");
    if (ds.size != model.config.image_size) {
        throw DimensionError("dataset D = " + std::to_string(ds.size) + " but model expects " +
                             std::to_string(model.config.image_size));
    }
    if (batch_size == 0) batch_size = 1;
    const auto set = nn::TrainingSet<float>::pack(ds);
    const std::size_t N = ds.samples.size();
    const std::size_t M = model.members.size();
    const std::size_t pix = ds.size * ds.size;
    MemberPredictions out(N, std::vector<Topography>(M));

    const auto members = static_cast<std::ptrdiff_t>(M);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t jj = 0; jj < members; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        std::vector<std::size_t> idx;
        nn::Tensor<float> input, target, mask;
        for (std::size_t start = 0; start < N; start += batch_size) {
            const std::size_t n = std::min(batch_size, N - start);
            idx.resize(n);
            for (std::size_t b = 0; b < n; ++b) idx[b] = start + b;
            nn::gather_batch(set, std::span<const std::size_t>(idx), input, target, mask);
            const auto pred = nn::unet_forward(model.members[j], model.config, input, nn::Mode::Eval);
            for (std::size_t b = 0; b < n; ++b) {
                const auto& truth = ds.samples[start + b].target;
                Topography t;
                t.size = ds.size;
                t.valid = truth.valid;
                t.height.assign(pix, 0.0);
                for (std::size_t p = 0; p < pix; ++p) {
                    if (t.valid[p]) t.height[p] = static_cast<double>(pred.data[b * pix + p]) * nn::kLengthUnit;
                }
                out[start + b][j] = std::move(t);
            }
        }
    }
    return out;
}

UqField ensemble_predict(const EnsembleModel& model, const optics::OpldStack& input) {
    dataset::Dataset ds;
    ds.size = input.size;
    dataset::Sample s;
    s.input = input;
    // The aperture mask is the union of channel validity (channel 1 covers the full disc).
    s.target.size = input.size;
    s.target.height.assign(input.size * input.size, 0.0);
    s.target.valid.assign(input.size * input.size, 0);
    for (std::size_t k = 0; k < optics::kChannels; ++k) {
        for (std::size_t p = 0; p < s.target.valid.size(); ++p) {
            if (input.valid[input.index(k, p)]) s.target.valid[p] = 1;
        }
    }
    ds.samples.push_back(std::move(s));
    const auto preds = predict_members(model, ds, 1);
    return ensemble_stats(preds[0]);
}

double topography_uncertainty(const UqField& field) {
    std::vector<double> sq;
    for (std::size_t p = 0; p < field.uc.size(); ++p) {
        if (field.mask[p]) sq.push_back(field.uc[p] * field.uc[p]);
    }
    if (sq.empty()) throw ArgumentError("no valid pixels");
    return std::sqrt(pairwise_sum(sq.data(), sq.size()) / static_cast<double>(sq.size()));
}

Tube uncertainty_tube(const UqField& field, double z) {
    if (!(z >= 0.0)) throw ArgumentError("z must be non-negative");
    Tube t;
    t.lower.assign(field.mean.size(), 0.0);
    t.upper.assign(field.mean.size(), 0.0);
    for (std::size_t p = 0; p < field.mean.size(); ++p) {
        if (!field.mask[p]) continue;
        t.lower[p] = field.mean[p] - z * field.uc[p];
        t.upper[p] = field.mean[p] + z * field.uc[p];
    }
    return t;
}

std::vector<std::uint8_t> coverage(const UqField& field, const Topography& truth, double z) {
    check_grid(field.mean.size(), truth);
    std::vector<std::uint8_t> hit(field.mean.size(), 0);
    for (std::size_t p = 0; p < hit.size(); ++p) {
        if (!field.mask[p] || !truth.valid[p]) continue;
        hit[p] = std::abs(truth.height[p] - field.mean[p]) <= z * field.uc[p] ? 1 : 0;
    }
    return hit;
}

CoverageMap coverage_probability_map(std::span<const std::vector<std::uint8_t>> hits,
                                     std::span<const std::uint8_t> mask, std::size_t size) {
    if (hits.empty()) throw ArgumentError("no samples");
    CoverageMap map;
    map.size = size;
    map.samples = hits.size();
    map.mask.assign(mask.begin(), mask.end());
    map.cp.assign(mask.size(), 0.0);
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        std::size_t count = 0;
        for (const auto& h : hits) count += h.at(p);
        map.cp[p] = static_cast<double>(count) / static_cast<double>(hits.size());
    }
    return map;
}

double total_coverage(const CoverageMap& map) {
    std::vector<double> v;
    for (std::size_t p = 0; p < map.cp.size(); ++p) {
        if (map.mask[p]) v.push_back(map.cp[p]);
    }
    if (v.empty()) throw ArgumentError("no valid pixels");
    return pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size());
}

double rmse(std::span<const double> pred, const Topography& truth) {
    check_grid(pred.size(), truth);
    const std::size_t n = truth.valid_count();
    if (n == 0) throw ArgumentError("no valid pixels");
    return std::sqrt(sum_sq_error(pred, truth) / static_cast<double>(n));
}

double median_abs_error(std::span<const double> pred, const Topography& truth) {
    auto e = abs_errors(pred, truth);
    return lower_median(e);
}

UqReport evaluate(const MemberPredictions& preds, const dataset::Dataset& truth, double z) {
    if (preds.size() != truth.samples.size() || preds.empty()) throw DimensionError("prediction count mismatch");
    const std::size_t M = preds.front().size();
    UqReport r;
    r.config_hash = truth.provenance.config_hash;
    r.summary.alpha = truth.provenance.alpha;
    r.summary.sigma = truth.provenance.sigma;
    r.summary.members = M;
    r.summary.samples = truth.samples.size();
    r.summary.z = z;

    std::vector<std::vector<std::uint8_t>> hits;
    std::vector<double> pooled_abs;
    double ens_sse = 0.0, member_sse = 0.0, single_rmse = 0.0;
    std::size_t pixels = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& t = truth.samples[i].target;
        if (preds[i].size() != M) throw DimensionError("member count differs between samples");
        UqField f = ensemble_stats(preds[i]);
        SampleRow row;
        row.id = truth.samples[i].meta.id;
        row.rmse = rmse(f.mean, t);
        row.median_abs_error = median_abs_error(f.mean, t);
        row.topography_uc = topography_uncertainty(f);
        double member_rmse = 0.0;
        for (const auto& m : preds[i]) {
            member_rmse += rmse(m.height, t);
            member_sse += sum_sq_error(m.height, t);
        }
        row.mean_member_rmse = member_rmse / static_cast<double>(M);
        single_rmse += row.mean_member_rmse;
        ens_sse += sum_sq_error(f.mean, t);
        pixels += t.valid_count();
        auto e = abs_errors(f.mean, t);
        pooled_abs.insert(pooled_abs.end(), e.begin(), e.end());
        auto h = coverage(f, t, z);
        std::size_t nh = 0;
        for (auto b : h) nh += b;
        row.hit_fraction = static_cast<double>(nh) / static_cast<double>(t.valid_count());
        hits.push_back(std::move(h));
        r.rows.push_back(row);
        r.fields.push_back(std::move(f));
    }
    const double n = static_cast<double>(preds.size());
    r.coverage = coverage_probability_map(hits, truth.samples.front().target.valid, truth.size);
    auto& s = r.summary;
    s.total_cp = total_coverage(r.coverage);
    s.single_net_rmse = single_rmse / n;
    double ens = 0.0, uc = 0.0;
    for (const auto& row : r.rows) {
        ens += row.rmse;
        uc += row.topography_uc;
    }
    s.ensemble_rmse = ens / n;
    s.topography_uc = uc / n;
    s.median_error = lower_median(pooled_abs);
    s.ensemble_mse = ens_sse / static_cast<double>(pixels);
    s.mean_member_mse = member_sse / static_cast<double>(M) / static_cast<double>(pixels);
    s.jensen_holds = s.ensemble_mse <= s.mean_member_mse;
    return r;
}

namespace {

void write_meta(std::ostream& out, const UqReport& r) {
    const auto& s = r.summary;
    out << "# config_hash=" << io::hex64(r.config_hash) << "\n"
        << "# alpha=" << num(s.alpha) << "\n"
        << "# sigma=" << num(s.sigma) << "\n"
        << "# members=" << s.members << "\n"
        << "# samples=" << s.samples << "\n"
        << "# z=" << num(s.z) << "\n"
        << "# total_cp=" << num(s.total_cp) << "\n";
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

}  // namespace

void write_report_csv(const UqReport& report, const std::filesystem::path& path) {
    auto out = open_out(path);
    write_meta(out, report);
    out << "sample_id,rmse,median_abs_error,topography_uc,mean_member_rmse,hit_fraction\n";
    for (const auto& row : report.rows) {
        out << row.id << ',' << num(row.rmse) << ',' << num(row.median_abs_error) << ',' << num(row.topography_uc)
            << ',' << num(row.mean_member_rmse) << ',' << num(row.hit_fraction) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void write_coverage_map(const UqReport& report, const std::filesystem::path& path) {
    auto out = open_out(path);
    write_meta(out, report);
    out << "row,col,cp\n";
    const auto& m = report.coverage;
    for (std::size_t p = 0; p < m.cp.size(); ++p) {
        if (!m.mask[p]) continue;
        out << p / m.size << ',' << p % m.size << ',' << num(m.cp[p]) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace twuq::uq
