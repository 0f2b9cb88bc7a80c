#include "twuq/dataset.hpp"

#include "twuq/binary_io.hpp"
#include "twuq/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace twuq::dataset {

void GenerationConfig::validate() const {
    if (n_terms < 2) throw ConfigError("generation.n_terms must be at least 2");
    if (!(decay >= 0.0)) throw ConfigError("generation.decay must be non-negative");
    if (!(amp_min > 0.0 && amp_max >= amp_min)) {
        throw ConfigError("generation amplitude range must satisfy 0 < amp_min <= amp_max");
    }
}

namespace {

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
    return std::mt19937_64(seq);
}

}  // namespace

TopographyDraw sample_topography(std::uint64_t seed, const DiscGrid& grid, const GenerationConfig& cfg) {
    cfg.validate();
    auto rng = stream(seed, 0x544f504fu);

    std::vector<double> sigma(cfg.n_terms, 0.0);
    double norm2 = 0.0;
    for (std::size_t j = 1; j < cfg.n_terms; ++j) {
        sigma[j] = std::pow(zernike::index_to_nm(j).n + 1.0, -cfg.decay);
        norm2 += sigma[j] * sigma[j];
    }
    const double norm = std::sqrt(norm2);

    double amplitude = cfg.amp_min;
    if (cfg.amp_max > cfg.amp_min) {
        std::uniform_real_distribution<double> u(std::log(cfg.amp_min), std::log(cfg.amp_max));
        amplitude = std::exp(u(rng));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> c(cfg.n_terms, 0.0);
    for (std::size_t j = 1; j < cfg.n_terms; ++j) c[j] = amplitude * sigma[j] / norm * normal(rng);

    TopographyDraw draw{zernike::ZernikeCoeffs(std::move(c)), Topography{}, amplitude};
    draw.topography = zernike::eval_expansion(draw.coeffs, grid);
    return draw;
}

std::uint64_t noise_seed(std::uint64_t sample_seed) {
    return io::fnv1a(std::string_view(reinterpret_cast<const char*>(&sample_seed), sizeof sample_seed),
                     0x6e6f697365ull);
}

Dataset build_dataset(const BuildRequest& request, const SystemModel& system, const GenerationConfig& gen) {
    if (request.count == 0) throw ArgumentError("dataset needs at least one sample");
    gen.validate();
    const auto ref = optics::set_calibration_error(system.reference, request.alpha);
    if (!(request.sigma >= 0.0)) throw ArgumentError("noise sigma must be non-negative");

    Dataset ds;
    ds.size = system.grid.size();
    ds.provenance = {request.base_seed, request.alpha, request.sigma, request.config_hash};
    ds.samples.resize(request.count);

    const auto n = static_cast<std::ptrdiff_t>(request.count);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::uint64_t seed = request.base_seed + static_cast<std::uint64_t>(i);
        auto draw = sample_topography(seed, system.grid, gen);
        auto input = optics::forward_model(draw.topography, system.channels, ref, system.grid, system.forward);
        input = optics::add_noise(input, request.sigma, noise_seed(seed));
        for (double& v : input.values) v = round_to_float(v);
        for (double& v : draw.topography.height) v = round_to_float(v);
        auto& s = ds.samples[static_cast<std::size_t>(i)];
        s.input = std::move(input);
        s.target = std::move(draw.topography);
        s.meta = {static_cast<std::uint64_t>(i), draw.amplitude, seed};
    }
    return ds;
}

namespace {

constexpr std::string_view kMagic = "TWUQ";

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    if (ds.samples.empty()) throw ArgumentError("refusing to save an empty dataset");
    const std::size_t d = ds.size;
    io::Writer w;
    w.put_bytes(kMagic);
    w.put(kFormatVersion);
    w.put(static_cast<std::uint32_t>(d));
    w.put(static_cast<std::uint32_t>(optics::kChannels));
    w.put(static_cast<std::uint64_t>(ds.samples.size()));
    w.put(ds.provenance.generator_seed);
    w.put(ds.provenance.alpha);
    w.put(ds.provenance.sigma);
    w.put(ds.provenance.config_hash);
    for (const auto& s : ds.samples) {
        if (s.input.size != d || s.target.size != d) throw DimensionError("sample grid differs from dataset grid");
        w.put(s.meta.id);
        w.put(s.meta.amplitude);
        w.put(s.meta.coeff_seed);
    }
    std::vector<std::uint8_t> bits;
    for (const auto& s : ds.samples) {
        for (double v : s.input.values) w.put(static_cast<float>(v));
    }
    for (const auto& s : ds.samples) bits.insert(bits.end(), s.input.valid.begin(), s.input.valid.end());
    w.put_bits(bits);
    bits.clear();
    for (const auto& s : ds.samples) {
        for (double v : s.target.height) w.put(static_cast<float>(v));
    }
    for (const auto& s : ds.samples) bits.insert(bits.end(), s.target.valid.begin(), s.target.valid.end());
    w.put_bits(bits);
    w.write_file(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
    auto r = io::Reader::from_file(path);
    r.set_failure_kind(FormatError::Kind::Header);
    if (r.get_bytes(4) != kMagic) throw FormatError(FormatError::Kind::Header, path.string() + ": not a TWUQ file");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) {
        throw FormatError(FormatError::Kind::Version, path.string() + ": unsupported TWUQ version " +
                                                          std::to_string(version));
    }
    Dataset ds;
    ds.size = r.get<std::uint32_t>();
    const auto channels = r.get<std::uint32_t>();
    const auto count = r.get<std::uint64_t>();
    ds.provenance.generator_seed = r.get<std::uint64_t>();
    ds.provenance.alpha = r.get<double>();
    ds.provenance.sigma = r.get<double>();
    ds.provenance.config_hash = r.get<std::uint64_t>();
    if (ds.size == 0 || ds.size > 4096 || channels != optics::kChannels || count == 0) {
        throw FormatError(FormatError::Kind::Header, path.string() + ": inconsistent TWUQ header");
    }
    const std::size_t d = ds.size;
    const std::size_t pix = d * d;
    // Reject counts the file cannot possibly hold before allocating.
    const std::size_t per_sample = 24 + 5 * pix * sizeof(float);
    if (count > r.remaining() / per_sample + 1) {
        throw FormatError(FormatError::Kind::Payload, path.string() + ": truncated payload");
    }
    r.set_failure_kind(FormatError::Kind::Payload);

    ds.samples.resize(count);
    for (auto& s : ds.samples) {
        s.meta.id = r.get<std::uint64_t>();
        s.meta.amplitude = r.get<double>();
        s.meta.coeff_seed = r.get<std::uint64_t>();
    }
    for (auto& s : ds.samples) {
        s.input = optics::OpldStack(d);
        for (double& v : s.input.values) v = static_cast<double>(r.get<float>());
    }
    auto bits = r.get_bits(count * optics::kChannels * pix);
    for (std::size_t i = 0; i < count; ++i) {
        auto first = bits.begin() + static_cast<std::ptrdiff_t>(i * optics::kChannels * pix);
        std::copy(first, first + static_cast<std::ptrdiff_t>(optics::kChannels * pix),
                  ds.samples[i].input.valid.begin());
    }
    for (auto& s : ds.samples) {
        s.target.size = d;
        s.target.height.resize(pix);
        for (double& v : s.target.height) v = static_cast<double>(r.get<float>());
    }
    bits = r.get_bits(count * pix);
    for (std::size_t i = 0; i < count; ++i) {
        auto first = bits.begin() + static_cast<std::ptrdiff_t>(i * pix);
        ds.samples[i].target.valid.assign(first, first + static_cast<std::ptrdiff_t>(pix));
    }
    r.expect_end();
    return ds;
}

double rms_deviation(const Topography& t) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < t.height.size(); ++p) {
        if (!t.valid[p]) continue;
        s += t.height[p] * t.height[p];
        ++n;
    }
    if (n == 0) throw ArgumentError("topography has no valid pixels");
    return std::sqrt(s / static_cast<double>(n));
}

double peak_to_valley(const Topography& t) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t p = 0; p < t.height.size(); ++p) {
        if (!t.valid[p]) continue;
        lo = std::min(lo, t.height[p]);
        hi = std::max(hi, t.height[p]);
    }
    if (hi < lo) throw ArgumentError("topography has no valid pixels");
    return hi - lo;
}

TopographyStats topography_stats(const Dataset& ds) {
    if (ds.samples.empty()) throw ArgumentError("empty dataset");
    std::vector<double> rms;
    TopographyStats st;
    st.min_pv = std::numeric_limits<double>::infinity();
    for (const auto& s : ds.samples) {
        rms.push_back(rms_deviation(s.target));
        const double pv = peak_to_valley(s.target);
        st.min_pv = std::min(st.min_pv, pv);
        st.max_pv = std::max(st.max_pv, pv);
    }
    double sum = 0.0;
    for (double v : rms) sum += v;
    st.mean_rms = sum / static_cast<double>(rms.size());
    std::sort(rms.begin(), rms.end());
    st.median_rms = rms[(rms.size() - 1) / 2];
    return st;
}

double input_rmsd(const Dataset& a, const Dataset& b) {
    if (a.samples.size() != b.samples.size() || a.size != b.size) {
        throw DimensionError("datasets differ in size");
    }
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto& x = a.samples[i].input;
        const auto& y = b.samples[i].input;
        for (std::size_t k = 0; k < x.values.size(); ++k) {
            if (!x.valid[k] || !y.valid[k]) continue;
            const double d = x.values[k] - y.values[k];
            s += d * d;
            ++n;
        }
    }
    if (n == 0) throw ArgumentError("no overlapping valid entries");
    return std::sqrt(s / static_cast<double>(n));
}

}  // namespace twuq::dataset
