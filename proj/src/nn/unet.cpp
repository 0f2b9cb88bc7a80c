#include "twuq/nn/unet.hpp"

#include "twuq/binary_io.hpp"

#include <cmath>

namespace twuq::nn {

void UNetConfig::validate() const {
    if (levels < 1) throw ConfigError("unet.levels must be at least 1");
    if (base_width < 1) throw ConfigError("unet.base_width must be positive");
    if (in_channels < 1 || out_channels < 1) throw ConfigError("unet channel counts must be positive");
    if (image_size == 0 || image_size % (std::size_t{1} << levels) != 0) {
        throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by 2^levels = " +
                          std::to_string(std::size_t{1} << levels));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("unet.dropout must lie in [0, 1)");
}

std::string UNetConfig::fingerprint() const {
    return "unet/v1 in=" + std::to_string(in_channels) + " out=" + std::to_string(out_channels) +
           " D=" + std::to_string(image_size) + " levels=" + std::to_string(levels) +
           " width=" + std::to_string(base_width);
}

namespace {

struct ParamSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in = 0;  // 0 for biases
};

std::vector<ParamSpec> layout(const UNetConfig& cfg) {
    std::vector<ParamSpec> specs;
    auto conv = [&](const std::string& name, std::size_t ci, std::size_t co, std::size_t k) {
        specs.push_back({name + ".w", {co, ci, k, k}, ci * k * k});
        specs.push_back({name + ".b", {co}, 0});
    };
    std::size_t ch = cfg.in_channels;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        const std::size_t width = cfg.base_width << l;
        conv("enc" + std::to_string(l) + ".conv1", ch, width, 3);
        conv("enc" + std::to_string(l) + ".conv2", width, width, 3);
        ch = width;
    }
    const std::size_t mid = cfg.base_width << cfg.levels;
    conv("mid.conv1", ch, mid, 3);
    conv("mid.conv2", mid, mid, 3);
    ch = mid;
    for (std::size_t l = cfg.levels; l-- > 0;) {
        const std::size_t width = cfg.base_width << l;
        const std::string p = "dec" + std::to_string(l);
        specs.push_back({p + ".up.w", {ch, width, 2, 2}, ch * 4});
        specs.push_back({p + ".up.b", {width}, 0});
        conv(p + ".conv1", 2 * width, width, 3);
        conv(p + ".conv2", width, width, 3);
        ch = width;
    }
    conv("head", ch, cfg.out_channels, 1);
    return specs;
}

}  // namespace

template <class T>
std::size_t NetworkWeights<T>::count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

template <class T>
void NetworkWeights<T>::zero_grad() {
    for (auto& p : params) std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
}

template <class T>
NetworkWeights<T> zero_weights(const UNetConfig& cfg) {
    cfg.validate();
    NetworkWeights<T> w;
    w.fingerprint = cfg.fingerprint();
    for (auto& spec : layout(cfg)) {
        Parameter<T> p;
        p.name = spec.name;
        p.value = Tensor<T>(spec.shape);
        p.grad = Tensor<T>(spec.shape);
        p.decay = spec.fan_in != 0;
        w.params.push_back(std::move(p));
    }
    return w;
}

template <class T>
NetworkWeights<T> init_weights(const UNetConfig& cfg, std::uint64_t member_seed) {
    NetworkWeights<T> w = zero_weights<T>(cfg);
    std::seed_seq seq{static_cast<std::uint32_t>(member_seed), static_cast<std::uint32_t>(member_seed >> 32),
                      0x494e4954u};
    std::mt19937_64 rng(seq);
    const auto specs = layout(cfg);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].fan_in == 0) continue;
        const double limit = std::sqrt(6.0 / static_cast<double>(specs[i].fan_in));
        for (T& v : w.params[i].value.data) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            v = static_cast<T>((2.0 * u - 1.0) * limit);
        }
    }
    return w;
}

template <class T>
NetworkWeights<T> convert(const NetworkWeights<float>& w) {
    NetworkWeights<T> out;
    out.fingerprint = w.fingerprint;
    for (const auto& p : w.params) {
        Parameter<T> q;
        q.name = p.name;
        q.decay = p.decay;
        q.value = Tensor<T>(p.value.shape);
        q.grad = Tensor<T>(p.value.shape);
        for (std::size_t i = 0; i < p.value.size(); ++i) q.value.data[i] = static_cast<T>(p.value.data[i]);
        out.params.push_back(std::move(q));
    }
    return out;
}

template <class T>
NodeId unet_graph(Graph<T>& g, const NetworkWeights<T>& w, const UNetConfig& cfg, NodeId input, Mode mode,
                  std::mt19937_64* rng) {
    if (w.fingerprint != cfg.fingerprint()) {
        throw FingerprintError("weights '" + w.fingerprint + "' do not match config '" + cfg.fingerprint() + "'");
    }
    const auto& in = g.value(input);
    const Dims4 d = dims4(in);
    if (d.c != cfg.in_channels || d.h != cfg.image_size || d.w != cfg.image_size) {
        throw DimensionError("unet input " + shape_str(in.shape) + " does not match " + cfg.fingerprint());
    }
    std::size_t next = 0;
    auto param = [&]() {
        const NodeId id = g.parameter(w.params[next].value, next);
        ++next;
        return id;
    };
    auto conv_relu = [&](NodeId x) {
        const NodeId k = param();
        const NodeId b = param();
        return relu(g, conv2d(g, x, k, b));
    };

    std::vector<NodeId> skips;
    NodeId x = input;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        x = conv_relu(conv_relu(x));
        x = dropout(g, x, cfg.dropout_rate, mode, rng);
        skips.push_back(x);
        x = maxpool2d(g, x);
    }
    x = conv_relu(conv_relu(x));
    for (std::size_t l = cfg.levels; l-- > 0;) {
        const NodeId k = param();
        const NodeId b = param();
        const NodeId up = relu(g, transposed_conv2d(g, x, k, b));
        x = conv_relu(conv_relu(concat(g, skips[l], up)));
    }
    const NodeId k = param();
    const NodeId b = param();
    return conv2d(g, x, k, b);
}

template <class T>
Tensor<T> unet_forward(const NetworkWeights<T>& w, const UNetConfig& cfg, const Tensor<T>& input, Mode mode,
                       std::mt19937_64* rng) {
    Graph<T> g;
    const NodeId x = g.constant(input);
    const NodeId y = unet_graph(g, w, cfg, x, mode, rng);
    return g.value(y);
}

#define TWUQ_INSTANTIATE_UNET(T)                                                                            \
    template struct NetworkWeights<T>;                                                                      \
    template NetworkWeights<T> zero_weights<T>(const UNetConfig&);                                          \
    template NetworkWeights<T> init_weights<T>(const UNetConfig&, std::uint64_t);                           \
    template NetworkWeights<T> convert<T>(const NetworkWeights<float>&);                                    \
    template NodeId unet_graph<T>(Graph<T>&, const NetworkWeights<T>&, const UNetConfig&, NodeId, Mode,     \
                                  std::mt19937_64*);                                                        \
    template Tensor<T> unet_forward<T>(const NetworkWeights<T>&, const UNetConfig&, const Tensor<T>&, Mode, \
                                       std::mt19937_64*);

TWUQ_INSTANTIATE_UNET(float)
TWUQ_INSTANTIATE_UNET(double)

namespace {

constexpr std::string_view kMagic = "TWNN";

}  // namespace

void save_weights(const NetworkWeights<float>& w, std::uint64_t config_hash, const std::filesystem::path& path) {
    io::Writer out;
    out.put_bytes(kMagic);
    out.put(kCheckpointVersion);
    out.put_string(w.fingerprint);
    out.put(config_hash);
    out.put(static_cast<std::uint32_t>(w.params.size()));
    for (const auto& p : w.params) {
        out.put_string(p.name);
        out.put(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape) out.put(static_cast<std::uint32_t>(d));
        for (float v : p.value.data) out.put(v);
    }
    out.write_file(path);
}

LoadedWeights load_weights(const std::filesystem::path& path, const UNetConfig& expected) {
    auto r = io::Reader::from_file(path);
    r.set_failure_kind(FormatError::Kind::Header);
    if (r.get_bytes(4) != kMagic) throw FormatError(FormatError::Kind::Header, path.string() + ": not a TWNN file");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError(FormatError::Kind::Version,
                          path.string() + ": unsupported TWNN version " + std::to_string(version));
    }
    const std::string fingerprint = r.get_string(4096);
    LoadedWeights loaded;
    loaded.config_hash = r.get<std::uint64_t>();
    if (fingerprint != expected.fingerprint()) {
        throw FingerprintError(path.string() + ": checkpoint is '" + fingerprint + "', expected '" +
                               expected.fingerprint() + "'");
    }
    const auto n = r.get<std::uint32_t>();
    r.set_failure_kind(FormatError::Kind::Payload);
    NetworkWeights<float> w = zero_weights<float>(expected);
    if (n != w.params.size()) {
        throw FormatError(FormatError::Kind::Payload, path.string() + ": parameter count mismatch");
    }
    for (auto& p : w.params) {
        const std::string name = r.get_string(4096);
        const auto rank = r.get<std::uint32_t>();
        Shape shape;
        for (std::uint32_t i = 0; i < rank && i < 8; ++i) shape.push_back(r.get<std::uint32_t>());
        if (name != p.name || shape != p.value.shape) {
            throw FormatError(FormatError::Kind::Payload, path.string() + ": unexpected tensor '" + name + "'");
        }
        for (float& v : p.value.data) v = r.get<float>();
    }
    r.expect_end();
    loaded.weights = std::move(w);
    return loaded;
}

}  // namespace twuq::nn
