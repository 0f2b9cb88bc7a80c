#include "twuq/nn/graph.hpp"
#include "twuq/nn/unet.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

using namespace twuq;
using namespace twuq::nn;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.data) v = u(rng);
    return t;
}

// Builds a scalar loss from parameter nodes bound to the given tensors.
using Builder = std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>;

double loss_value(std::vector<Tensor<double>>& inputs, const Builder& build) {
    Graph<double> g;
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < inputs.size(); ++i) ids.push_back(g.parameter(inputs[i], i));
    return g.value(build(g, ids)).data[0];
}

// Largest |analytic - numeric| over the largest |numeric|, central
// differences with step h.
double gradient_error(std::vector<Tensor<double>> inputs, const Builder& build, double h = 1e-6) {
    Graph<double> g;
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < inputs.size(); ++i) ids.push_back(g.parameter(inputs[i], i));
    g.backward(build(g, ids));
    std::vector<Tensor<double>> analytic;
    for (const auto& id : ids) analytic.push_back(g.grad(id));

    double diff = 0.0, scale = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        for (std::size_t i = 0; i < inputs[t].size(); ++i) {
            const double keep = inputs[t].data[i];
            inputs[t].data[i] = keep + h;
            const double up = loss_value(inputs, build);
            inputs[t].data[i] = keep - h;
            const double down = loss_value(inputs, build);
            inputs[t].data[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            diff = std::max(diff, std::abs(numeric - analytic[t].data[i]));
            scale = std::max(scale, std::abs(numeric));
        }
    }
    REQUIRE(scale > 0.0);
    return diff / scale;
}

// Loss = masked MSE against a fixed random target with a fixed random mask.
struct Head {
    Tensor<double> target, mask;

    explicit Head(const Shape& s, std::uint64_t seed) : target(random_tensor(s, seed)), mask(s) {
        std::mt19937_64 rng(seed + 1);
        for (double& m : mask.data) m = (rng() % 4 != 0) ? 1.0 : 0.0;
        mask.data[0] = 1.0;
    }
};

// --- direct single-sample oracle, layout [c][h][w] ---

using Image = std::vector<double>;

Image conv_same(const Image& x, std::size_t ci, std::size_t d, const Tensor<double>& w, const Tensor<double>& b) {
    const std::size_t co = w.shape[0], k = w.shape[2];
    const long pad = static_cast<long>(k / 2);
    Image y(co * d * d);
    for (std::size_t o = 0; o < co; ++o) {
        for (long r = 0; r < static_cast<long>(d); ++r) {
            for (long c = 0; c < static_cast<long>(d); ++c) {
                double acc = b.data[o];
                for (std::size_t i = 0; i < ci; ++i) {
                    for (long a = 0; a < static_cast<long>(k); ++a) {
                        for (long e = 0; e < static_cast<long>(k); ++e) {
                            const long rr = r + a - pad, cc = c + e - pad;
                            if (rr < 0 || cc < 0 || rr >= static_cast<long>(d) || cc >= static_cast<long>(d)) continue;
                            acc += w.data[((o * ci + i) * k + static_cast<std::size_t>(a)) * k + static_cast<std::size_t>(e)] *
                                   x[(i * d + static_cast<std::size_t>(rr)) * d + static_cast<std::size_t>(cc)];
                        }
                    }
                }
                y[(o * d + static_cast<std::size_t>(r)) * d + static_cast<std::size_t>(c)] = acc;
            }
        }
    }
    return y;
}

Image relu_img(Image x) {
    for (double& v : x) v = std::max(v, 0.0);
    return x;
}

Image pool(const Image& x, std::size_t ch, std::size_t d) {
    const std::size_t h = d / 2;
    Image y(ch * h * h);
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t q = 0; q < h; ++q) {
                const auto at = [&](std::size_t dr, std::size_t dq) { return x[(c * d + 2 * r + dr) * d + 2 * q + dq]; };
                y[(c * h + r) * h + q] = std::max({at(0, 0), at(0, 1), at(1, 0), at(1, 1)});
            }
        }
    }
    return y;
}

Image upsample(const Image& x, std::size_t ci, std::size_t d, const Tensor<double>& w, const Tensor<double>& b) {
    const std::size_t co = w.shape[1], D = 2 * d;
    Image y(co * D * D);
    for (std::size_t o = 0; o < co; ++o) {
        for (std::size_t r = 0; r < D; ++r) {
            for (std::size_t c = 0; c < D; ++c) {
                double acc = b.data[o];
                for (std::size_t i = 0; i < ci; ++i) {
                    acc += x[(i * d + r / 2) * d + c / 2] * w.data[((i * co + o) * 2 + r % 2) * 2 + c % 2];
                }
                y[(o * D + r) * D + c] = acc;
            }
        }
    }
    return y;
}

UNetConfig tiny(std::size_t d, std::size_t levels, std::size_t width, double dropout = 0.0) {
    UNetConfig c;
    c.image_size = d;
    c.levels = levels;
    c.base_width = width;
    c.dropout_rate = dropout;
    return c;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("gradient check: convolution") {
    for (std::size_t k : {1u, 3u, 5u}) {
        const Head head({3, 2, 5, 5}, 7);
        auto err = gradient_error({random_tensor({2, 2, 5, 5}, 1), random_tensor({3, 2, k, k}, 2), random_tensor({3}, 3)},
                                  [&](Graph<double>& g, const std::vector<NodeId>& in) {
                                      return masked_mse(g, conv2d(g, in[0], in[1], in[2]), head.target, head.mask);
                                  });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradient check: transposed convolution") {
    const Head head({2, 2, 6, 8}, 11);
    const auto err = gradient_error({random_tensor({3, 2, 3, 4}, 4), random_tensor({3, 2, 2, 2}, 5), random_tensor({2}, 6)},
                                    [&](Graph<double>& g, const std::vector<NodeId>& in) {
                                        return masked_mse(g, transposed_conv2d(g, in[0], in[1], in[2]), head.target,
                                                          head.mask);
                                    });
    CHECK(err < 1e-4);
}

TEST_CASE("gradient check: max pooling, relu, concat") {
    const Head pool_head({2, 3, 2, 3}, 12);
    CHECK(gradient_error({random_tensor({2, 3, 4, 6}, 8)}, [&](Graph<double>& g, const std::vector<NodeId>& in) {
              return masked_mse(g, maxpool2d(g, in[0]), pool_head.target, pool_head.mask);
          }) < 1e-4);

    const Head relu_head({2, 2, 4, 4}, 13);
    CHECK(gradient_error({random_tensor({2, 2, 4, 4}, 9)}, [&](Graph<double>& g, const std::vector<NodeId>& in) {
              return masked_mse(g, relu(g, in[0]), relu_head.target, relu_head.mask);
          }) < 1e-4);

    const Head cat_head({5, 2, 3, 3}, 14);
    CHECK(gradient_error({random_tensor({2, 2, 3, 3}, 10), random_tensor({3, 2, 3, 3}, 11)},
                         [&](Graph<double>& g, const std::vector<NodeId>& in) {
                             return masked_mse(g, concat(g, in[0], in[1]), cat_head.target, cat_head.mask);
                         }) < 1e-4);
}

TEST_CASE("gradient check: dropout with a fixed mask") {
    const Head head({2, 1, 6, 6}, 15);
    CHECK(gradient_error({random_tensor({2, 1, 6, 6}, 16)}, [&](Graph<double>& g, const std::vector<NodeId>& in) {
              std::mt19937_64 rng(99);
              return masked_mse(g, dropout(g, in[0], 0.3, Mode::Train, &rng), head.target, head.mask);
          }) < 1e-4);
}

TEST_CASE("gradient check: masked MSE") {
    const Head head({1, 3, 4, 4}, 17);
    CHECK(gradient_error({random_tensor({1, 3, 4, 4}, 18)}, [&](Graph<double>& g, const std::vector<NodeId>& in) {
              return masked_mse(g, in[0], head.target, head.mask);
          }) < 1e-4);
}

TEST_CASE("gradient check: full tiny U-Net") {
    for (double rate : {0.0, 0.2}) {
        const auto cfg = tiny(8, 2, 2, rate);
        auto w = init_weights<double>(cfg, 3);
        for (auto& p : w.params) {
            if (!p.decay) p.value = random_tensor(p.value.shape, p.value.size(), -0.1, 0.1);
        }
        const auto input = random_tensor({4, 2, 8, 8}, 20);
        const Head head({1, 2, 8, 8}, 21);
        Graph<double> g;
        std::mt19937_64 rng(5);
        const NodeId y = unet_graph(g, w, cfg, g.constant(input), Mode::Train, &rng);
        g.backward(masked_mse(g, y, head.target, head.mask));
        double diff = 0.0, scale = 0.0;
        for (const auto& [node, slot] : g.parameter_nodes()) {
            auto& value = w.params[slot].value;
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double keep = value.data[i];
                auto loss_at = [&](double v) {
                    value.data[i] = v;
                    Graph<double> h;
                    std::mt19937_64 r(5);
                    const NodeId out = unet_graph(h, w, cfg, h.constant(input), Mode::Train, &r);
                    return h.value(masked_mse(h, out, head.target, head.mask)).data[0];
                };
                const double numeric = (loss_at(keep + 1e-6) - loss_at(keep - 1e-6)) / 2e-6;
                value.data[i] = keep;
                diff = std::max(diff, std::abs(numeric - g.grad(node).data[i]));
                scale = std::max(scale, std::abs(numeric));
            }
        }
        REQUIRE(scale > 0.0);
        CHECK(diff / scale < 1e-4);
    }
}

TEST_CASE("layer examples") {
    Graph<double> g;
    const NodeId c = g.constant(Tensor<double>({1, 1, 4, 4}, 2.5));
    const auto pooled = g.value(maxpool2d(g, c));
    CHECK(pooled.shape == Shape{1, 1, 2, 2});
    for (double v : pooled.data) CHECK(v == 2.5);

    Tensor<double> ramp({1, 1, 2, 2}, std::vector<double>{1, 4, 3, 2});
    CHECK(g.value(maxpool2d(g, g.constant(ramp))).data[0] == 4.0);
    CHECK(g.value(relu(g, g.constant(Tensor<double>({1, 1, 1, 2}, std::vector<double>{-1, 3})))).data ==
          std::vector<double>{0, 3});

    Tensor<double> eye({1, 1, 3, 3});
    eye.data[4] = 1.0;
    const auto x = random_tensor({1, 2, 4, 4}, 30);
    const auto y = g.value(conv2d(g, g.constant(x), g.constant(eye), g.constant(Tensor<double>({1}))));
    CHECK(y == x);

    std::mt19937_64 rng(1);
    const NodeId xd = g.constant(x);
    CHECK(dropout(g, xd, 0.5, Mode::Eval, &rng).index == xd.index);
    CHECK_THROWS_AS(dropout(g, xd, 0.5, Mode::Train, nullptr), ArgumentError);
    const auto dropped = g.value(dropout(g, xd, 0.5, Mode::Train, &rng));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK((dropped.data[i] == 0.0 || dropped.data[i] == 2.0 * x.data[i]));
}

TEST_CASE("masked MSE examples") {
    Graph<double> g;
    const Tensor<double> target({1, 1, 1, 4}, std::vector<double>{1, 2, 3, 4});
    const Tensor<double> mask({1, 1, 1, 4}, std::vector<double>{1, 0, 1, 0});
    const NodeId p = g.constant(Tensor<double>({1, 1, 1, 4}, std::vector<double>{2, 100, 1, -7}));
    CHECK(g.value(masked_mse(g, p, target, mask)).data[0] == 2.5);
    const Tensor<double> none({1, 1, 1, 4});
    CHECK_THROWS_AS(masked_mse(g, p, target, none), ArgumentError);
    CHECK_THROWS_AS(masked_mse(g, p, Tensor<double>({1, 1, 1, 3}), none), DimensionError);
}

TEST_CASE("U-Net shape contract and zero weights") {
    const auto cfg = tiny(16, 2, 4);
    const auto zero = zero_weights<double>(cfg);
    const auto out = unet_forward(zero, cfg, random_tensor({4, 3, 16, 16}, 1));
    CHECK(out.shape == Shape{1, 3, 16, 16});
    for (double v : out.data) CHECK(v == 0.0);
    CHECK_THROWS_AS(unet_forward(zero, cfg, random_tensor({3, 1, 16, 16}, 1)), DimensionError);
    CHECK_THROWS_AS(unet_forward(zero, cfg, random_tensor({4, 1, 8, 8}, 1)), DimensionError);
    CHECK_THROWS_AS(unet_forward(zero, tiny(16, 1, 4), random_tensor({4, 1, 16, 16}, 1)), FingerprintError);
    CHECK_THROWS_AS(tiny(12, 3, 4).validate(), ConfigError);
}

TEST_CASE("U-Net initialisation") {
    const auto cfg = tiny(16, 2, 16);
    const auto a = init_weights<float>(cfg, 100);
    const auto b = init_weights<float>(cfg, 100);
    const auto c = init_weights<float>(cfg, 101);
    CHECK(a.params.size() == b.params.size());
    bool same = true, differs = false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        same = same && a.params[i].value == b.params[i].value;
        differs = differs || !(a.params[i].value == c.params[i].value);
        const auto& p = a.params[i];
        if (!p.decay) {
            for (float v : p.value.data) CHECK(v == 0.0f);
            continue;
        }
        const double fan_in = static_cast<double>(p.value.size() / (p.name.find(".up.") != std::string::npos
                                                                         ? p.value.shape[1]
                                                                         : p.value.shape[0]));
        const double limit = std::sqrt(6.0 / fan_in);
        for (float v : p.value.data) CHECK(std::abs(v) <= limit);
    }
    CHECK(same);
    CHECK(differs);
}

TEST_CASE("U-Net eval mode is deterministic; train mode draws dropout") {
    const auto cfg = tiny(16, 2, 4, 0.5);
    const auto w = init_weights<double>(cfg, 9);
    const auto x = random_tensor({4, 2, 16, 16}, 2);
    CHECK(unet_forward(w, cfg, x) == unet_forward(w, cfg, x));
    std::mt19937_64 r1(1), r2(2);
    CHECK_FALSE(unet_forward(w, cfg, x, Mode::Train, &r1) == unet_forward(w, cfg, x, Mode::Train, &r2));
}

TEST_CASE("U-Net matches a direct single-sample composition") {
    const auto cfg = tiny(8, 1, 3);
    auto w = init_weights<double>(cfg, 4);
    for (auto& p : w.params) {
        if (!p.decay) p.value = random_tensor(p.value.shape, 40 + p.value.size(), -0.2, 0.2);
    }
    const auto input = random_tensor({4, 1, 8, 8}, 5);
    const auto& P = w.params;
    // enc0.conv1, enc0.conv2, mid.conv1, mid.conv2, dec0.up, dec0.conv1, dec0.conv2, head
    Image x(input.data.begin(), input.data.end());
    Image e = relu_img(conv_same(relu_img(conv_same(x, 4, 8, P[0].value, P[1].value)), 3, 8, P[2].value, P[3].value));
    Image m = pool(e, 3, 8);
    m = relu_img(conv_same(relu_img(conv_same(m, 3, 4, P[4].value, P[5].value)), 6, 4, P[6].value, P[7].value));
    Image up = relu_img(upsample(m, 6, 4, P[8].value, P[9].value));
    Image cat = e;
    cat.insert(cat.end(), up.begin(), up.end());
    Image d = relu_img(conv_same(relu_img(conv_same(cat, 6, 8, P[10].value, P[11].value)), 3, 8, P[12].value, P[13].value));
    const Image want = conv_same(d, 3, 8, P[14].value, P[15].value);

    CHECK(P.size() == 16);
    CHECK(P[8].name == "dec0.up.w");
    const auto got = unet_forward(w, cfg, input);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got.data[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("precision conversion keeps values") {
    const auto cfg = tiny(16, 2, 4);
    const auto wf = init_weights<float>(cfg, 1);
    const auto wd = convert<double>(wf);
    CHECK(wd.fingerprint == wf.fingerprint);
    for (std::size_t i = 0; i < wf.params.size(); ++i) {
        for (std::size_t j = 0; j < wf.params[i].value.size(); ++j) {
            CHECK(wd.params[i].value.data[j] == static_cast<double>(wf.params[i].value.data[j]));
        }
    }
}

}  // TEST_SUITE
