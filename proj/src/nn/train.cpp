#include "twuq/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace twuq::nn {

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("training.epochs must be non-negative");
    if (batch_size == 0) throw ConfigError("training.batch_size must be positive");
    if (!(initial_lr > 0.0)) throw ConfigError("training.initial_lr must be positive");
    if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) throw ConfigError("training.lr_drop_factor must lie in (0, 1]");
    if (lr_drop_period < 1) throw ConfigError("training.lr_drop_period must be positive");
    if (!(l2_lambda >= 0.0)) throw ConfigError("training.l2_lambda must be non-negative");
}

double TrainConfig::learning_rate(int epoch) const {
    return initial_lr * std::pow(lr_drop_factor, epoch / lr_drop_period);
}

template <class T>
TrainingSet<T> TrainingSet<T>::pack(const dataset::Dataset& ds) {
    if (ds.samples.empty()) throw ArgumentError("cannot train on an empty dataset");
    TrainingSet<T> set;
    set.count = ds.samples.size();
    set.size = ds.size;
    const std::size_t pix = ds.size * ds.size;
    set.inputs.resize(set.count * optics::kChannels * pix);
    set.targets.resize(set.count * pix);
    set.masks.resize(set.count * pix);
    for (std::size_t i = 0; i < set.count; ++i) {
        const auto& s = ds.samples[i];
        for (std::size_t k = 0; k < optics::kChannels * pix; ++k) {
            set.inputs[i * optics::kChannels * pix + k] =
                s.input.valid[k] ? static_cast<T>(s.input.values[k] / kLengthUnit) : T(0);
        }
        for (std::size_t p = 0; p < pix; ++p) {
            set.targets[i * pix + p] = s.target.valid[p] ? static_cast<T>(s.target.height[p] / kLengthUnit) : T(0);
            set.masks[i * pix + p] = s.target.valid[p] ? T(1) : T(0);
        }
    }
    return set;
}

template <class T>
void gather_batch(const TrainingSet<T>& set, std::span<const std::size_t> indices, Tensor<T>& input,
                  Tensor<T>& target, Tensor<T>& mask) {
    const std::size_t n = indices.size();
    const std::size_t pix = set.size * set.size;
    input = Tensor<T>({optics::kChannels, n, set.size, set.size});
    target = Tensor<T>({1, n, set.size, set.size});
    mask = Tensor<T>({1, n, set.size, set.size});
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t i = indices[b];
        for (std::size_t k = 0; k < optics::kChannels; ++k) {
            std::copy_n(set.inputs.begin() + static_cast<std::ptrdiff_t>((i * optics::kChannels + k) * pix), pix,
                        input.data.begin() + static_cast<std::ptrdiff_t>((k * n + b) * pix));
        }
        std::copy_n(set.targets.begin() + static_cast<std::ptrdiff_t>(i * pix), pix,
                    target.data.begin() + static_cast<std::ptrdiff_t>(b * pix));
        std::copy_n(set.masks.begin() + static_cast<std::ptrdiff_t>(i * pix), pix,
                    mask.data.begin() + static_cast<std::ptrdiff_t>(b * pix));
    }
}

namespace {

std::seed_seq keyed(std::initializer_list<std::uint64_t> keys, std::uint32_t tag) {
    std::vector<std::uint32_t> words;
    for (auto k : keys) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    words.push_back(tag);
    return std::seed_seq(words.begin(), words.end());
}

template <class T>
double l2_norm2(const NetworkWeights<T>& w) {
    double s = 0.0;
    for (const auto& p : w.params) {
        if (!p.decay) continue;
        for (T v : p.value.data) s += static_cast<double>(v) * static_cast<double>(v);
    }
    return s;
}

}  // namespace

template <class T>
TrainResult<T> train_network(const TrainingSet<T>& set, const UNetConfig& ucfg, const TrainConfig& tcfg,
                             std::uint64_t member_seed, const std::function<void(const EpochRecord&)>& on_epoch,
                             const AdamConfig& adam) {
    ucfg.validate();
    tcfg.validate();
    if (set.count == 0) throw ArgumentError("cannot train on an empty dataset");
    if (set.size != ucfg.image_size) {
        throw DimensionError("dataset D = " + std::to_string(set.size) + " but network expects " +
                             std::to_string(ucfg.image_size));
    }

    TrainResult<T> result{init_weights<T>(ucfg, member_seed), {}};
    auto& w = result.weights;
    std::vector<std::vector<T>> m1(w.params.size()), m2(w.params.size());
    for (std::size_t i = 0; i < w.params.size(); ++i) {
        m1[i].assign(w.params[i].value.size(), T(0));
        m2[i].assign(w.params[i].value.size(), T(0));
    }
    auto dropout_seq = keyed({member_seed}, 0x44524f50u);
    std::mt19937_64 dropout_rng(dropout_seq);

    std::vector<std::size_t> order(set.count);
    Tensor<T> input, target, mask;
    long step = 0;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_seq = keyed({tcfg.shuffle_seed, static_cast<std::uint64_t>(epoch), member_seed}, 0x53485546u);
        std::mt19937_64 shuffle_rng(shuffle_seq);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        const double lr = tcfg.learning_rate(epoch);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < set.count; start += tcfg.batch_size) {
            const std::size_t n = std::min(tcfg.batch_size, set.count - start);
            gather_batch(set, std::span<const std::size_t>(order).subspan(start, n), input, target, mask);

            Graph<T> g;
            const NodeId x = g.constant(std::move(input));
            const NodeId pred = unet_graph(g, w, ucfg, x, Mode::Train, &dropout_rng);
            const NodeId loss = masked_mse(g, pred, target, mask);
            const double batch_loss = static_cast<double>(g.value(loss).data[0]);
            if (!std::isfinite(batch_loss)) throw TrainingError(epoch, "training loss is not finite");
            loss_sum += batch_loss * static_cast<double>(n);
            g.backward(loss);

            ++step;
            const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(step));
            const T b1 = static_cast<T>(adam.beta1), b2 = static_cast<T>(adam.beta2);
            const T l2 = static_cast<T>(2.0 * tcfg.l2_lambda);
            const T step_size = static_cast<T>(lr / bc1);
            const T inv_bc2 = static_cast<T>(1.0 / bc2);
            const T eps = static_cast<T>(adam.epsilon);
            for (const auto& [node, slot] : g.parameter_nodes()) {
                auto& p = w.params[slot];
                const bool touched = g.has_grad(node);
                const std::vector<T>* grad = touched ? &g.grad(node).data : nullptr;
                auto& mm = m1[slot];
                auto& vv = m2[slot];
                for (std::size_t i = 0; i < p.value.size(); ++i) {
                    T gi = grad ? (*grad)[i] : T(0);
                    if (p.decay) gi += l2 * p.value.data[i];
                    mm[i] = b1 * mm[i] + (T(1) - b1) * gi;
                    vv[i] = b2 * vv[i] + (T(1) - b2) * gi * gi;
                    p.value.data[i] -= step_size * mm[i] / (std::sqrt(vv[i] * inv_bc2) + eps);
                }
            }
        }
        EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(set.count), tcfg.l2_lambda * l2_norm2(w)};
        if (!std::isfinite(rec.data_loss) || !std::isfinite(rec.l2_penalty)) {
            throw TrainingError(epoch, "training loss is not finite");
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

#define TWUQ_INSTANTIATE_TRAIN(T)                                                                        \
    template struct TrainingSet<T>;                                                                      \
    template void gather_batch<T>(const TrainingSet<T>&, std::span<const std::size_t>, Tensor<T>&,       \
                                  Tensor<T>&, Tensor<T>&);                                               \
    template TrainResult<T> train_network<T>(const TrainingSet<T>&, const UNetConfig&, const TrainConfig&, \
                                             std::uint64_t, const std::function<void(const EpochRecord&)>&, \
                                             const AdamConfig&);

TWUQ_INSTANTIATE_TRAIN(float)
TWUQ_INSTANTIATE_TRAIN(double)

}  // namespace twuq::nn
