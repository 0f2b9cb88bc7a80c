#include "twuq/nn/graph.hpp"

#include "twuq/nn/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace twuq::nn {

template <class T>
NodeId Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

template <class T>
NodeId Graph<T>::parameter(const Tensor<T>& value, std::size_t slot) {
    Node n;
    n.borrowed = &value;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    const NodeId id{nodes_.size() - 1};
    params_.emplace_back(id, slot);
    return id;
}

template <class T>
NodeId Graph<T>::push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

template <class T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
    const Node& n = nodes_.at(id.index);
    return n.borrowed ? *n.borrowed : *n.owned;
}

template <class T>
Tensor<T>& Graph<T>::grad(NodeId id) {
    Node& n = nodes_.at(id.index);
    if (!n.grad) n.grad.emplace(value(id).shape);
    return *n.grad;
}

template <class T>
void Graph<T>::backward(NodeId loss) {
    if (value(loss).size() != 1) throw DimensionError("backward() needs a scalar loss");
    grad(loss).data[0] = T(1);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && n.grad) n.backward(*this, NodeId{i});
    }
}

namespace {

template <class T>
void add_into(Tensor<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst.data[i] += src[i];
}

}  // namespace

template <class T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId w, NodeId b) {
    const auto& xv = g.value(x);
    const auto& wv = g.value(w);
    const auto& bv = g.value(b);
    const Dims4 d = dims4(xv);
    if (wv.rank() != 4 || wv.shape[1] != d.c || wv.shape[2] != wv.shape[3] || wv.shape[2] % 2 == 0) {
        throw DimensionError("conv2d: kernel " + shape_str(wv.shape) + " incompatible with input " +
                             shape_str(xv.shape));
    }
    if (bv.size() != wv.shape[0]) throw DimensionError("conv2d: bias size mismatch");
    const kernels::ConvShape s{d.c, wv.shape[0], d.n, d.h, d.w, wv.shape[2]};
    Tensor<T> y({s.out_ch, d.n, d.h, d.w});
    std::vector<T> col(s.patch() * s.cols());
    kernels::conv2d_forward<T>(s, xv.data, wv.data, bv.data, y.data, col);
    const bool rg = g.requires_grad(x) || g.requires_grad(w) || g.requires_grad(b);
    return g.push(std::move(y), rg, [s, x, w, b, col = std::move(col)](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self).data;
        std::vector<T> dx;
        std::vector<T> scratch;
        if (g.requires_grad(x)) {
            dx.resize(s.in_ch * s.cols());
            scratch.resize(s.patch() * s.cols());
        }
        kernels::conv2d_backward<T>(s, col, g.value(w).data, dy, dx, g.grad(w).data, g.grad(b).data, scratch);
        if (!dx.empty()) add_into(g.grad(x), dx);
    });
}

template <class T>
NodeId transposed_conv2d(Graph<T>& g, NodeId x, NodeId w, NodeId b) {
    const auto& xv = g.value(x);
    const auto& wv = g.value(w);
    const auto& bv = g.value(b);
    const Dims4 d = dims4(xv);
    if (wv.rank() != 4 || wv.shape[0] != d.c || wv.shape[2] != 2 || wv.shape[3] != 2) {
        throw DimensionError("transposed_conv2d: kernel " + shape_str(wv.shape) + " incompatible with input " +
                             shape_str(xv.shape));
    }
    if (bv.size() != wv.shape[1]) throw DimensionError("transposed_conv2d: bias size mismatch");
    const kernels::UpShape s{d.c, wv.shape[1], d.n, d.h, d.w};
    Tensor<T> y({s.out_ch, d.n, 2 * d.h, 2 * d.w});
    kernels::upconv2x2_forward<T>(s, xv.data, wv.data, bv.data, y.data);
    const bool rg = g.requires_grad(x) || g.requires_grad(w) || g.requires_grad(b);
    return g.push(std::move(y), rg, [s, x, w, b](Graph<T>& g, NodeId self) {
        std::vector<T> dx(g.value(x).size());
        kernels::upconv2x2_backward<T>(s, g.value(x).data, g.value(w).data, g.grad(self).data, dx, g.grad(w).data,
                                       g.grad(b).data);
        if (g.requires_grad(x)) add_into(g.grad(x), dx);
    });
}

template <class T>
NodeId maxpool2d(Graph<T>& g, NodeId x) {
    const auto& xv = g.value(x);
    const Dims4 d = dims4(xv);
    if (d.h % 2 || d.w % 2) throw DimensionError("maxpool2d needs even spatial size, got " + shape_str(xv.shape));
    const std::size_t oh = d.h / 2, ow = d.w / 2;
    Tensor<T> y({d.c, d.n, oh, ow});
    std::vector<std::uint32_t> argmax(y.size());
    const auto planes = static_cast<std::ptrdiff_t>(d.c * d.n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
        const std::size_t base = static_cast<std::size_t>(pl) * d.plane();
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = base + 2 * i * d.w + 2 * j;
                for (std::size_t t = 1; t < 4; ++t) {
                    const std::size_t idx = base + (2 * i + t / 2) * d.w + 2 * j + t % 2;
                    if (xv.data[idx] > xv.data[best]) best = idx;
                }
                const std::size_t o = static_cast<std::size_t>(pl) * oh * ow + i * ow + j;
                y.data[o] = xv.data[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return g.push(std::move(y), g.requires_grad(x), [x, argmax = std::move(argmax)](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self).data;
        auto& dx = g.grad(x).data;
        for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
    });
}

template <class T>
NodeId relu(Graph<T>& g, NodeId x) {
    Tensor<T> y = g.value(x);
#pragma omp simd
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = y.data[i] > T(0) ? y.data[i] : T(0);
    return g.push(std::move(y), g.requires_grad(x), [x](Graph<T>& g, NodeId self) {
        const auto& out = g.value(self).data;
        const auto& dy = g.grad(self).data;
        auto& dx = g.grad(x).data;
        for (std::size_t i = 0; i < dy.size(); ++i) {
            if (out[i] > T(0)) dx[i] += dy[i];
        }
    });
}

template <class T>
NodeId concat(Graph<T>& g, NodeId a, NodeId b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    const Dims4 da = dims4(av), db = dims4(bv);
    if (da.n != db.n || da.h != db.h || da.w != db.w) {
        throw DimensionError("concat: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    }
    Tensor<T> y({da.c + db.c, da.n, da.h, da.w});
    std::copy(av.data.begin(), av.data.end(), y.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(av.size()));
    const std::size_t split = av.size();
    return g.push(std::move(y), g.requires_grad(a) || g.requires_grad(b), [a, b, split](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self).data;
        if (g.requires_grad(a)) {
            auto& da = g.grad(a).data;
            for (std::size_t i = 0; i < split; ++i) da[i] += dy[i];
        }
        if (g.requires_grad(b)) {
            auto& dbv = g.grad(b).data;
            for (std::size_t i = 0; i < dbv.size(); ++i) dbv[i] += dy[split + i];
        }
    });
}

template <class T>
NodeId dropout(Graph<T>& g, NodeId x, double rate, Mode mode, std::mt19937_64* rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
    if (mode == Mode::Eval || rate == 0.0) return x;
    if (!rng) throw ArgumentError("dropout in training mode needs an RNG stream");
    Tensor<T> y = g.value(x);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> scale(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
        scale[i] = u < rate ? T(0) : keep_scale;
        y.data[i] *= scale[i];
    }
    return g.push(std::move(y), g.requires_grad(x), [x, scale = std::move(scale)](Graph<T>& g, NodeId self) {
        const auto& dy = g.grad(self).data;
        auto& dx = g.grad(x).data;
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * scale[i];
    });
}

template <class T>
NodeId masked_mse(Graph<T>& g, NodeId pred, const Tensor<T>& target, const Tensor<T>& mask) {
    const auto& p = g.value(pred);
    if (p.size() != target.size() || p.size() != mask.size()) {
        throw DimensionError("masked_mse: prediction " + shape_str(p.shape) + " vs target " +
                             shape_str(target.shape));
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (mask.data[i] == T(0)) continue;
        const double r = static_cast<double>(p.data[i]) - static_cast<double>(target.data[i]);
        sum += r * r;
        ++count;
    }
    if (count == 0) throw ArgumentError("masked_mse: mask selects no entries");
    Tensor<T> loss({1}, static_cast<T>(sum / static_cast<double>(count)));
    const T inv = static_cast<T>(2.0 / static_cast<double>(count));
    return g.push(std::move(loss), g.requires_grad(pred), [pred, &target, &mask, inv](Graph<T>& g, NodeId self) {
        const T seed = g.grad(self).data[0];
        const auto& pv = g.value(pred).data;
        auto& dp = g.grad(pred).data;
        for (std::size_t i = 0; i < dp.size(); ++i) {
            if (mask.data[i] != T(0)) dp[i] += seed * inv * (pv[i] - target.data[i]);
        }
    });
}

#define TWUQ_INSTANTIATE_GRAPH(T)                                                              \
    template class Graph<T>;                                                                   \
    template NodeId conv2d<T>(Graph<T>&, NodeId, NodeId, NodeId);                              \
    template NodeId transposed_conv2d<T>(Graph<T>&, NodeId, NodeId, NodeId);                   \
    template NodeId maxpool2d<T>(Graph<T>&, NodeId);                                           \
    template NodeId relu<T>(Graph<T>&, NodeId);                                                \
    template NodeId concat<T>(Graph<T>&, NodeId, NodeId);                                      \
    template NodeId dropout<T>(Graph<T>&, NodeId, double, Mode, std::mt19937_64*);             \
    template NodeId masked_mse<T>(Graph<T>&, NodeId, const Tensor<T>&, const Tensor<T>&);

TWUQ_INSTANTIATE_GRAPH(float)
TWUQ_INSTANTIATE_GRAPH(double)

}  // namespace twuq::nn
