#ifndef STAINKIT_NEURAL_NETWORK_HPP
#define STAINKIT_NEURAL_NETWORK_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "../error.hpp"
#include "../rng.hpp"
#include "tensor.hpp"

namespace stainkit::nn {

enum class LayerKind { StridedConv, NnUpsampleConv, BatchNorm, LeakyRelu, Tanh };

constexpr std::string_view to_string(LayerKind k) {
    switch (k) {
    case LayerKind::StridedConv: return "strided_conv";
    case LayerKind::NnUpsampleConv: return "nn_upsample_conv";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Tanh: return "tanh";
    }
    return "unknown";
}

inline LayerKind layer_kind_from_string(std::string_view s) {
    for (auto k : {LayerKind::StridedConv, LayerKind::NnUpsampleConv, LayerKind::BatchNorm, LayerKind::LeakyRelu,
                   LayerKind::Tanh}) {
        if (to_string(k) == s) return k;
    }
    throw Error(ErrorKind::InvalidConfig, "unknown layer kind '" + std::string(s) + "'");
}

/// One layer. Convolutions are 3x3 with zero padding 1. An upsampling
/// layer doubles the resolution (nearest neighbour), concatenates the
/// activation numbered `skip` (0 is the network input, k the output of
/// layer k-1) along channels, then convolves with stride 1.
struct LayerSpec {
    LayerKind kind = LayerKind::LeakyRelu;
    int filters = 0;
    int stride = 1;
    int skip = -1;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ActShape {
    std::size_t h, w, c;
    friend bool operator==(const ActShape&, const ActShape&) = default;
};

struct NetworkSpec {
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    std::size_t input_channels = 3;
    std::vector<LayerSpec> layers;
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
    double leaky_slope = 0.2;

    /// Encoder of stride-2 convs, mirrored decoder of upsample convs with
    /// each stage concatenating the encoder activation of matching size
    /// (the last one concatenates the input), tanh output.
    static NetworkSpec unet(std::size_t h, std::size_t w, const std::vector<int>& down, const std::vector<int>& up,
                            bool batch_norm = true) {
        if (down.empty() || down.size() != up.size()) {
            throw Error(ErrorKind::InvalidConfig, "encoder and decoder depths must match");
        }
        NetworkSpec s;
        s.input_height = h;
        s.input_width = w;
        std::vector<int> skips{0};
        for (int f : down) {
            s.layers.push_back({LayerKind::StridedConv, f, 2, -1});
            if (batch_norm) s.layers.push_back({LayerKind::BatchNorm});
            s.layers.push_back({LayerKind::LeakyRelu});
            skips.push_back(static_cast<int>(s.layers.size()));
        }
        const std::size_t depth = down.size();
        for (std::size_t j = 0; j < depth; ++j) {
            s.layers.push_back({LayerKind::NnUpsampleConv, up[j], 1, skips[depth - 1 - j]});
            if (j + 1 < depth) {
                if (batch_norm) s.layers.push_back({LayerKind::BatchNorm});
                s.layers.push_back({LayerKind::LeakyRelu});
            }
        }
        s.layers.push_back({LayerKind::Tanh});
        return s;
    }

    static NetworkSpec toy() { return unet(32, 32, {16, 32, 64}, {32, 16, 3}); }

    /// Activation shapes for an h x w input; index 0 is the input.
    [[nodiscard]] std::vector<ActShape> shapes(std::size_t h, std::size_t w) const {
        std::vector<ActShape> act{{h, w, input_channels}};
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            ActShape cur = act.back();
            switch (L.kind) {
            case LayerKind::StridedConv:
                if (L.filters <= 0 || (L.stride != 1 && L.stride != 2)) {
                    throw Error(ErrorKind::InvalidConfig, "conv needs filters > 0 and stride 1 or 2");
                }
                if (cur.h % L.stride != 0 || cur.w % L.stride != 0) {
                    throw Error(ErrorKind::ShapeMismatch, "spatial size not divisible by conv stride at layer " +
                                                              std::to_string(l));
                }
                cur = {cur.h / L.stride, cur.w / L.stride, static_cast<std::size_t>(L.filters)};
                break;
            case LayerKind::NnUpsampleConv:
                if (L.filters <= 0) {
                    throw Error(ErrorKind::InvalidConfig, "upsample conv needs filters > 0");
                }
                if (L.skip >= 0) {
                    if (static_cast<std::size_t>(L.skip) >= act.size()) {
                        throw Error(ErrorKind::InvalidConfig, "skip refers to a later activation");
                    }
                    const ActShape& s = act[L.skip];
                    if (s.h != 2 * cur.h || s.w != 2 * cur.w) {
                        throw Error(ErrorKind::ShapeMismatch, "skip source does not match upsampled size at layer " +
                                                                  std::to_string(l));
                    }
                }
                cur = {2 * cur.h, 2 * cur.w, static_cast<std::size_t>(L.filters)};
                break;
            default:
                break;
            }
            act.push_back(cur);
        }
        return act;
    }

    void validate() const {
        if (input_height == 0 || input_width == 0 || input_channels == 0) {
            throw Error(ErrorKind::InvalidConfig, "network input must be non-empty");
        }
        if (layers.empty() || layers.back().kind != LayerKind::Tanh) {
            throw Error(ErrorKind::InvalidConfig, "final activation must be tanh");
        }
        if (!(bn_momentum >= 0.0 && bn_momentum < 1.0) || !(bn_eps > 0.0) || !(leaky_slope >= 0.0)) {
            throw Error(ErrorKind::InvalidConfig, "invalid batch-norm or activation constants");
        }
        const auto act = shapes(input_height, input_width);
        if (act.back().c != input_channels || act.back().h != input_height || act.back().w != input_width) {
            throw Error(ErrorKind::InvalidConfig, "network output must match input shape");
        }
    }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

template <typename T>
struct Param {
    std::string name;
    std::vector<T> value;
    std::vector<T> grad;
};

enum class Mode { Train, Eval };

template <typename T>
class Network {
public:
    using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapMat = Eigen::Map<RowMat>;
    using CMapMat = Eigen::Map<const RowMat>;
    using Shape = typename Tensor<T>::Shape;

    /// Per-call activations and caches; independent workspaces make
    /// concurrent eval-mode inference safe.
    struct Workspace {
        struct Cache {
            std::vector<T> col;  // im2col of the conv input
            Tensor<T> cat;       // upsampled + concatenated conv input
            std::vector<T> xhat;
            std::vector<T> inv_std;
            std::vector<double> batch_mean;
            std::vector<double> batch_var;
        };
        std::vector<Tensor<T>> acts;
        std::vector<Cache> caches;
        Mode mode = Mode::Eval;
    };

    Network() = default;

    /// Fan-in scaled uniform weights (He bound for the leaky slope), zero
    /// biases, unit BN scale.
    Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        spec_.validate();
        build();
        Stream rng(seed, {0x4e4e});
        for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
            const auto& L = spec_.layers[l];
            if (L.kind == LayerKind::StridedConv || L.kind == LayerKind::NnUpsampleConv) {
                auto& wgt = params_[index_[l].param].value;
                const double fan_in = static_cast<double>(wgt.size()) / L.filters;
                const double a = spec_.leaky_slope;
                const double bound = std::sqrt(6.0 / ((1.0 + a * a) * fan_in));
                for (T& v : wgt) {
                    v = static_cast<T>(rng.uniform(-bound, bound));
                }
            }
        }
    }

    [[nodiscard]] const NetworkSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] std::vector<Param<T>>& params() noexcept { return params_; }
    [[nodiscard]] const std::vector<Param<T>>& params() const noexcept { return params_; }
    /// BN running mean/variance, two entries per BN layer.
    [[nodiscard]] std::vector<Param<T>>& buffers() noexcept { return buffers_; }
    [[nodiscard]] const std::vector<Param<T>>& buffers() const noexcept { return buffers_; }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    [[nodiscard]] bool trained() const noexcept { return trained_; }
    void set_trained(bool t) noexcept { trained_ = t; }

    /// Overrides the BN running-average momentum (0 copies batch statistics).
    void set_bn_momentum(double m) { spec_.bn_momentum = m; }

    /// Caching forward pass; train mode also updates BN running statistics.
    const Tensor<T>& forward(const Tensor<T>& x, Mode mode) {
        cache_ = false;
        run(x, mode, ws_);
        if (mode == Mode::Train) {
            const double mom = spec_.bn_momentum;
            for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
                if (spec_.layers[l].kind != LayerKind::BatchNorm) continue;
                auto& rmean = buffers_[index_[l].buffer].value;
                auto& rvar = buffers_[index_[l].buffer + 1].value;
                const auto& c = ws_.caches[l];
                for (std::size_t ch = 0; ch < rmean.size(); ++ch) {
                    rmean[ch] = static_cast<T>(mom * static_cast<double>(rmean[ch]) + (1.0 - mom) * c.batch_mean[ch]);
                    rvar[ch] = static_cast<T>(mom * static_cast<double>(rvar[ch]) + (1.0 - mom) * c.batch_var[ch]);
                }
            }
        }
        cache_ = true;
        return ws_.acts.back();
    }

    /// Eval-mode pass that touches no shared state.
    [[nodiscard]] Tensor<T> infer(const Tensor<T>& x) const {
        Workspace ws;
        run(x, Mode::Eval, ws);
        return std::move(ws.acts.back());
    }

    /// Fills parameter gradients for dL/d(output) = dout, plus the L2 term
    /// 2*l2*w on every parameter, and returns dL/d(input).
    Tensor<T> backward(const Tensor<T>& dout, double l2 = 0.0) {
        if (!cache_) {
            throw Error(ErrorKind::StaleCache, "backward without a preceding forward");
        }
        auto& acts = ws_.acts;
        require_shape(dout, acts.back().shape(), "backward");
        for (auto& p : params_) {
            std::fill(p.grad.begin(), p.grad.end(), T(0));
        }
        const std::size_t L = spec_.layers.size();
        std::vector<std::vector<T>> g(L + 1);
        for (std::size_t i = 0; i <= L; ++i) {
            g[i].assign(acts[i].size(), T(0));
        }
        std::copy(dout.data().begin(), dout.data().end(), g[L].begin());
        for (std::size_t l = L; l-- > 0;) {
            const auto& spec = spec_.layers[l];
            auto& cache = ws_.caches[l];
            const Tensor<T>& in = acts[l];
            const Tensor<T>& out = acts[l + 1];
            std::vector<T>& dy = g[l + 1];
            std::vector<T>& dx = g[l];
            switch (spec.kind) {
            case LayerKind::StridedConv:
                conv_backward(in.shape(), spec.stride, index_[l].param, cache, out.shape(), dy, dx.data());
                break;
            case LayerKind::NnUpsampleConv: {
                std::vector<T> dcat(cache.cat.size(), T(0));
                conv_backward(cache.cat.shape(), 1, index_[l].param, cache, out.shape(), dy, dcat.data());
                upsample_concat_backward(in.shape(), spec.skip >= 0 ? acts[spec.skip].c() : 0, dcat, dx.data(),
                                         spec.skip >= 0 ? g[spec.skip].data() : nullptr);
                break;
            }
            case LayerKind::BatchNorm:
                bn_backward(in, index_[l].param, cache, dy, dx.data());
                break;
            case LayerKind::LeakyRelu: {
                const T a = static_cast<T>(spec_.leaky_slope);
                auto x = in.data();
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    dx[i] += x[i] > T(0) ? dy[i] : a * dy[i];
                }
                break;
            }
            case LayerKind::Tanh: {
                auto y = out.data();
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    dx[i] += dy[i] * (T(1) - y[i] * y[i]);
                }
                break;
            }
            }
        }
        if (l2 != 0.0) {
            const T k = static_cast<T>(2.0 * l2);
            for (auto& p : params_) {
                for (std::size_t i = 0; i < p.value.size(); ++i) {
                    p.grad[i] += k * p.value[i];
                }
            }
        }
        cache_ = false;
        Tensor<T> dinput(acts[0].shape());
        std::copy(g[0].begin(), g[0].end(), dinput.data().begin());
        return dinput;
    }

    /// Activation i of the last caching forward (0 is the input).
    [[nodiscard]] const Tensor<T>& activation(std::size_t i) const { return ws_.acts.at(i); }

    template <typename U>
    [[nodiscard]] Network<U> cast() const {
        Network<U> out;
        out.spec_ = spec_;
        out.build();
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::transform(params_[i].value.begin(), params_[i].value.end(), out.params_[i].value.begin(),
                           [](T v) { return static_cast<U>(v); });
        }
        for (std::size_t i = 0; i < buffers_.size(); ++i) {
            std::transform(buffers_[i].value.begin(), buffers_[i].value.end(), out.buffers_[i].value.begin(),
                           [](T v) { return static_cast<U>(v); });
        }
        out.trained_ = trained_;
        return out;
    }

    /// Parameters and BN statistics, without caches.
    struct Snapshot {
        std::vector<std::vector<T>> params;
        std::vector<std::vector<T>> buffers;
    };

    [[nodiscard]] Snapshot snapshot() const {
        Snapshot s;
        for (const auto& p : params_) s.params.push_back(p.value);
        for (const auto& b : buffers_) s.buffers.push_back(b.value);
        return s;
    }

    void restore(const Snapshot& s) {
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = s.params[i];
        for (std::size_t i = 0; i < buffers_.size(); ++i) buffers_[i].value = s.buffers[i];
        cache_ = false;
    }

private:
    template <typename>
    friend class Network;

    struct Index {
        std::size_t param = 0;   // weight or gamma; bias or beta follows
        std::size_t buffer = 0;  // BN running mean; variance follows
    };

    void build() {
        params_.clear();
        buffers_.clear();
        index_.assign(spec_.layers.size(), {});
        const auto act = spec_.shapes(spec_.input_height, spec_.input_width);
        for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
            const auto& L = spec_.layers[l];
            const std::string tag = std::to_string(l) + "." + std::string(to_string(L.kind));
            std::size_t cin = act[l].c;
            switch (L.kind) {
            case LayerKind::NnUpsampleConv:
                cin += L.skip >= 0 ? act[L.skip].c : 0;
                [[fallthrough]];
            case LayerKind::StridedConv: {
                index_[l].param = params_.size();
                const std::size_t f = static_cast<std::size_t>(L.filters);
                params_.push_back({tag + ".weight", std::vector<T>(9 * cin * f, T(0)), std::vector<T>(9 * cin * f, T(0))});
                params_.push_back({tag + ".bias", std::vector<T>(f, T(0)), std::vector<T>(f, T(0))});
                break;
            }
            case LayerKind::BatchNorm:
                index_[l].param = params_.size();
                index_[l].buffer = buffers_.size();
                params_.push_back({tag + ".gamma", std::vector<T>(cin, T(1)), std::vector<T>(cin, T(0))});
                params_.push_back({tag + ".beta", std::vector<T>(cin, T(0)), std::vector<T>(cin, T(0))});
                buffers_.push_back({tag + ".running_mean", std::vector<T>(cin, T(0)), {}});
                buffers_.push_back({tag + ".running_var", std::vector<T>(cin, T(1)), {}});
                break;
            default:
                break;
            }
        }
    }

    void run(const Tensor<T>& x, Mode mode, Workspace& ws) const {
        if (spec_.layers.empty() || index_.size() != spec_.layers.size()) {
            throw Error(ErrorKind::UntrainedNetwork, "network has no weights");
        }
        if (x.c() != spec_.input_channels) {
            throw Error(ErrorKind::ShapeMismatch, "input channel count does not match network");
        }
        if (x.n() == 0) {
            throw Error(ErrorKind::ShapeMismatch, "empty batch");
        }
        (void)spec_.shapes(x.h(), x.w());
        ws.mode = mode;
        ws.acts.resize(spec_.layers.size() + 1);
        ws.caches.resize(spec_.layers.size());
        ws.acts[0] = x;
        for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
            const auto& L = spec_.layers[l];
            auto& cache = ws.caches[l];
            const Tensor<T>& in = ws.acts[l];
            Tensor<T> out;
            switch (L.kind) {
            case LayerKind::StridedConv:
                out = conv_forward(in, L.stride, index_[l].param, cache);
                break;
            case LayerKind::NnUpsampleConv:
                cache.cat = upsample_concat(in, L.skip >= 0 ? &ws.acts[L.skip] : nullptr);
                out = conv_forward(cache.cat, 1, index_[l].param, cache);
                break;
            case LayerKind::BatchNorm:
                out = bn_forward(in, index_[l], cache, mode);
                break;
            case LayerKind::LeakyRelu: {
                out = in;
                const T a = static_cast<T>(spec_.leaky_slope);
                for (T& v : out.data()) {
                    v = v > T(0) ? v : a * v;
                }
                break;
            }
            case LayerKind::Tanh:
                out = in;
                for (T& v : out.data()) {
                    v = std::tanh(v);
                }
                break;
            }
            ws.acts[l + 1] = std::move(out);
        }
        if (!ws.acts.back().all_finite()) {
            throw Error(ErrorKind::NonFiniteLoss, "non-finite network output");
        }
    }

    Tensor<T> conv_forward(const Tensor<T>& in, int stride, std::size_t pi, typename Workspace::Cache& cache) const {
        const std::size_t n = in.n(), h = in.h(), w = in.w(), c = in.c();
        const std::size_t s = static_cast<std::size_t>(stride);
        const std::size_t ho = h / s, wo = w / s;
        const std::size_t k = 9 * c;
        const auto& wgt = params_[pi].value;
        const auto& bias = params_[pi + 1].value;
        const std::size_t f = bias.size();
        if (wgt.size() != k * f) {
            throw Error(ErrorKind::ShapeMismatch, "conv input channels do not match weights");
        }
        const std::size_t rows = n * ho * wo;
        auto& col = cache.col;
        col.assign(rows * k, T(0));
        const T* src = in.ptr();
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    T* row = col.data() + ((b * ho + oy) * wo + ox) * k;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - 1;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - 1;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            const T* px = src + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * c;
                            std::copy(px, px + c, row + (ky * 3 + kx) * c);
                        }
                    }
                }
            }
        }
        Tensor<T> out({n, ho, wo, f});
        CMapMat X(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
        CMapMat W(wgt.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
        MapMat Y(out.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(f));
        Y.noalias() = X * W;
        Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), static_cast<Eigen::Index>(f));
        return out;
    }

    void conv_backward(const Shape& in_shape, int stride, std::size_t pi, const typename Workspace::Cache& cache,
                       const Shape& out_shape, const std::vector<T>& dy, T* dx) {
        const std::size_t n = in_shape[0], h = in_shape[1], w = in_shape[2], c = in_shape[3];
        const std::size_t s = static_cast<std::size_t>(stride);
        const std::size_t ho = out_shape[1], wo = out_shape[2], f = out_shape[3];
        const std::size_t k = 9 * c;
        const std::size_t rows = n * ho * wo;
        auto& wgt = params_[pi];
        auto& bias = params_[pi + 1];
        CMapMat X(cache.col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
        CMapMat dY(dy.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(f));
        MapMat dW(wgt.grad.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
        dW.noalias() += X.transpose() * dY;
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bias.grad.data(), static_cast<Eigen::Index>(f));
        db.noalias() += dY.colwise().sum();
        CMapMat W(wgt.value.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
        RowMat dcol = dY * W.transpose();
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const T* row = dcol.data() + ((b * ho + oy) * wo + ox) * k;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - 1;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - 1;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            T* px = dx + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * c;
                            const T* g = row + (ky * 3 + kx) * c;
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                px[ch] += g[ch];
                            }
                        }
                    }
                }
            }
        }
    }

    static Tensor<T> upsample_concat(const Tensor<T>& in, const Tensor<T>* skip) {
        const std::size_t n = in.n(), h = in.h(), w = in.w(), cu = in.c();
        const std::size_t cs = skip ? skip->c() : 0;
        Tensor<T> out({n, 2 * h, 2 * w, cu + cs});
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t y = 0; y < 2 * h; ++y) {
                for (std::size_t x = 0; x < 2 * w; ++x) {
                    T* dst = &out.at(b, y, x, 0);
                    const T* up = &in.at(b, y / 2, x / 2, 0);
                    std::copy(up, up + cu, dst);
                    if (skip) {
                        const T* sk = &skip->at(b, y, x, 0);
                        std::copy(sk, sk + cs, dst + cu);
                    }
                }
            }
        }
        return out;
    }

    static void upsample_concat_backward(const Shape& in_shape, std::size_t cs, const std::vector<T>& dcat, T* dx,
                                         T* dskip) {
        const std::size_t n = in_shape[0], h = in_shape[1], w = in_shape[2], cu = in_shape[3];
        const std::size_t ct = cu + cs;
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t y = 0; y < 2 * h; ++y) {
                for (std::size_t x = 0; x < 2 * w; ++x) {
                    const T* g = dcat.data() + ((b * 2 * h + y) * 2 * w + x) * ct;
                    T* d = dx + ((b * h + y / 2) * w + x / 2) * cu;
                    for (std::size_t ch = 0; ch < cu; ++ch) {
                        d[ch] += g[ch];
                    }
                    if (dskip) {
                        T* ds = dskip + ((b * 2 * h + y) * 2 * w + x) * cs;
                        for (std::size_t ch = 0; ch < cs; ++ch) {
                            ds[ch] += g[cu + ch];
                        }
                    }
                }
            }
        }
    }

    Tensor<T> bn_forward(const Tensor<T>& in, const Index& idx, typename Workspace::Cache& cache, Mode mode) const {
        const std::size_t c = in.c();
        const std::size_t m = in.size() / c;
        const auto& gamma = params_[idx.param].value;
        const auto& beta = params_[idx.param + 1].value;
        const auto& rmean = buffers_[idx.buffer].value;
        const auto& rvar = buffers_[idx.buffer + 1].value;
        auto& mean = cache.batch_mean;
        auto& var = cache.batch_var;
        mean.assign(c, 0.0);
        var.assign(c, 0.0);
        auto x = in.data();
        if (mode == Mode::Train) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += static_cast<double>(x[i * c + ch]);
            for (auto& v : mean) v /= static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double d = static_cast<double>(x[i * c + ch]) - mean[ch];
                    var[ch] += d * d;
                }
            for (auto& v : var) v /= static_cast<double>(m);
        } else {
            for (std::size_t ch = 0; ch < c; ++ch) {
                mean[ch] = static_cast<double>(rmean[ch]);
                var[ch] = static_cast<double>(rvar[ch]);
            }
        }
        cache.inv_std.resize(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            cache.inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + spec_.bn_eps));
        }
        cache.xhat.resize(in.size());
        Tensor<T> out(in.shape());
        auto y = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T xh = static_cast<T>(static_cast<double>(x[i * c + ch]) - mean[ch]) * cache.inv_std[ch];
                cache.xhat[i * c + ch] = xh;
                y[i * c + ch] = gamma[ch] * xh + beta[ch];
            }
        }
        return out;
    }

    void bn_backward(const Tensor<T>& in, std::size_t pi, const typename Workspace::Cache& cache,
                     const std::vector<T>& dy, T* dx) {
        const std::size_t c = in.c();
        const std::size_t m = in.size() / c;
        auto& gamma = params_[pi];
        auto& beta = params_[pi + 1];
        std::vector<double> sum_dy(c, 0.0);
        std::vector<double> sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                sum_dy[ch] += static_cast<double>(dy[i * c + ch]);
                sum_dy_xhat[ch] += static_cast<double>(dy[i * c + ch]) * static_cast<double>(cache.xhat[i * c + ch]);
            }
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            gamma.grad[ch] += static_cast<T>(sum_dy_xhat[ch]);
            beta.grad[ch] += static_cast<T>(sum_dy[ch]);
        }
        if (ws_.mode == Mode::Eval) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t ch = 0; ch < c; ++ch)
                    dx[i * c + ch] += dy[i * c + ch] * gamma.value[ch] * cache.inv_std[ch];
            return;
        }
        const double md = static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double k = static_cast<double>(gamma.value[ch]) * static_cast<double>(cache.inv_std[ch]) / md;
                const double v = md * static_cast<double>(dy[i * c + ch]) - sum_dy[ch] -
                                 static_cast<double>(cache.xhat[i * c + ch]) * sum_dy_xhat[ch];
                dx[i * c + ch] += static_cast<T>(k * v);
            }
        }
    }

    NetworkSpec spec_;
    std::vector<Param<T>> params_;
    std::vector<Param<T>> buffers_;
    std::vector<Index> index_;
    Workspace ws_;
    bool cache_ = false;
    bool trained_ = false;
};

} // namespace stainkit::nn

#endif
