#ifndef STAINKIT_NEURAL_TRAIN_HPP
#define STAINKIT_NEURAL_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "../augment.hpp"
#include "../error.hpp"
#include "../image.hpp"
#include "../rng.hpp"
#include "adam.hpp"
#include "network.hpp"
#include "tensor.hpp"

namespace stainkit::nn {

inline constexpr std::array<double, 4> kLrLadder{1e-2, 1e-3, 1e-4, 1e-5};

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t max_epochs = 60;
    std::size_t patience = 4;
    double l2 = 1e-6;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    /// false trains on identity pairs (reconstruction only).
    bool augment = true;
    AugmentConfig augmentation = AugmentConfig::defaults(Category::HSVOnlyMax);

    void validate() const {
        if (batch_size == 0 || max_epochs == 0 || patience == 0) {
            throw Error(ErrorKind::InvalidConfig, "batch_size, max_epochs and patience must be positive");
        }
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
            throw Error(ErrorKind::InvalidConfig, "val_fraction must lie in (0, 1)");
        }
        if (!(l2 >= 0.0)) {
            throw Error(ErrorKind::InvalidConfig, "l2 must be non-negative");
        }
        augmentation.validate();
    }
};

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;

    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainResult {
    Network<float> net;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
};

/// Deterministic split: the last ceil(fraction * n) patches validate.
inline std::size_t validation_count(std::size_t n, double fraction) {
    if (n < 2) {
        throw Error(ErrorKind::EmptyDataset, "training needs at least two patches");
    }
    const auto v = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(v, 1, n - 1);
}

/// Validation inputs get augmentation call indices disjoint from training.
inline constexpr std::uint64_t kValidationCallOffset = std::uint64_t{1} << 40;

namespace detail {

inline Patch training_input(const Patch& p, const TrainConfig& cfg, std::uint64_t call_index) {
    return cfg.augment ? apply_profile(p, cfg.augmentation, call_index) : p;
}

inline double evaluate(const Network<float>& net, std::span<const Patch> inputs, std::span<const Patch> targets) {
    double sum = 0.0;
    std::size_t elems = 0;
    constexpr std::size_t chunk = 64;
    for (std::size_t i = 0; i < inputs.size(); i += chunk) {
        const std::size_t n = std::min(chunk, inputs.size() - i);
        const auto x = to_tensor<float>(inputs.subspan(i, n));
        const auto y = to_tensor<float>(targets.subspan(i, n));
        const auto out = net.infer(x);
        sum += mse_loss(out, y) * static_cast<double>(out.size());
        elems += out.size();
    }
    return sum / static_cast<double>(elems);
}

} // namespace detail

/// Adam on mini-batches of (augmented, original) pairs. The learning rate
/// steps down the ladder after `patience` epochs without a new best
/// validation loss and training stops once the last rung plateaus. The
/// returned network carries the weights of the best validation epoch.
inline TrainResult train(Network<float> net, std::span<const Patch> dataset, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    if (dataset.empty()) {
        throw Error(ErrorKind::EmptyDataset, "training dataset is empty");
    }
    for (const auto& p : dataset) {
        if (p.height() != dataset[0].height() || p.width() != dataset[0].width()) {
            throw Error(ErrorKind::ShapeMismatch, "training patches differ in size");
        }
    }
    const std::size_t n_val = validation_count(dataset.size(), cfg.val_fraction);
    const std::size_t n_train = dataset.size() - n_val;
    const auto train_set = dataset.first(n_train);
    const auto val_set = dataset.subspan(n_train);
    std::vector<Patch> val_inputs;
    for (std::size_t i = 0; i < val_set.size(); ++i) {
        val_inputs.push_back(detail::training_input(val_set[i], cfg, kValidationCallOffset + i));
    }

    AdamState<float> opt;
    std::size_t rung = 0;
    opt.lr = kLrLadder[rung];
    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    auto best = net.snapshot();
    std::size_t stale = 0;
    std::vector<std::size_t> order(n_train);
    std::vector<Patch> inputs;
    std::vector<Patch> targets;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Stream shuffle(cfg.seed, {0x7a1, epoch});
        std::shuffle(order.begin(), order.end(), shuffle.engine());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t end = std::min(n_train, start + cfg.batch_size);
            inputs.clear();
            targets.clear();
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                inputs.push_back(detail::training_input(train_set[idx], cfg, epoch * dataset.size() + idx));
                targets.push_back(train_set[idx]);
            }
            const auto x = to_tensor<float>(inputs);
            const auto y = to_tensor<float>(targets);
            const auto& out = net.forward(x, Mode::Train);
            const double loss = mse_loss(out, y);
            if (!std::isfinite(loss)) {
                throw Error(ErrorKind::NonFiniteLoss, "loss became " + std::to_string(loss) + " at epoch " +
                                                          std::to_string(epoch) + " batch " + std::to_string(batches));
            }
            (void)net.backward(mse_grad(out, y), cfg.l2);
            adam_step(opt, net.params());
            loss_sum += loss;
            ++batches;
        }
        EpochLog entry{epoch, opt.lr, loss_sum / static_cast<double>(batches),
                       detail::evaluate(net, val_inputs, val_set)};
        if (!std::isfinite(entry.val_loss)) {
            throw Error(ErrorKind::NonFiniteLoss, "validation loss is not finite at epoch " + std::to_string(epoch));
        }
        result.log.push_back(entry);
        if (on_epoch) {
            on_epoch(entry);
        }
        if (entry.val_loss < result.best_val_loss) {
            result.best_val_loss = entry.val_loss;
            result.best_epoch = epoch;
            best = net.snapshot();
            stale = 0;
        } else if (++stale >= cfg.patience) {
            if (rung + 1 == kLrLadder.size()) {
                break;
            }
            opt.lr = kLrLadder[++rung];
            stale = 0;
        }
    }
    net.restore(best);
    net.set_trained(true);
    result.net = std::move(net);
    return result;
}

/// Spatial sizes the network accepts must be multiples of this.
inline std::size_t spatial_alignment(const NetworkSpec& spec) {
    std::size_t a = 1;
    for (const auto& L : spec.layers) {
        if (L.kind == LayerKind::StridedConv) a *= static_cast<std::size_t>(L.stride);
    }
    return a;
}

namespace detail {

/// Region [y0, y0 + h) x [x0, x0 + w) of p, edge pixels replicated outside.
inline Patch replicate_window(const Patch& p, std::ptrdiff_t y0, std::ptrdiff_t x0, std::size_t h, std::size_t w) {
    Patch out(h, w);
    const auto ph = static_cast<std::ptrdiff_t>(p.height());
    const auto pw = static_cast<std::ptrdiff_t>(p.width());
    for (std::size_t y = 0; y < h; ++y) {
        const auto sy = std::clamp<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(y), 0, ph - 1);
        for (std::size_t x = 0; x < w; ++x) {
            const auto sx = std::clamp<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(x), 0, pw - 1);
            for (std::size_t c = 0; c < 3; ++c) {
                out.at(y, x, c) = p.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
            }
        }
    }
    return out;
}

inline std::size_t round_up(std::size_t v, std::size_t a) { return (v + a - 1) / a * a; }

} // namespace detail

struct BlockOptions {
    std::size_t block = 256;  // interior size of each inference window
    std::size_t halo = 32;    // context added on every side, then cropped
};

/// Maps a patch through the network in eval mode and back to [0, 1].
/// Patches whose sides are multiples of the network alignment and no
/// larger than one window run in a single pass. Anything else is cut into
/// windows with replicated-edge context, each inferred independently.
inline Patch normalize_network(const Network<float>& net, const Patch& p, const BlockOptions& opt = {}) {
    if (!net.trained()) {
        throw Error(ErrorKind::UntrainedNetwork, "network has not been trained or loaded");
    }
    if (p.empty()) {
        throw Error(ErrorKind::ShapeMismatch, "cannot normalize an empty patch");
    }
    const std::size_t a = spatial_alignment(net.spec());
    const std::size_t window = opt.block + 2 * opt.halo;
    if (p.height() % a == 0 && p.width() % a == 0 && p.height() <= window && p.width() <= window) {
        const std::array<Patch, 1> batch{p};
        return to_patch(net.infer(to_tensor<float>(batch)), 0);
    }
    if (opt.block == 0 || opt.block % a != 0 || opt.halo % a != 0) {
        throw Error(ErrorKind::InvalidConfig, "block and halo must be positive multiples of the network alignment");
    }
    Patch out(p.height(), p.width());
    for (std::size_t y0 = 0; y0 < p.height(); y0 += opt.block) {
        for (std::size_t x0 = 0; x0 < p.width(); x0 += opt.block) {
            const std::size_t bh = std::min(opt.block, p.height() - y0);
            const std::size_t bw = std::min(opt.block, p.width() - x0);
            const auto wy = static_cast<std::ptrdiff_t>(y0) - static_cast<std::ptrdiff_t>(opt.halo);
            const auto wx = static_cast<std::ptrdiff_t>(x0) - static_cast<std::ptrdiff_t>(opt.halo);
            const std::array<Patch, 1> batch{detail::replicate_window(
                p, wy, wx, detail::round_up(bh + 2 * opt.halo, a), detail::round_up(bw + 2 * opt.halo, a))};
            const Patch res = to_patch(net.infer(to_tensor<float>(batch)), 0);
            for (std::size_t y = 0; y < bh; ++y) {
                for (std::size_t x = 0; x < bw; ++x) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        out.at(y0 + y, x0 + x, c) = res.at(opt.halo + y, opt.halo + x, c);
                    }
                }
            }
        }
    }
    return out;
}

} // namespace stainkit::nn

#endif
