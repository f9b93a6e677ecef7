#ifndef STAINKIT_NEURAL_ADAM_HPP
#define STAINKIT_NEURAL_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "../error.hpp"
#include "network.hpp"

namespace stainkit::nn {

template <typename T>
struct AdamState {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// Bias-corrected Adam update of every parameter from its stored gradient.
template <typename T>
void adam_step(AdamState<T>& s, std::vector<Param<T>>& params) {
    if (s.m.empty()) {
        for (const auto& p : params) {
            s.m.emplace_back(p.value.size(), T(0));
            s.v.emplace_back(p.value.size(), T(0));
        }
    }
    if (s.m.size() != params.size()) {
        throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match parameters");
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& m = s.m[i];
        auto& v = s.v[i];
        if (m.size() != p.value.size() || p.grad.size() != p.value.size()) {
            throw Error(ErrorKind::ShapeMismatch, "moment shapes do not match parameter " + p.name);
        }
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = static_cast<double>(p.grad[j]);
            const double mj = s.beta1 * static_cast<double>(m[j]) + (1.0 - s.beta1) * g;
            const double vj = s.beta2 * static_cast<double>(v[j]) + (1.0 - s.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = s.lr * (mj / c1) / (std::sqrt(vj / c2) + s.eps);
            p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) - update);
        }
    }
}

} // namespace stainkit::nn

#endif
