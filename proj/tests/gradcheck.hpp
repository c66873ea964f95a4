// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference checks for the autodiff ops, shared by the unit
// tests and the acceptance suite.

#pragma once

#include "cagesplat/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace cagesplat::testing {

struct GradCase {
    std::string op;
    std::vector<ad::TensorPtr> inputs;  // every input is differentiated
    std::function<ad::TensorPtr(ad::Tape &, const std::vector<ad::TensorPtr> &)> build;
};

inline ad::TensorPtr random_tensor(ad::Shape s, std::mt19937_64 &rng, float scale = 1.0f) {
    std::uniform_real_distribution<float> u(-scale, scale);
    std::vector<float> v(ad::shape_size(s));
    for (auto &x : v) x = u(rng);
    return ad::make_tensor(std::move(s), std::move(v), true);
}

/// Norm-wise relative error between the taped gradient of
/// L = mse(op(inputs), target) and its central difference estimate.
inline double gradient_error(GradCase &c, std::mt19937_64 &rng, float step = 5e-3f) {
    ad::TensorPtr target;
    // The taped loss drives the analytic gradient; difference quotients use
    // the same loss summed in double from the op's outputs.
    auto loss_of = [&](bool backward) {
        ad::Tape tape;
        ad::TensorPtr out = c.build(tape, c.inputs);
        ad::TensorPtr flat = tape.reshape(out, {1, static_cast<int>(out->size())});
        if (!target) {
            // Residuals bounded away from zero keep every output's gradient
            // large next to rounding and truncation error.
            std::uniform_real_distribution<float> mag(0.5f, 1.0f);
            std::bernoulli_distribution sign(0.5);
            target = random_tensor(flat->shape, rng);
            for (std::size_t k = 0; k < flat->size(); ++k)
                target->values[k] = flat->values[k] + (sign(rng) ? mag(rng) : -mag(rng));
            target->requires_grad = false;
            target->grad.clear();
        }
        if (backward) tape.backward(tape.mse(flat, target));
        double sum = 0.0;
        for (std::size_t k = 0; k < flat->size(); ++k) {
            const double r = static_cast<double>(flat->values[k]) - target->values[k];
            sum += r * r;
        }
        return sum;  // flat has one row, so this is the tape's mse
    };
    for (auto &t : c.inputs) t->zero_grad();
    loss_of(true);
    std::vector<std::vector<float>> analytic;
    for (auto &t : c.inputs) analytic.push_back(t->grad);

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        auto &t = *c.inputs[i];
        for (std::size_t e = 0; e < t.size(); ++e) {
            const float keep = t.values[e];
            t.values[e] = keep + step;
            const double up = loss_of(false);
            t.values[e] = keep - step;
            const double down = loss_of(false);
            t.values[e] = keep;
            const double numeric = (up - down) / (2.0 * static_cast<double>(step));
            const double a = analytic[i][e];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-6});
}

/// Smallest |LeakyReLU input| over all attention edges and heads. Central
/// differences are only valid when no perturbation crosses the kink at 0.
inline double attention_margin(const ad::Tensor &z, const ad::Tensor &a_src, const ad::Tensor &a_dst,
                               const ad::Adjacency &adj, int heads) {
    const int n = z.dim(0), hd = z.dim(1), d = hd / heads;
    double margin = std::numeric_limits<double>::infinity();
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
            for (int p = adj.offsets[i]; p < adj.offsets[i + 1]; ++p) {
                const int j = adj.indices[p];
                double e = 0.0;
                for (int c = 0; c < d; ++c)
                    e += z.values[i * hd + h * d + c] * a_dst.values[h * d + c] +
                         z.values[j * hd + h * d + c] * a_src.values[h * d + c];
                margin = std::min(margin, std::abs(e));
            }
    return margin;
}

inline ad::Adjacency random_adjacency(int n, std::mt19937_64 &rng, bool self_loops) {
    std::vector<std::vector<std::uint32_t>> lists(static_cast<std::size_t>(n));
    std::bernoulli_distribution edge(0.5);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (edge(rng)) {
                lists[static_cast<std::size_t>(i)].push_back(static_cast<std::uint32_t>(j));
                lists[static_cast<std::size_t>(j)].push_back(static_cast<std::uint32_t>(i));
            }
    for (auto &l : lists) std::sort(l.begin(), l.end());
    return ad::Adjacency::from_lists(lists, self_loops);
}

/// One randomized case for each differentiable op, shapes drawn from rng.
inline std::vector<GradCase> random_grad_cases(std::mt19937_64 &rng) {
    using ad::Tape;
    using ad::TensorPtr;
    using Inputs = std::vector<TensorPtr>;
    std::uniform_int_distribution<int> small(1, 5), node_n(2, 6), heads_n(1, 3), dim_n(1, 4);
    std::vector<GradCase> cases;

    {
        const int n = small(rng), k = small(rng), m = small(rng);
        cases.push_back({"matmul", {random_tensor({n, k}, rng), random_tensor({k, m}, rng)},
                         [](Tape &t, const Inputs &in) { return t.matmul(in[0], in[1]); }});
    }
    {
        const int n = small(rng), m = small(rng);
        cases.push_back({"add", {random_tensor({n, m}, rng), random_tensor({n, m}, rng)},
                         [](Tape &t, const Inputs &in) { return t.add(in[0], in[1]); }});
        cases.push_back({"sub", {random_tensor({n, m}, rng), random_tensor({n, m}, rng)},
                         [](Tape &t, const Inputs &in) { return t.sub(in[0], in[1]); }});
        cases.push_back({"add_row", {random_tensor({n, m}, rng), random_tensor({m}, rng)},
                         [](Tape &t, const Inputs &in) { return t.add_row(in[0], in[1]); }});
        const float s = std::uniform_real_distribution<float>(0.5f, 2.0f)(rng) * (std::bernoulli_distribution(0.5)(rng) ? 1.0f : -1.0f);
        cases.push_back({"scale", {random_tensor({n, m}, rng)},
                         [s](Tape &t, const Inputs &in) { return t.scale(in[0], s); }});
        cases.push_back({"elu", {random_tensor({n, m}, rng, 2.0f)},
                         [](Tape &t, const Inputs &in) { return t.elu(in[0]); }});
        cases.push_back({"reshape", {random_tensor({n, m}, rng)},
                         [n, m](Tape &t, const Inputs &in) { return t.reshape(in[0], {m, n}); }});
        const int m2 = small(rng);
        cases.push_back({"concat_cols", {random_tensor({n, m}, rng), random_tensor({n, m2}, rng)},
                         [](Tape &t, const Inputs &in) { return t.concat_cols({in[0], in[1]}); }});
        cases.push_back({"mse", {random_tensor({n, m}, rng), random_tensor({n, m}, rng)},
                         [](Tape &t, const Inputs &in) { return t.mse(in[0], in[1]); }});
    }
    {
        std::uniform_int_distribution<int> ch(1, 3), hw(3, 7), stride(1, 2), pad(0, 1);
        const int c = ch(rng), o = ch(rng), h = hw(rng), w = hw(rng), st = stride(rng), p = pad(rng);
        cases.push_back({"conv2d",
                         {random_tensor({c, h, w}, rng), random_tensor({o, c, 3, 3}, rng, 0.5f), random_tensor({o}, rng)},
                         [st, p](Tape &t, const Inputs &in) { return t.conv2d(in[0], in[1], in[2], st, p); }});
    }
    {
        const int n = node_n(rng), heads = heads_n(rng), d = dim_n(rng);
        auto adj = std::make_shared<ad::Adjacency>(random_adjacency(n, rng, true));
        // Keep every score 10 steps clear of the LeakyReLU kink.
        TensorPtr z, as, at;
        do {
            z = random_tensor({n, heads * d}, rng);
            as = random_tensor({heads, d}, rng);
            at = random_tensor({heads, d}, rng);
        } while (attention_margin(*z, *as, *at, *adj, heads) < 0.05);
        cases.push_back({"graph_attention", {z, as, at},
                         [adj, heads](Tape &t, const Inputs &in) {
                             return t.graph_attention(in[0], in[1], in[2], *adj, heads);
                         }});
        cases.push_back({"head_mean", {random_tensor({n, heads * d}, rng)},
                         [heads](Tape &t, const Inputs &in) { return t.head_mean(in[0], heads); }});
        auto nb = std::make_shared<ad::Adjacency>(random_adjacency(n, rng, false));
        cases.push_back({"neighbor_mean", {random_tensor({n, d}, rng)},
                         [nb](Tape &t, const Inputs &in) { return t.neighbor_mean(in[0], *nb); }});
    }
    return cases;
}

} // namespace cagesplat::testing
