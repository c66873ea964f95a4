// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

// A deliberately small reverse-mode autodiff: just the ops the deformer
// needs. Values are f32; reductions accumulate in double.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cagesplat::ad {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape &s);
std::string shape_string(const Shape &s);

struct Tensor {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;  // empty unless requires_grad
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, bool grad_enabled = false);
    Tensor(Shape s, std::vector<float> v, bool grad_enabled = false);

    std::size_t size() const { return values.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    void zero_grad();
    bool finite() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Shape s, std::vector<float> v, bool requires_grad = false);
TensorPtr zeros(Shape s, bool requires_grad = false);

/// Compressed neighbor lists. `self_loops` decides whether node i appears in
/// its own list (attention uses them, the GraphConv mean does not).
struct Adjacency {
    std::vector<int> offsets;  // size n + 1
    std::vector<int> indices;

    int node_count() const { return static_cast<int>(offsets.size()) - 1; }
    int degree(int i) const { return offsets[i + 1] - offsets[i]; }

    static Adjacency from_lists(const std::vector<std::vector<std::uint32_t>> &lists, bool self_loops);
};

/// Records forward ops and replays their adjoints in reverse.
class Tape {
public:
    /// [n, k] x [k, m] -> [n, m]
    TensorPtr matmul(const TensorPtr &a, const TensorPtr &b);
    /// Elementwise sum of equal shapes.
    TensorPtr add(const TensorPtr &a, const TensorPtr &b);
    /// [n, m] + [m] (or [1, m]) broadcast over rows.
    TensorPtr add_row(const TensorPtr &a, const TensorPtr &row);
    TensorPtr scale(const TensorPtr &a, float s);
    TensorPtr elu(const TensorPtr &a);
    /// Single-sample convolution: x [C, H, W], w [O, C, kh, kw], b [O].
    TensorPtr conv2d(const TensorPtr &x, const TensorPtr &w, const TensorPtr &b, int stride, int pad);
    /// Same values, new shape (copying).
    TensorPtr reshape(const TensorPtr &a, Shape s);
    TensorPtr flatten(const TensorPtr &a) { return reshape(a, {1, static_cast<int>(a->size())}); }
    /// Column concatenation of row vectors / matrices with equal row counts.
    TensorPtr concat_cols(const std::vector<TensorPtr> &parts);
    /// Multi-head attention aggregation. z is [n, heads * d] (already
    /// projected); a_src and a_dst are [heads, d]. Output heads are
    /// concatenated: [n, heads * d].
    TensorPtr graph_attention(const TensorPtr &z, const TensorPtr &a_src, const TensorPtr &a_dst,
                              const Adjacency &adj, int heads, float negative_slope = 0.2f);
    /// [n, heads * d] -> [n, d] by averaging heads.
    TensorPtr head_mean(const TensorPtr &a, int heads);
    /// Mean of neighbor rows; isolated nodes get zeros.
    TensorPtr neighbor_mean(const TensorPtr &a, const Adjacency &adj);
    /// mean over rows of the squared row difference, i.e. (1/n) sum_i |a_i - b_i|^2.
    /// Either side may be a constant.
    TensorPtr mse(const TensorPtr &a, const TensorPtr &b);
    /// Pointwise: out = a - b.
    TensorPtr sub(const TensorPtr &a, const TensorPtr &b);

    /// Seeds d(out)/d(out) = 1 on a scalar and runs all adjoints. Gradients
    /// accumulate into every tensor with requires_grad.
    void backward(const TensorPtr &scalar);
    void clear() { ops_.clear(); }
    std::size_t op_count() const { return ops_.size(); }

private:
    TensorPtr result(Shape s, std::initializer_list<const TensorPtr *> inputs);
    std::vector<std::function<void()>> ops_;
};

/// Attention coefficients of one head, laid out like adj.indices. Exposed
/// for tests; graph_attention computes the same values internally.
std::vector<float> attention_coefficients(const Tensor &z, const Tensor &a_src, const Tensor &a_dst,
                                          const Adjacency &adj, int heads, int head, float negative_slope = 0.2f);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(std::vector<TensorPtr> params, AdamOptions opts = {});
    void step(double lr);
    void zero_grad();
    std::int64_t steps() const { return t_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamOptions opts_;
    std::int64_t t_ = 0;
};

} // namespace cagesplat::ad
