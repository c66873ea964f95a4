// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/autodiff.hpp"

#include "cagesplat/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cagesplat::ad {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<MatF>;
using CMapF = Eigen::Map<const MatF>;

void ensure_grad(Tensor &t) {
    if (t.grad.size() != t.values.size()) t.grad.assign(t.values.size(), 0.0f);
}

int rows_of(const Tensor &t) { return t.shape.size() == 1 ? 1 : t.shape[0]; }
int cols_of(const Tensor &t) { return t.shape.size() == 1 ? t.shape[0] : static_cast<int>(t.size() / std::max(1, t.shape[0])); }

void require_matrix(const Tensor &t, const char *op) {
    if (t.shape.empty() || t.shape.size() > 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape));
}

float leaky(float x, float slope) { return x > 0.0f ? x : slope * x; }

} // namespace

std::size_t shape_size(const Shape &s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

std::string shape_string(const Shape &s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, bool grad_enabled) : shape(std::move(s)), values(shape_size(shape), 0.0f), requires_grad(grad_enabled) {
    if (requires_grad) grad.assign(values.size(), 0.0f);
}

Tensor::Tensor(Shape s, std::vector<float> v, bool grad_enabled)
    : shape(std::move(s)), values(std::move(v)), requires_grad(grad_enabled) {
    if (values.size() != shape_size(shape))
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
    if (requires_grad) grad.assign(values.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (requires_grad) grad.assign(values.size(), 0.0f);
}

bool Tensor::finite() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

TensorPtr make_tensor(Shape s, std::vector<float> v, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(s), std::move(v), requires_grad);
}

TensorPtr zeros(Shape s, bool requires_grad) { return std::make_shared<Tensor>(std::move(s), requires_grad); }

Adjacency Adjacency::from_lists(const std::vector<std::vector<std::uint32_t>> &lists, bool self_loops) {
    Adjacency adj;
    adj.offsets.reserve(lists.size() + 1);
    adj.offsets.push_back(0);
    for (std::size_t i = 0; i < lists.size(); ++i) {
        std::vector<int> row;
        for (auto j : lists[i])
            if (j != i) row.push_back(static_cast<int>(j));
        if (self_loops) row.push_back(static_cast<int>(i));
        std::sort(row.begin(), row.end());
        adj.indices.insert(adj.indices.end(), row.begin(), row.end());
        adj.offsets.push_back(static_cast<int>(adj.indices.size()));
    }
    return adj;
}

TensorPtr Tape::result(Shape s, std::initializer_list<const TensorPtr *> inputs) {
    bool grad = false;
    for (auto *in : inputs) grad = grad || (*in)->requires_grad;
    return std::make_shared<Tensor>(std::move(s), grad);
}

TensorPtr Tape::matmul(const TensorPtr &a, const TensorPtr &b) {
    require_matrix(*a, "matmul");
    require_matrix(*b, "matmul");
    const int n = rows_of(*a), k = cols_of(*a), m = cols_of(*b);
    if (rows_of(*b) != k) throw ShapeError("matmul: " + shape_string(a->shape) + " x " + shape_string(b->shape));
    auto out = result({n, m}, {&a, &b});
    MapF(out->values.data(), n, m).noalias() = CMapF(a->values.data(), n, k) * CMapF(b->values.data(), k, m);
    if (out->requires_grad) {
        ops_.emplace_back([a, b, out, n, k, m] {
            const CMapF g(out->grad.data(), n, m);
            if (a->requires_grad) {
                ensure_grad(*a);
                MapF(a->grad.data(), n, k).noalias() += g * CMapF(b->values.data(), k, m).transpose();
            }
            if (b->requires_grad) {
                ensure_grad(*b);
                MapF(b->grad.data(), k, m).noalias() += CMapF(a->values.data(), n, k).transpose() * g;
            }
        });
    }
    return out;
}

TensorPtr Tape::add(const TensorPtr &a, const TensorPtr &b) {
    if (a->shape != b->shape) throw ShapeError("add: " + shape_string(a->shape) + " vs " + shape_string(b->shape));
    auto out = result(a->shape, {&a, &b});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (out->requires_grad) {
        ops_.emplace_back([a, b, out] {
            for (const TensorPtr *t : {&a, &b}) {
                if (!(*t)->requires_grad) continue;
                ensure_grad(**t);
                for (std::size_t i = 0; i < out->size(); ++i) (*t)->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr Tape::sub(const TensorPtr &a, const TensorPtr &b) {
    if (a->shape != b->shape) throw ShapeError("sub: " + shape_string(a->shape) + " vs " + shape_string(b->shape));
    auto out = result(a->shape, {&a, &b});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] - b->values[i];
    if (out->requires_grad) {
        ops_.emplace_back([a, b, out] {
            if (a->requires_grad) {
                ensure_grad(*a);
                for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                ensure_grad(*b);
                for (std::size_t i = 0; i < out->size(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr Tape::add_row(const TensorPtr &a, const TensorPtr &row) {
    require_matrix(*a, "add_row");
    const int n = rows_of(*a), m = cols_of(*a);
    if (static_cast<int>(row->size()) != m)
        throw ShapeError("add_row: row " + shape_string(row->shape) + " does not match " + shape_string(a->shape));
    auto out = result(a->shape, {&a, &row});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out->values[i * m + j] = a->values[i * m + j] + row->values[j];
    if (out->requires_grad) {
        ops_.emplace_back([a, row, out, n, m] {
            if (a->requires_grad) {
                ensure_grad(*a);
                for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (row->requires_grad) {
                ensure_grad(*row);
                for (int j = 0; j < m; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) s += out->grad[i * m + j];
                    row->grad[j] += static_cast<float>(s);
                }
            }
        });
    }
    return out;
}

TensorPtr Tape::scale(const TensorPtr &a, float s) {
    auto out = result(a->shape, {&a});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = s * a->values[i];
    if (out->requires_grad) {
        ops_.emplace_back([a, out, s] {
            ensure_grad(*a);
            for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += s * out->grad[i];
        });
    }
    return out;
}

TensorPtr Tape::elu(const TensorPtr &a) {
    auto out = result(a->shape, {&a});
    for (std::size_t i = 0; i < out->size(); ++i) {
        const float x = a->values[i];
        out->values[i] = x > 0.0f ? x : std::expm1(x);
    }
    if (out->requires_grad) {
        ops_.emplace_back([a, out] {
            ensure_grad(*a);
            for (std::size_t i = 0; i < out->size(); ++i) {
                const float x = a->values[i];
                a->grad[i] += out->grad[i] * (x > 0.0f ? 1.0f : out->values[i] + 1.0f);
            }
        });
    }
    return out;
}

TensorPtr Tape::conv2d(const TensorPtr &x, const TensorPtr &w, const TensorPtr &b, int stride, int pad) {
    if (x->shape.size() != 3 || w->shape.size() != 4 || b->size() != static_cast<std::size_t>(w->dim(0)) ||
        w->dim(1) != x->dim(0))
        throw ShapeError("conv2d: input " + shape_string(x->shape) + ", weight " + shape_string(w->shape) + ", bias " +
                         shape_string(b->shape));
    if (stride < 1 || pad < 0) throw InvalidArgument("conv2d: stride >= 1 and pad >= 0 required");
    const int C = x->dim(0), H = x->dim(1), W = x->dim(2);
    const int O = w->dim(0), KH = w->dim(2), KW = w->dim(3);
    const int HO = (H + 2 * pad - KH) / stride + 1, WO = (W + 2 * pad - KW) / stride + 1;
    if (HO < 1 || WO < 1) throw ShapeError("conv2d: kernel larger than the padded input");

    auto out = result({O, HO, WO}, {&x, &w, &b});
    auto xi = [=](int c, int r, int q) { return (c * H + r) * W + q; };
    auto wi = [=](int o, int c, int r, int q) { return ((o * C + c) * KH + r) * KW + q; };
    for (int o = 0; o < O; ++o)
        for (int r = 0; r < HO; ++r)
            for (int q = 0; q < WO; ++q) {
                double s = b->values[o];
                for (int c = 0; c < C; ++c)
                    for (int kr = 0; kr < KH; ++kr) {
                        const int ir = r * stride - pad + kr;
                        if (ir < 0 || ir >= H) continue;
                        for (int kq = 0; kq < KW; ++kq) {
                            const int iq = q * stride - pad + kq;
                            if (iq < 0 || iq >= W) continue;
                            s += static_cast<double>(w->values[wi(o, c, kr, kq)]) * x->values[xi(c, ir, iq)];
                        }
                    }
                out->values[(o * HO + r) * WO + q] = static_cast<float>(s);
            }

    if (out->requires_grad) {
        ops_.emplace_back([=] {
            if (x->requires_grad) ensure_grad(*x);
            if (w->requires_grad) ensure_grad(*w);
            if (b->requires_grad) ensure_grad(*b);
            std::vector<double> gx(x->requires_grad ? x->size() : 0, 0.0);
            std::vector<double> gw(w->requires_grad ? w->size() : 0, 0.0);
            for (int o = 0; o < O; ++o) {
                double gb = 0.0;
                for (int r = 0; r < HO; ++r)
                    for (int q = 0; q < WO; ++q) {
                        const double g = out->grad[(o * HO + r) * WO + q];
                        gb += g;
                        for (int c = 0; c < C; ++c)
                            for (int kr = 0; kr < KH; ++kr) {
                                const int ir = r * stride - pad + kr;
                                if (ir < 0 || ir >= H) continue;
                                for (int kq = 0; kq < KW; ++kq) {
                                    const int iq = q * stride - pad + kq;
                                    if (iq < 0 || iq >= W) continue;
                                    if (!gw.empty()) gw[wi(o, c, kr, kq)] += g * x->values[xi(c, ir, iq)];
                                    if (!gx.empty()) gx[xi(c, ir, iq)] += g * w->values[wi(o, c, kr, kq)];
                                }
                            }
                    }
                if (b->requires_grad) b->grad[o] += static_cast<float>(gb);
            }
            for (std::size_t i = 0; i < gx.size(); ++i) x->grad[i] += static_cast<float>(gx[i]);
            for (std::size_t i = 0; i < gw.size(); ++i) w->grad[i] += static_cast<float>(gw[i]);
        });
    }
    return out;
}

TensorPtr Tape::reshape(const TensorPtr &a, Shape s) {
    if (shape_size(s) != a->size())
        throw ShapeError("reshape: " + shape_string(a->shape) + " to " + shape_string(s));
    auto out = result(std::move(s), {&a});
    out->values = a->values;
    if (out->requires_grad) {
        ops_.emplace_back([a, out] {
            ensure_grad(*a);
            for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr Tape::concat_cols(const std::vector<TensorPtr> &parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int n = rows_of(*parts[0]);
    int m = 0;
    bool grad = false;
    for (const auto &p : parts) {
        require_matrix(*p, "concat_cols");
        if (rows_of(*p) != n) throw ShapeError("concat_cols: row counts differ");
        m += cols_of(*p);
        grad = grad || p->requires_grad;
    }
    auto out = std::make_shared<Tensor>(Shape{n, m}, grad);
    int off = 0;
    for (const auto &p : parts) {
        const int pm = cols_of(*p);
        for (int i = 0; i < n; ++i)
            std::copy_n(p->values.begin() + static_cast<std::ptrdiff_t>(i) * pm, pm,
                        out->values.begin() + static_cast<std::ptrdiff_t>(i) * m + off);
        off += pm;
    }
    if (grad) {
        ops_.emplace_back([parts, out, n, m] {
            int off = 0;
            for (const auto &p : parts) {
                const int pm = cols_of(*p);
                if (p->requires_grad) {
                    ensure_grad(*p);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < pm; ++j) p->grad[i * pm + j] += out->grad[i * m + off + j];
                }
                off += pm;
            }
        });
    }
    return out;
}

std::vector<float> attention_coefficients(const Tensor &z, const Tensor &a_src, const Tensor &a_dst,
                                          const Adjacency &adj, int heads, int head, float negative_slope) {
    const int n = rows_of(z), hd = cols_of(z), d = hd / heads;
    std::vector<double> src(n), dst(n);
    for (int i = 0; i < n; ++i) {
        double s = 0.0, t = 0.0;
        for (int c = 0; c < d; ++c) {
            const double v = z.values[static_cast<std::size_t>(i) * hd + head * d + c];
            s += v * a_src.values[head * d + c];
            t += v * a_dst.values[head * d + c];
        }
        src[i] = s;
        dst[i] = t;
    }
    std::vector<float> alpha(adj.indices.size());
    for (int i = 0; i < n; ++i) {
        const int b = adj.offsets[i], e = adj.offsets[i + 1];
        if (b == e) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (int p = b; p < e; ++p) mx = std::max(mx, static_cast<double>(leaky(static_cast<float>(dst[i] + src[adj.indices[p]]), negative_slope)));
        double sum = 0.0;
        std::vector<double> ex(static_cast<std::size_t>(e - b));
        for (int p = b; p < e; ++p) {
            ex[p - b] = std::exp(leaky(static_cast<float>(dst[i] + src[adj.indices[p]]), negative_slope) - mx);
            sum += ex[p - b];
        }
        for (int p = b; p < e; ++p) alpha[p] = static_cast<float>(ex[p - b] / sum);
    }
    return alpha;
}

TensorPtr Tape::graph_attention(const TensorPtr &z, const TensorPtr &a_src, const TensorPtr &a_dst,
                                const Adjacency &adj, int heads, float negative_slope) {
    require_matrix(*z, "graph_attention");
    const int n = rows_of(*z), hd = cols_of(*z);
    if (heads < 1 || hd % heads != 0) throw ShapeError("graph_attention: width not divisible by the head count");
    const int d = hd / heads;
    if (a_src->size() != static_cast<std::size_t>(hd) || a_dst->size() != static_cast<std::size_t>(hd))
        throw ShapeError("graph_attention: attention vectors must hold heads * d values");
    if (adj.node_count() != n) throw ShapeError("graph_attention: adjacency does not match the node count");

    std::vector<std::vector<float>> alpha(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) alpha[h] = attention_coefficients(*z, *a_src, *a_dst, adj, heads, h, negative_slope);

    auto out = result({n, hd}, {&z, &a_src, &a_dst});
    for (int i = 0; i < n; ++i)
        for (int h = 0; h < heads; ++h) {
            float *o = out->values.data() + static_cast<std::size_t>(i) * hd + h * d;
            for (int p = adj.offsets[i]; p < adj.offsets[i + 1]; ++p) {
                const float a = alpha[h][p];
                const float *zj = z->values.data() + static_cast<std::size_t>(adj.indices[p]) * hd + h * d;
                for (int c = 0; c < d; ++c) o[c] += a * zj[c];
            }
        }

    if (out->requires_grad) {
        ops_.emplace_back([=, alpha = std::move(alpha)] {
            std::vector<double> gz(static_cast<std::size_t>(n) * hd, 0.0);
            std::vector<double> gsrc(hd, 0.0), gdst(hd, 0.0);
            std::vector<double> dsrc(n), ddst(n);
            for (int h = 0; h < heads; ++h) {
                std::fill(dsrc.begin(), dsrc.end(), 0.0);
                std::fill(ddst.begin(), ddst.end(), 0.0);
                for (int i = 0; i < n; ++i) {
                    const int b = adj.offsets[i], e = adj.offsets[i + 1];
                    const float *g = out->grad.data() + static_cast<std::size_t>(i) * hd + h * d;
                    // d(out_i)/d(alpha_ij) = z_j, plus the direct path into z_j.
                    std::vector<double> dalpha(static_cast<std::size_t>(e - b));
                    double weighted = 0.0;
                    for (int p = b; p < e; ++p) {
                        const int j = adj.indices[p];
                        const float *zj = z->values.data() + static_cast<std::size_t>(j) * hd + h * d;
                        double s = 0.0;
                        for (int c = 0; c < d; ++c) {
                            s += static_cast<double>(g[c]) * zj[c];
                            gz[static_cast<std::size_t>(j) * hd + h * d + c] += static_cast<double>(alpha[h][p]) * g[c];
                        }
                        dalpha[p - b] = s;
                        weighted += alpha[h][p] * s;
                    }
                    // Softmax and LeakyReLU adjoints.
                    double sdst = 0.0, tsrc = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double zi = z->values[static_cast<std::size_t>(i) * hd + h * d + c];
                        sdst += zi * a_dst->values[h * d + c];
                    }
                    for (int p = b; p < e; ++p) {
                        const int j = adj.indices[p];
                        tsrc = 0.0;
                        for (int c = 0; c < d; ++c)
                            tsrc += static_cast<double>(z->values[static_cast<std::size_t>(j) * hd + h * d + c]) *
                                    a_src->values[h * d + c];
                        const double de = alpha[h][p] * (dalpha[p - b] - weighted);
                        const double pre = sdst + tsrc;
                        const double dpre = de * (pre > 0.0 ? 1.0 : negative_slope);
                        ddst[i] += dpre;
                        dsrc[j] += dpre;
                    }
                }
                for (int i = 0; i < n; ++i)
                    for (int c = 0; c < d; ++c) {
                        const std::size_t zi = static_cast<std::size_t>(i) * hd + h * d + c;
                        gsrc[h * d + c] += dsrc[i] * z->values[zi];
                        gdst[h * d + c] += ddst[i] * z->values[zi];
                        gz[zi] += dsrc[i] * a_src->values[h * d + c] + ddst[i] * a_dst->values[h * d + c];
                    }
            }
            if (z->requires_grad) {
                ensure_grad(*z);
                for (std::size_t i = 0; i < gz.size(); ++i) z->grad[i] += static_cast<float>(gz[i]);
            }
            if (a_src->requires_grad) {
                ensure_grad(*a_src);
                for (int i = 0; i < hd; ++i) a_src->grad[i] += static_cast<float>(gsrc[i]);
            }
            if (a_dst->requires_grad) {
                ensure_grad(*a_dst);
                for (int i = 0; i < hd; ++i) a_dst->grad[i] += static_cast<float>(gdst[i]);
            }
        });
    }
    return out;
}

TensorPtr Tape::head_mean(const TensorPtr &a, int heads) {
    require_matrix(*a, "head_mean");
    const int n = rows_of(*a), hd = cols_of(*a);
    if (heads < 1 || hd % heads != 0) throw ShapeError("head_mean: width not divisible by the head count");
    const int d = hd / heads;
    auto out = result({n, d}, {&a});
    const float inv = 1.0f / static_cast<float>(heads);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) {
            double s = 0.0;
            for (int h = 0; h < heads; ++h) s += a->values[static_cast<std::size_t>(i) * hd + h * d + c];
            out->values[static_cast<std::size_t>(i) * d + c] = static_cast<float>(s / heads);
        }
    if (out->requires_grad) {
        ops_.emplace_back([a, out, n, hd, d, heads, inv] {
            ensure_grad(*a);
            for (int i = 0; i < n; ++i)
                for (int h = 0; h < heads; ++h)
                    for (int c = 0; c < d; ++c)
                        a->grad[static_cast<std::size_t>(i) * hd + h * d + c] +=
                            inv * out->grad[static_cast<std::size_t>(i) * d + c];
        });
    }
    return out;
}

TensorPtr Tape::neighbor_mean(const TensorPtr &a, const Adjacency &adj) {
    require_matrix(*a, "neighbor_mean");
    const int n = rows_of(*a), m = cols_of(*a);
    if (adj.node_count() != n) throw ShapeError("neighbor_mean: adjacency does not match the node count");
    auto out = result({n, m}, {&a});
    for (int i = 0; i < n; ++i) {
        const int deg = adj.degree(i);
        if (deg == 0) continue;
        for (int c = 0; c < m; ++c) {
            double s = 0.0;
            for (int p = adj.offsets[i]; p < adj.offsets[i + 1]; ++p)
                s += a->values[static_cast<std::size_t>(adj.indices[p]) * m + c];
            out->values[static_cast<std::size_t>(i) * m + c] = static_cast<float>(s / deg);
        }
    }
    if (out->requires_grad) {
        ops_.emplace_back([a, out, adj, n, m] {
            ensure_grad(*a);
            for (int i = 0; i < n; ++i) {
                const int deg = adj.degree(i);
                if (deg == 0) continue;
                const float inv = 1.0f / static_cast<float>(deg);
                for (int p = adj.offsets[i]; p < adj.offsets[i + 1]; ++p)
                    for (int c = 0; c < m; ++c)
                        a->grad[static_cast<std::size_t>(adj.indices[p]) * m + c] +=
                            inv * out->grad[static_cast<std::size_t>(i) * m + c];
            }
        });
    }
    return out;
}

TensorPtr Tape::mse(const TensorPtr &a, const TensorPtr &b) {
    if (a->shape != b->shape) throw ShapeError("mse: " + shape_string(a->shape) + " vs " + shape_string(b->shape));
    const int n = std::max(1, rows_of(*a));
    auto out = result({1}, {&a, &b});
    double s = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) {
        const double diff = static_cast<double>(a->values[i]) - b->values[i];
        s += diff * diff;
    }
    out->values[0] = static_cast<float>(s / n);
    if (out->requires_grad) {
        ops_.emplace_back([a, b, out, n] {
            const double g = 2.0 * out->grad[0] / n;
            if (a->requires_grad) ensure_grad(*a);
            if (b->requires_grad) ensure_grad(*b);
            for (std::size_t i = 0; i < a->size(); ++i) {
                const double v = g * (static_cast<double>(a->values[i]) - b->values[i]);
                if (a->requires_grad) a->grad[i] += static_cast<float>(v);
                if (b->requires_grad) b->grad[i] -= static_cast<float>(v);
            }
        });
    }
    return out;
}

void Tape::backward(const TensorPtr &scalar) {
    if (scalar->size() != 1) throw ShapeError("backward: expected a scalar, got " + shape_string(scalar->shape));
    if (!scalar->requires_grad) return;
    ensure_grad(*scalar);
    scalar->grad[0] = 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

Adam::Adam(std::vector<TensorPtr> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto &p : params_) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto &p : params_) p->zero_grad();
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor &p = *params_[k];
        if (p.grad.size() != p.size()) continue;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = p.grad[i];
            m_[k][i] = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * g;
            v_[k][i] = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * g * g;
            const double step = lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + opts_.eps);
            p.values[i] = static_cast<float>(p.values[i] - step);
        }
    }
}

} // namespace cagesplat::ad
