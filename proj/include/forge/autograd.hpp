#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "forge/tensor.hpp"

namespace forge::grad {

using forge::Tensor;

// Tape-style reverse-mode autodiff. A Graph is built per forward pass; ops
// append nodes, backward() walks the tape in reverse. Nodes reference
// parents by index, so creation order is already a topological order.
class Graph;

struct Var {
    Graph* g = nullptr;
    int id = -1;
    const Tensor& val() const;
};

class Graph {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::function<void(Graph&, int)> back;  // pulls this node's grad into parents
    };

    Var leaf(Tensor v, bool needs_grad = false) {
        nodes_.push_back(Node{std::move(v), {}, needs_grad, false, nullptr});
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Tensor v) { return leaf(std::move(v), false); }

    const Tensor& value(int id) const { return nodes_[id].value; }

    Tensor& grad(int id) {
        Node& n = nodes_[id];
        if (!n.grad_alloc) {
            n.grad = Tensor::zeros(n.value.shape);
            n.grad_alloc = true;
        }
        return n.grad;
    }

    const Tensor& grad(const Var& v) { return grad(v.id); }

    // Generic op constructor used by all the free functions below.
    Var make(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> back) {
        bool ng = false;
        for (int p : parents) ng = ng || nodes_[p].needs_grad;
        Node n;
        n.value = std::move(value);
        n.needs_grad = ng;
        if (ng) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    void backward(const Var& loss) {
        if (loss.g != this) throw ValidationError("backward: var from another graph");
        if (nodes_[loss.id].value.size() != 1) throw ValidationError("backward: loss must be scalar");
        grad(loss.id).data[0] = 1.0;
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.grad_alloc && n.back) n.back(*this, i);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

inline const Tensor& Var::val() const { return g->value(id); }

namespace detail {
inline void check_same_graph(const Var& a, const Var& b) {
    if (a.g != b.g) throw ValidationError("vars belong to different graphs");
}
}  // namespace detail

// ---- elementwise ----

inline Var add(Var a, Var b) {
    detail::check_same_graph(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (!av.same_shape(bv)) throw ValidationError("add: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    int pa = a.id, pb = b.id;
    return a.g->make(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        g.grad(pa) += go;
        g.grad(pb) += go;
    });
}

inline Var sub(Var a, Var b) {
    detail::check_same_graph(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (!av.same_shape(bv)) throw ValidationError("sub: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
    int pa = a.id, pb = b.id;
    return a.g->make(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        g.grad(pa) += go;
        Tensor& gb = g.grad(pb);
        for (std::size_t i = 0; i < go.size(); ++i) gb.data[i] -= go.data[i];
    });
}

inline Var mul(Var a, Var b) {
    detail::check_same_graph(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (!av.same_shape(bv)) throw ValidationError("mul: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
    int pa = a.id, pb = b.id;
    return a.g->make(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& av2 = g.value(pa);
        const Tensor& bv2 = g.value(pb);
        Tensor& ga = g.grad(pa);
        Tensor& gb = g.grad(pb);
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga.data[i] += go.data[i] * bv2.data[i];
            gb.data[i] += go.data[i] * av2.data[i];
        }
    });
}

inline Var div(Var a, Var b) {
    detail::check_same_graph(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (!av.same_shape(bv)) throw ValidationError("div: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= bv.data[i];
    int pa = a.id, pb = b.id;
    return a.g->make(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& av2 = g.value(pa);
        const Tensor& bv2 = g.value(pb);
        Tensor& ga = g.grad(pa);
        Tensor& gb = g.grad(pb);
        for (std::size_t i = 0; i < go.size(); ++i) {
            double inv = 1.0 / bv2.data[i];
            ga.data[i] += go.data[i] * inv;
            gb.data[i] -= go.data[i] * av2.data[i] * inv * inv;
        }
    });
}

inline Var smul(Var a, double c) {
    Tensor out = a.val();
    for (auto& v : out.data) v *= c;
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa, c](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& ga = g.grad(pa);
        for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i] * c;
    });
}

inline Var sadd(Var a, double c) {
    Tensor out = a.val();
    for (auto& v : out.data) v += c;
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa](Graph& g, int self) {
        g.grad(pa) += g.grad(self);
    });
}

template <typename F, typename DF>
inline Var unary(Var a, F f, DF df) {
    const Tensor& av = a.val();
    Tensor out = av;
    for (auto& v : out.data) v = f(v);
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa, df](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& av2 = g.value(pa);
        const Tensor& ov = g.value(self);
        Tensor& ga = g.grad(pa);
        for (std::size_t i = 0; i < go.size(); ++i)
            ga.data[i] += go.data[i] * df(av2.data[i], ov.data[i]);
    });
}

inline Var relu(Var a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var vtanh(Var a) {
    return unary(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Var vexp(Var a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var vlog(Var a) {
    return unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var vsqrt(Var a) {
    return unary(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

inline Var square(Var a) {
    return unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---- reductions ----

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.val().data) s += v;
    int pa = a.id;
    return a.g->make(Tensor::scalar(s), {pa}, [pa](Graph& g, int self) {
        double go = g.grad(self).data[0];
        Tensor& ga = g.grad(pa);
        for (auto& v : ga.data) v += go;
    });
}

inline Var mean(Var a) {
    std::size_t n = a.val().size();
    return smul(sum(a), 1.0 / static_cast<double>(n));
}

// per-channel mean over spatial positions: [C,H,W] -> [C]
inline Var spatial_mean(Var a) {
    const Tensor& av = a.val();
    if (av.rank() != 3) throw ValidationError("spatial_mean expects [C,H,W]");
    std::size_t C = av.dim(0), P = av.dim(1) * av.dim(2);
    Tensor out({C});
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += av.data[c * P + p];
        out.data[c] = s / static_cast<double>(P);
    }
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa, C, P](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& ga = g.grad(pa);
        for (std::size_t c = 0; c < C; ++c) {
            double v = go.data[c] / static_cast<double>(P);
            for (std::size_t p = 0; p < P; ++p) ga.data[c * P + p] += v;
        }
    });
}

// broadcast [C] over spatial grid -> [C,H,W]
inline Var broadcast_spatial(Var a, std::size_t H, std::size_t W) {
    const Tensor& av = a.val();
    if (av.rank() != 1) throw ValidationError("broadcast_spatial expects [C]");
    std::size_t C = av.dim(0), P = H * W;
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) out.data[c * P + p] = av.data[c];
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa, C, P](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& ga = g.grad(pa);
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += go.data[c * P + p];
            ga.data[c] += s;
        }
    });
}

// ---- shape ops ----

inline Var reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& av = a.val();
    if (Tensor::count(shape) != av.size()) throw ValidationError("reshape: element count mismatch");
    Tensor out(std::move(shape), av.data);
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& ga = g.grad(pa);
        for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i];
    });
}

inline Var slice(Var a, std::size_t offset, std::size_t len) {
    const Tensor& av = a.val();
    if (av.rank() != 1 || offset + len > av.size()) throw ValidationError("slice: out of range");
    Tensor out({len});
    for (std::size_t i = 0; i < len; ++i) out.data[i] = av.data[offset + i];
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa, offset, len](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& ga = g.grad(pa);
        for (std::size_t i = 0; i < len; ++i) ga.data[offset + i] += go.data[i];
    });
}

// out[i] = v[idx[i]] over a 1-d vector; backward scatter-adds
inline Var gather(Var v, const std::vector<std::size_t>& idx) {
    const Tensor& vv = v.val();
    if (vv.rank() != 1) throw ValidationError("gather expects a vector");
    Tensor out({idx.size()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= vv.size()) throw ValidationError("gather: index out of range");
        out.data[i] = vv.data[idx[i]];
    }
    int pv = v.id;
    return v.g->make(std::move(out), {pv}, [pv, idx](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& gv = g.grad(pv);
        for (std::size_t i = 0; i < idx.size(); ++i) gv.data[idx[i]] += go.data[i];
    });
}

inline Var concat_channels(Var a, Var b) {
    detail::check_same_graph(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
        throw ValidationError("concat_channels: incompatible shapes");
    std::size_t Ca = av.dim(0), Cb = bv.dim(0), H = av.dim(1), W = av.dim(2);
    Tensor out({Ca + Cb, H, W});
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<long>(av.size()));
    int pa = a.id, pb = b.id;
    std::size_t na = av.size();
    return a.g->make(std::move(out), {pa, pb}, [pa, pb, na](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& ga = g.grad(pa);
        Tensor& gb = g.grad(pb);
        for (std::size_t i = 0; i < na; ++i) ga.data[i] += go.data[i];
        for (std::size_t i = na; i < go.size(); ++i) gb.data[i - na] += go.data[i];
    });
}

// stack n same-length vectors into an [n,d] matrix
inline Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw ValidationError("stack_rows: empty");
    Graph* g = rows[0].g;
    std::size_t d = rows[0].val().size();
    Tensor out({rows.size(), d});
    std::vector<int> parents;
    parents.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].g != g || rows[r].val().size() != d) throw ValidationError("stack_rows: mismatched rows");
        parents.push_back(rows[r].id);
        std::copy(rows[r].val().data.begin(), rows[r].val().data.end(), out.data.begin() + static_cast<long>(r * d));
    }
    auto ps = parents;
    return g->make(std::move(out), std::move(parents), [ps, d](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        for (std::size_t r = 0; r < ps.size(); ++r) {
            Tensor& gr = gg.grad(ps[r]);
            for (std::size_t i = 0; i < d; ++i) gr.data[i] += go.data[r * d + i];
        }
    });
}

// ---- linear algebra ----

// C[m,n] = A[m,k] (optionally transposed) * B[k,n] (optionally transposed)
inline Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    detail::check_same_graph(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 2 || bv.rank() != 2) throw ValidationError("matmul expects matrices");
    std::size_t m = trans_a ? av.dim(1) : av.dim(0);
    std::size_t k = trans_a ? av.dim(0) : av.dim(1);
    std::size_t kb = trans_b ? bv.dim(1) : bv.dim(0);
    std::size_t n = trans_b ? bv.dim(0) : bv.dim(1);
    if (k != kb) throw ValidationError("matmul: inner dimension mismatch");
    auto A = [&](std::size_t i, std::size_t j) { return trans_a ? av.at(j, i) : av.at(i, j); };
    auto B = [&](std::size_t i, std::size_t j) { return trans_b ? bv.at(j, i) : bv.at(i, j); };
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += A(i, t) * B(t, j);
            out.at(i, j) = s;
        }
    int pa = a.id, pb = b.id;
    return a.g->make(std::move(out), {pa, pb}, [pa, pb, m, n, k, trans_a, trans_b](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& av2 = g.value(pa);
        const Tensor& bv2 = g.value(pb);
        Tensor& ga = g.grad(pa);
        Tensor& gb = g.grad(pb);
        auto A = [&](std::size_t i, std::size_t j) { return trans_a ? av2.at(j, i) : av2.at(i, j); };
        auto B = [&](std::size_t i, std::size_t j) { return trans_b ? bv2.at(j, i) : bv2.at(i, j); };
        auto addA = [&](std::size_t i, std::size_t j, double v) {
            if (trans_a) ga.at(j, i) += v; else ga.at(i, j) += v;
        };
        auto addB = [&](std::size_t i, std::size_t j, double v) {
            if (trans_b) gb.at(j, i) += v; else gb.at(i, j) += v;
        };
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += go.at(i, j) * B(t, j);
                addA(i, t, s);
            }
        for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i) s += go.at(i, j) * A(i, t);
                addB(t, j, s);
            }
    });
}

inline Var matvec(Var a, Var x) {
    detail::check_same_graph(a, x);
    Var col = reshape(x, {x.val().size(), 1});
    Var prod = matmul(a, col);
    return reshape(prod, {prod.val().dim(0)});
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

// ---- softmax ----

// softmax over a 1-d vector, max-shifted for stability
inline Var softmax(Var a) {
    const Tensor& av = a.val();
    if (av.rank() != 1) throw ValidationError("softmax expects vector");
    std::size_t n = av.size();
    double mx = av.data[0];
    for (double v : av.data) mx = std::max(mx, v);
    Tensor out({n});
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.data[i] = std::exp(av.data[i] - mx);
        z += out.data[i];
    }
    for (auto& v : out.data) v /= z;
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor& ga = g.grad(pa);
        double dotv = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) dotv += go.data[i] * y.data[i];
        for (std::size_t i = 0; i < y.size(); ++i) ga.data[i] += y.data[i] * (go.data[i] - dotv);
    });
}

// row-wise softmax of an [r,c] matrix
inline Var softmax_rows(Var a) {
    const Tensor& av = a.val();
    if (av.rank() != 2) throw ValidationError("softmax_rows expects matrix");
    std::size_t r = av.dim(0), c = av.dim(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        double mx = av.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, av.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out.at(i, j) = std::exp(av.at(i, j) - mx);
            z += out.at(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
    }
    int pa = a.id;
    return a.g->make(std::move(out), {pa}, [pa, r, c](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor& ga = g.grad(pa);
        for (std::size_t i = 0; i < r; ++i) {
            double dotv = 0.0;
            for (std::size_t j = 0; j < c; ++j) dotv += go.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += y.at(i, j) * (go.at(i, j) - dotv);
        }
    });
}

// ---- convolution ----

// 3x3 conv, stride 1, zero pad 1: x[Ci,H,W], w[Co,Ci,3,3], b[Co] -> [Co,H,W]
inline Var conv3x3(Var x, Var w, Var b) {
    detail::check_same_graph(x, w);
    detail::check_same_graph(x, b);
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    const Tensor& bv = b.val();
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3)
        throw ValidationError("conv3x3: bad shapes");
    std::size_t Ci = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Co = wv.dim(0);
    if (wv.dim(1) != Ci || bv.size() != Co) throw ValidationError("conv3x3: channel mismatch");
    Tensor out({Co, H, W});
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t yy = 0; yy < H; ++yy)
            for (std::size_t xx = 0; xx < W; ++xx) {
                double s = bv.data[o];
                for (std::size_t c = 0; c < Ci; ++c)
                    for (int ky = -1; ky <= 1; ++ky)
                        for (int kx = -1; kx <= 1; ++kx) {
                            long sy = static_cast<long>(yy) + ky;
                            long sx = static_cast<long>(xx) + kx;
                            if (sy < 0 || sy >= static_cast<long>(H) || sx < 0 || sx >= static_cast<long>(W)) continue;
                            s += xv.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) *
                                 wv.data[((o * Ci + c) * 3 + (ky + 1)) * 3 + (kx + 1)];
                        }
                out.at(o, yy, xx) = s;
            }
    int px = x.id, pw = w.id, pb = b.id;
    return x.g->make(std::move(out), {px, pw, pb}, [px, pw, pb, Ci, H, W, Co](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& xv2 = g.value(px);
        const Tensor& wv2 = g.value(pw);
        Tensor& gx = g.grad(px);
        Tensor& gw = g.grad(pw);
        Tensor& gb = g.grad(pb);
        for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t yy = 0; yy < H; ++yy)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    double gv = go.at(o, yy, xx);
                    if (gv == 0.0) continue;
                    gb.data[o] += gv;
                    for (std::size_t c = 0; c < Ci; ++c)
                        for (int ky = -1; ky <= 1; ++ky)
                            for (int kx = -1; kx <= 1; ++kx) {
                                long sy = static_cast<long>(yy) + ky;
                                long sx = static_cast<long>(xx) + kx;
                                if (sy < 0 || sy >= static_cast<long>(H) || sx < 0 || sx >= static_cast<long>(W)) continue;
                                std::size_t wi = ((o * Ci + c) * 3 + (ky + 1)) * 3 + (kx + 1);
                                gx.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) += gv * wv2.data[wi];
                                gw.data[wi] += gv * xv2.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                            }
                }
    });
}

// 1x1 conv as a channel transform: x[Ci,H,W], w[Co,Ci], b[Co] -> [Co,H,W]
inline Var conv1x1(Var x, Var w, Var b) {
    detail::check_same_graph(x, w);
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    const Tensor& bv = b.val();
    if (xv.rank() != 3 || wv.rank() != 2 || wv.dim(1) != xv.dim(0) || bv.size() != wv.dim(0))
        throw ValidationError("conv1x1: bad shapes");
    std::size_t Ci = xv.dim(0), P = xv.dim(1) * xv.dim(2), Co = wv.dim(0);
    Tensor out({Co, xv.dim(1), xv.dim(2)});
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t p = 0; p < P; ++p) {
            double s = bv.data[o];
            for (std::size_t c = 0; c < Ci; ++c) s += wv.at(o, c) * xv.data[c * P + p];
            out.data[o * P + p] = s;
        }
    int px = x.id, pw = w.id, pb = b.id;
    return x.g->make(std::move(out), {px, pw, pb}, [px, pw, pb, Ci, P, Co](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& xv2 = g.value(px);
        const Tensor& wv2 = g.value(pw);
        Tensor& gx = g.grad(px);
        Tensor& gw = g.grad(pw);
        Tensor& gb = g.grad(pb);
        for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t p = 0; p < P; ++p) {
                double gv = go.data[o * P + p];
                if (gv == 0.0) continue;
                gb.data[o] += gv;
                for (std::size_t c = 0; c < Ci; ++c) {
                    gw.at(o, c) += gv * xv2.data[c * P + p];
                    gx.data[c * P + p] += gv * wv2.at(o, c);
                }
            }
    });
}

// 2x2 average pooling, stride 2 (H and W must be even)
inline Var avgpool2(Var x) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3 || xv.dim(1) % 2 || xv.dim(2) % 2) throw ValidationError("avgpool2: bad shape");
    std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({C, H / 2, W / 2});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H / 2; ++y)
            for (std::size_t xx = 0; xx < W / 2; ++xx)
                out.at(c, y, xx) = 0.25 * (xv.at(c, 2 * y, 2 * xx) + xv.at(c, 2 * y, 2 * xx + 1) +
                                           xv.at(c, 2 * y + 1, 2 * xx) + xv.at(c, 2 * y + 1, 2 * xx + 1));
    int px = x.id;
    return x.g->make(std::move(out), {px}, [px, C, H, W](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor& gx = g.grad(px);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H / 2; ++y)
                for (std::size_t xx = 0; xx < W / 2; ++xx) {
                    double v = 0.25 * go.at(c, y, xx);
                    gx.at(c, 2 * y, 2 * xx) += v;
                    gx.at(c, 2 * y, 2 * xx + 1) += v;
                    gx.at(c, 2 * y + 1, 2 * xx) += v;
                    gx.at(c, 2 * y + 1, 2 * xx + 1) += v;
                }
    });
}

// ---- compound helpers ----

// x / s with scalar s
inline Var div_scalar(Var x, Var s) {
    detail::check_same_graph(x, s);
    if (s.val().size() != 1) throw ValidationError("div_scalar: divisor must be scalar");
    const Tensor& xv = x.val();
    double sv = s.val().data[0];
    Tensor out = xv;
    for (auto& v : out.data) v /= sv;
    int px = x.id, ps = s.id;
    return x.g->make(std::move(out), {px, ps}, [px, ps](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor& xv2 = g.value(px);
        double sv2 = g.value(ps).data[0];
        Tensor& gx = g.grad(px);
        Tensor& gs = g.grad(ps);
        double acc = 0.0;
        for (std::size_t i = 0; i < go.size(); ++i) {
            gx.data[i] += go.data[i] / sv2;
            acc -= go.data[i] * xv2.data[i] / (sv2 * sv2);
        }
        gs.data[0] += acc;
    });
}

inline Var l2_normalize(Var x, double eps = 1e-12) {
    Var n = vsqrt(sadd(dot(x, x), eps));
    return div_scalar(x, n);
}

// central finite differences of f at x; reference for gradient checks
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double keep = probe.data[i];
        probe.data[i] = keep + h;
        double fp = f(probe);
        probe.data[i] = keep - h;
        double fm = f(probe);
        probe.data[i] = keep;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace forge::grad
