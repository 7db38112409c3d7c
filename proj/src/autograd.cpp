#include "facefill/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace facefill {

namespace {

thread_local bool g_grad_enabled = true;

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

Tensor& ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

// Builds a graph node. Parents and the backward closure are only retained
// when some parent can receive a gradient; otherwise the node is a plain
// value and upstream activations become collectable.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& p : parents)
        if (p.defined() && p.node()->requires_grad) any = true;
    if (g_grad_enabled && any) {
        n->requires_grad = true;
        for (auto& p : parents)
            if (p.defined()) n->parents.push_back(p.node());
        n->backward = std::move(bw);
    }
    return Var(n);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void im2col(const real* src, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, real* col) {
    const int N = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
                real* dst = col + (static_cast<std::int64_t>((c * kh + dy) * kw + dx)) * N;
                for (int y = 0; y < Ho; ++y) {
                    const int sy = y * stride + dy - pad;
                    if (sy < 0 || sy >= H) {
                        std::fill(dst + y * Wo, dst + (y + 1) * Wo, 0.0);
                        continue;
                    }
                    const real* srow = src + (static_cast<std::int64_t>(c) * H + sy) * W;
                    real* drow = dst + y * Wo;
                    for (int x = 0; x < Wo; ++x) {
                        const int sx = x * stride + dx - pad;
                        drow[x] = (sx >= 0 && sx < W) ? srow[sx] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const real* col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                int Wo, real* dst) {
    const int N = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
                const real* srcp = col + (static_cast<std::int64_t>((c * kh + dy) * kw + dx)) * N;
                for (int y = 0; y < Ho; ++y) {
                    const int sy = y * stride + dy - pad;
                    if (sy < 0 || sy >= H) continue;
                    real* drow = dst + (static_cast<std::int64_t>(c) * H + sy) * W;
                    const real* srow = srcp + y * Wo;
                    for (int x = 0; x < Wo; ++x) {
                        const int sx = x * stride + dx - pad;
                        if (sx >= 0 && sx < W) drow[sx] += srow[x];
                    }
                }
            }
        }
    }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(n);
}

Var constant(Tensor t) { return Var::leaf(std::move(t), false); }

real Var::scalar() const {
    if (!node_ || node_->value.size() != 1) throw ShapeError("scalar() on non-scalar Var");
    return node_->value[0];
}

void Var::backward() const {
    if (!node_) throw StateError("backward on undefined Var");
    if (node_->value.size() != 1) throw ShapeError("backward requires a scalar root");
    if (!node_->requires_grad) return;

    // Reverse post-order DFS gives a topological order in which every node
    // is processed after all of its consumers.
    struct Frame {
        Node* n;
        size_t i;
    };
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<Frame> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.i < f.n->parents.size()) {
            Node* p = f.n->parents[f.i++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    Tensor& g = ensure_grad(*node_);
    for (auto& v : g.vec()) v += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Var operator+(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        for (int p = 0; p < 2; ++p) {
            Node& par = *self.parents[p];
            if (!par.requires_grad) continue;
            Tensor& g = ensure_grad(par);
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var operator-(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& g = ensure_grad(*self.parents[0]);
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = ensure_grad(*self.parents[1]);
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var operator*(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv2 = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            Tensor& g = ensure_grad(*self.parents[0]);
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv2[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = ensure_grad(*self.parents[1]);
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var affine(const Var& x, real s, real c) {
    Tensor out = x.value();
    for (auto& v : out.vec()) v = s * v + c;
    return make_node(std::move(out), {x}, [s](Node& self) {
        Tensor& g = ensure_grad(*self.parents[0]);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var scale(const Var& x, real s) { return affine(x, s, 0.0); }

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.vec())
        if (v < 0.0) v = 0.0;
    return make_node(std::move(out), {x}, [](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor& g = ensure_grad(*self.parents[0]);
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) g[i] += self.grad[i];
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
    return make_node(std::move(out), {x}, [](Node& self) {
        const Tensor& y = self.value;
        Tensor& g = ensure_grad(*self.parents[0]);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i] * (1.0 - y[i]);
    });
}

Var abs_elem(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.vec()) v = std::abs(v);
    return make_node(std::move(out), {x}, [](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor& g = ensure_grad(*self.parents[0]);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            if (xv[i] > 0.0)
                g[i] += self.grad[i];
            else if (xv[i] < 0.0)
                g[i] -= self.grad[i];
        }
    });
}

Var square(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.vec()) v = v * v;
    return make_node(std::move(out), {x}, [](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor& g = ensure_grad(*self.parents[0]);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xv[i] * self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& x) {
    Tensor out(Shape{1});
    out[0] = x.value().sum();
    return make_node(std::move(out), {x}, [](Node& self) {
        Tensor& g = ensure_grad(*self.parents[0]);
        const real gv = self.grad[0];
        for (auto& v : g.vec()) v += gv;
    });
}

Var mean_all(const Var& x) {
    return scale(sum_all(x), 1.0 / static_cast<real>(x.value().size()));
}

// ---------------------------------------------------------------------------
// 2-D linear algebra
// ---------------------------------------------------------------------------

Var linear_op(const Var& x, const Var& w, const Var& b) {
    if (x.value().rank() != 2 || w.value().rank() != 2)
        throw ShapeError("linear expects rank-2 input and weight");
    const int B = x.value().dim(0), in = x.value().dim(1);
    const int out_f = w.value().dim(0);
    if (w.value().dim(1) != in)
        throw ShapeError("linear weight " + shape_str(w.shape()) + " vs input " +
                         shape_str(x.shape()));
    const bool has_bias = b.defined();
    if (has_bias && b.value().size() != out_f) throw ShapeError("linear bias size");

    Tensor out(Shape{B, out_f});
    {
        ECMap X(x.value().data(), B, in);
        ECMap W(w.value().data(), out_f, in);
        EMap O(out.data(), B, out_f);
        O.noalias() = X * W.transpose();
        if (has_bias) {
            ECMap bias(b.value().data(), 1, out_f);
            O.rowwise() += bias.row(0);
        }
    }
    return make_node(std::move(out), {x, w, b}, [B, in, out_f, has_bias](Node& self) {
        ECMap G(self.grad.data(), B, out_f);
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        ECMap X(xn.value.data(), B, in);
        ECMap W(wn.value.data(), out_f, in);
        if (xn.requires_grad) {
            EMap GX(ensure_grad(xn).data(), B, in);
            GX.noalias() += G * W;
        }
        if (wn.requires_grad) {
            EMap GW(ensure_grad(wn).data(), out_f, in);
            GW.noalias() += G.transpose() * X;
        }
        if (has_bias && self.parents[2]->requires_grad) {
            Tensor& gb = ensure_grad(*self.parents[2]);
            EMap GB(gb.data(), 1, out_f);
            GB.row(0) += G.colwise().sum();
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.value().dim(1) != b.value().dim(1))
        throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
    Tensor out(Shape{m, n});
    {
        ECMap A(a.value().data(), m, k);
        ECMap B(b.value().data(), n, k);
        EMap O(out.data(), m, n);
        O.noalias() = A * B.transpose();
    }
    return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
        ECMap G(self.grad.data(), m, n);
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        if (an.requires_grad) {
            ECMap B(bn.value.data(), n, k);
            EMap GA(ensure_grad(an).data(), m, k);
            GA.noalias() += G * B;
        }
        if (bn.requires_grad) {
            ECMap A(an.value.data(), m, k);
            EMap GB(ensure_grad(bn).data(), n, k);
            GB.noalias() += G.transpose() * A;
        }
    });
}

Var rowwise_dot(const Var& a, const Var& b) {
    check_same_shape(a, b, "rowwise_dot");
    if (a.value().rank() != 2) throw ShapeError("rowwise_dot expects rank-2");
    const int B = a.value().dim(0), d = a.value().dim(1);
    Tensor out(Shape{B, 1});
    for (int i = 0; i < B; ++i) {
        real s = 0.0;
        for (int j = 0; j < d; ++j) s += a.value().at(i, j) * b.value().at(i, j);
        out[i] = s;
    }
    return make_node(std::move(out), {a, b}, [B, d](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        for (int p = 0; p < 2; ++p) {
            Node& par = *self.parents[p];
            if (!par.requires_grad) continue;
            const Tensor& other = (p == 0) ? bv : av;
            Tensor& g = ensure_grad(par);
            for (int i = 0; i < B; ++i) {
                const real gv = self.grad[i];
                for (int j = 0; j < d; ++j) g.at(i, j) += gv * other.at(i, j);
            }
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.value().dim(0) != b.value().dim(0))
        throw ShapeError("concat_cols: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int B = a.value().dim(0), ca = a.value().dim(1), cb = b.value().dim(1);
    Tensor out(Shape{B, ca + cb});
    for (int i = 0; i < B; ++i) {
        for (int j = 0; j < ca; ++j) out.at(i, j) = a.value().at(i, j);
        for (int j = 0; j < cb; ++j) out.at(i, ca + j) = b.value().at(i, j);
    }
    return make_node(std::move(out), {a, b}, [B, ca, cb](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& g = ensure_grad(*self.parents[0]);
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < ca; ++j) g.at(i, j) += self.grad.at(i, j);
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = ensure_grad(*self.parents[1]);
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < cb; ++j) g.at(i, j) += self.grad.at(i, ca + j);
        }
    });
}

Var l2_normalize_rows(const Var& x, real eps) {
    if (x.value().rank() != 2) throw ShapeError("l2_normalize_rows expects rank-2");
    const int B = x.value().dim(0), d = x.value().dim(1);
    Tensor out = x.value();
    std::vector<real> norms(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        real s = 0.0;
        for (int j = 0; j < d; ++j) s += out.at(i, j) * out.at(i, j);
        const real n = std::max(std::sqrt(s), eps);
        norms[static_cast<size_t>(i)] = n;
        for (int j = 0; j < d; ++j) out.at(i, j) /= n;
    }
    return make_node(std::move(out), {x}, [B, d, norms](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = ensure_grad(*self.parents[0]);
        const Tensor& y = self.value;
        for (int i = 0; i < B; ++i) {
            real dot = 0.0;
            for (int j = 0; j < d; ++j) dot += self.grad.at(i, j) * y.at(i, j);
            const real inv = 1.0 / norms[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j)
                g.at(i, j) += (self.grad.at(i, j) - y.at(i, j) * dot) * inv;
        }
    });
}

Var cross_entropy_target0(const Var& logits) {
    if (logits.value().rank() != 2) throw ShapeError("cross_entropy_target0 expects rank-2");
    const int B = logits.value().dim(0), C = logits.value().dim(1);
    Tensor out(Shape{1});
    real total = 0.0;
    for (int i = 0; i < B; ++i) {
        real mx = logits.value().at(i, 0);
        for (int j = 1; j < C; ++j) mx = std::max(mx, logits.value().at(i, j));
        real se = 0.0;
        for (int j = 0; j < C; ++j) se += std::exp(logits.value().at(i, j) - mx);
        total += mx + std::log(se) - logits.value().at(i, 0);
    }
    out[0] = total / B;
    return make_node(std::move(out), {logits}, [B, C](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        const Tensor& lv = self.parents[0]->value;
        Tensor& g = ensure_grad(*self.parents[0]);
        const real gv = self.grad[0] / B;
        for (int i = 0; i < B; ++i) {
            real mx = lv.at(i, 0);
            for (int j = 1; j < C; ++j) mx = std::max(mx, lv.at(i, j));
            real se = 0.0;
            for (int j = 0; j < C; ++j) se += std::exp(lv.at(i, j) - mx);
            for (int j = 0; j < C; ++j) {
                const real p = std::exp(lv.at(i, j) - mx) / se;
                g.at(i, j) += gv * (p - (j == 0 ? 1.0 : 0.0));
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.value().rank() != 4 || w.value().rank() != 4)
        throw ShapeError("conv2d expects [B,C,H,W] input and [O,I,kh,kw] weight");
    const int B = x.value().dim(0), Cin = x.value().dim(1);
    const int H = x.value().dim(2), W = x.value().dim(3);
    const int Cout = w.value().dim(0), kh = w.value().dim(2), kw = w.value().dim(3);
    if (w.value().dim(1) != Cin)
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " +
                         shape_str(w.shape()));
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d output would be empty");
    const bool has_bias = b.defined();
    if (has_bias && b.value().size() != Cout) throw ShapeError("conv2d bias size");

    const int K = Cin * kh * kw;
    const std::int64_t N = static_cast<std::int64_t>(Ho) * Wo;
    Tensor out(Shape{B, Cout, Ho, Wo});
    {
        EMat col(K, N);
        ECMap Wm(w.value().data(), Cout, K);
        for (int bi = 0; bi < B; ++bi) {
            im2col(x.value().data() + static_cast<std::int64_t>(bi) * Cin * H * W, Cin, H, W, kh,
                   kw, stride, pad, Ho, Wo, col.data());
            EMap O(out.data() + static_cast<std::int64_t>(bi) * Cout * N, Cout, N);
            O.noalias() = Wm * col;
            if (has_bias)
                for (int c = 0; c < Cout; ++c) O.row(c).array() += b.value()[c];
        }
    }
    return make_node(
        std::move(out), {x, w, b},
        [B, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, N, has_bias](Node& self) {
            Node& xn = *self.parents[0];
            Node& wn = *self.parents[1];
            ECMap Wm(wn.value.data(), Cout, K);
            EMat col(K, N);
            EMat dcol(K, N);
            const bool need_dx = xn.requires_grad;
            const bool need_dw = wn.requires_grad;
            const bool need_db = has_bias && self.parents[2]->requires_grad;
            for (int bi = 0; bi < B; ++bi) {
                ECMap G(self.grad.data() + static_cast<std::int64_t>(bi) * Cout * N, Cout, N);
                if (need_dw) {
                    // im2col is recomputed instead of cached; keeps the graph
                    // footprint proportional to activations only.
                    im2col(xn.value.data() + static_cast<std::int64_t>(bi) * Cin * H * W, Cin, H,
                           W, kh, kw, stride, pad, Ho, Wo, col.data());
                    EMap GW(ensure_grad(wn).data(), Cout, K);
                    GW.noalias() += G * col.transpose();
                }
                if (need_dx) {
                    dcol.noalias() = Wm.transpose() * G;
                    col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                               ensure_grad(xn).data() +
                                   static_cast<std::int64_t>(bi) * Cin * H * W);
                }
                if (need_db) {
                    Tensor& gb = ensure_grad(*self.parents[2]);
                    for (int c = 0; c < Cout; ++c) gb[c] += G.row(c).sum();
                }
            }
        });
}

Var global_avg_pool(const Var& x) {
    if (x.value().rank() != 4) throw ShapeError("global_avg_pool expects rank-4");
    const int B = x.value().dim(0), C = x.value().dim(1);
    const int H = x.value().dim(2), W = x.value().dim(3);
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    Tensor out(Shape{B, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const real* p = x.value().data() + (static_cast<std::int64_t>(b) * C + c) * hw;
            real s = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) s += p[i];
            out.at(b, c) = s / static_cast<real>(hw);
        }
    return make_node(std::move(out), {x}, [B, C, hw](Node& self) {
        Tensor& g = ensure_grad(*self.parents[0]);
        const real inv = 1.0 / static_cast<real>(hw);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const real gv = self.grad.at(b, c) * inv;
                real* p = g.data() + (static_cast<std::int64_t>(b) * C + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) p[i] += gv;
            }
    });
}

Var avg_pool(const Var& x, int k) {
    if (x.value().rank() != 4) throw ShapeError("avg_pool expects rank-4");
    if (k == 1) return x;
    const int B = x.value().dim(0), C = x.value().dim(1);
    const int H = x.value().dim(2), W = x.value().dim(3);
    if (H % k != 0 || W % k != 0) throw ShapeError("avg_pool: dims not divisible by window");
    const int h = H / k, w = W / k;
    Tensor out(Shape{B, C, h, w});
    const real inv = 1.0 / (static_cast<real>(k) * k);
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(B) * C; ++p) {
        const real* plane = x.value().data() + p * H * W;
        real* oplane = out.data() + p * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                real acc = 0.0;
                for (int dy = 0; dy < k; ++dy) {
                    const real* row = plane + (y * k + dy) * W + xx * k;
                    for (int dx = 0; dx < k; ++dx) acc += row[dx];
                }
                oplane[y * w + xx] = acc * inv;
            }
    }
    return make_node(std::move(out), {x}, [B, C, H, W, h, w, k, inv](Node& self) {
        Tensor& g = ensure_grad(*self.parents[0]);
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(B) * C; ++p) {
            real* gplane = g.data() + p * H * W;
            const real* oplane = self.grad.data() + p * h * w;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const real gv = oplane[y * w + xx] * inv;
                    for (int dy = 0; dy < k; ++dy) {
                        real* row = gplane + (y * k + dy) * W + xx * k;
                        for (int dx = 0; dx < k; ++dx) row[dx] += gv;
                    }
                }
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    if (x.value().rank() != 4) throw ShapeError("upsample expects rank-4");
    const int B = x.value().dim(0), C = x.value().dim(1);
    const int H = x.value().dim(2), W = x.value().dim(3);
    Tensor out(Shape{B, C, 2 * H, 2 * W});
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(B) * C; ++p) {
        const real* plane = x.value().data() + p * H * W;
        real* oplane = out.data() + p * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const real v = plane[y * W + xx];
                real* o = oplane + (2 * y) * (2 * W) + 2 * xx;
                o[0] = v;
                o[1] = v;
                o[2 * W] = v;
                o[2 * W + 1] = v;
            }
    }
    return make_node(std::move(out), {x}, [B, C, H, W](Node& self) {
        Tensor& g = ensure_grad(*self.parents[0]);
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(B) * C; ++p) {
            real* gplane = g.data() + p * H * W;
            const real* oplane = self.grad.data() + p * 4 * H * W;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const real* o = oplane + (2 * y) * (2 * W) + 2 * xx;
                    gplane[y * W + xx] += o[0] + o[1] + o[2 * W] + o[2 * W + 1];
                }
        }
    });
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    const int B = xs[0].value().dim(0);
    const int H = xs[0].value().dim(2), W = xs[0].value().dim(3);
    int Ctot = 0;
    for (const auto& v : xs) {
        if (v.value().rank() != 4 || v.value().dim(0) != B || v.value().dim(2) != H ||
            v.value().dim(3) != W)
            throw ShapeError("concat_channels: incompatible shapes");
        Ctot += v.value().dim(1);
    }
    Tensor out(Shape{B, Ctot, H, W});
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    std::vector<int> channels;
    for (const auto& v : xs) channels.push_back(v.value().dim(1));
    for (int b = 0; b < B; ++b) {
        int coff = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            const int Ci = channels[i];
            const real* src = xs[i].value().data() + static_cast<std::int64_t>(b) * Ci * hw;
            real* dst = out.data() + (static_cast<std::int64_t>(b) * Ctot + coff) * hw;
            std::copy(src, src + static_cast<std::int64_t>(Ci) * hw, dst);
            coff += Ci;
        }
    }
    return make_node(std::move(out), xs, [B, Ctot, hw, channels](Node& self) {
        for (int b = 0; b < B; ++b) {
            int coff = 0;
            for (size_t i = 0; i < self.parents.size(); ++i) {
                const int Ci = channels[i];
                Node& par = *self.parents[i];
                if (par.requires_grad) {
                    real* dst = ensure_grad(par).data() + static_cast<std::int64_t>(b) * Ci * hw;
                    const real* src =
                        self.grad.data() + (static_cast<std::int64_t>(b) * Ctot + coff) * hw;
                    for (std::int64_t j = 0; j < static_cast<std::int64_t>(Ci) * hw; ++j)
                        dst[j] += src[j];
                }
                coff += Ci;
            }
        }
    });
}

Var scale_channels(const Var& x, const Var& s) {
    if (x.value().rank() != 4 || s.value().rank() != 2)
        throw ShapeError("scale_channels expects [B,C,H,W] and [B,C]");
    const int B = x.value().dim(0), C = x.value().dim(1);
    if (s.value().dim(0) != B || s.value().dim(1) != C)
        throw ShapeError("scale_channels: scale shape mismatch");
    const std::int64_t hw = static_cast<std::int64_t>(x.value().dim(2)) * x.value().dim(3);
    Tensor out = x.value();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const real sv = s.value().at(b, c);
            real* p = out.data() + (static_cast<std::int64_t>(b) * C + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) p[i] *= sv;
        }
    return make_node(std::move(out), {x, s}, [B, C, hw](Node& self) {
        Node& xn = *self.parents[0];
        Node& sn = *self.parents[1];
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * hw;
                const real* gp = self.grad.data() + off;
                if (xn.requires_grad) {
                    const real sv = sn.value.at(b, c);
                    real* gx = ensure_grad(xn).data() + off;
                    for (std::int64_t i = 0; i < hw; ++i) gx[i] += gp[i] * sv;
                }
                if (sn.requires_grad) {
                    const real* xp = xn.value.data() + off;
                    real acc = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
                    ensure_grad(sn).at(b, c) += acc;
                }
            }
    });
}

Var gram_batch(const Var& x) {
    if (x.value().rank() != 4) throw ShapeError("gram_batch expects rank-4");
    const int B = x.value().dim(0), C = x.value().dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(x.value().dim(2)) * x.value().dim(3);
    Tensor out(Shape{B, C, C});
    for (int b = 0; b < B; ++b) {
        ECMap F(x.value().data() + static_cast<std::int64_t>(b) * C * hw, C, hw);
        EMap G(out.data() + static_cast<std::int64_t>(b) * C * C, C, C);
        G.noalias() = F * F.transpose();
    }
    return make_node(std::move(out), {x}, [B, C, hw](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Node& xn = *self.parents[0];
        Tensor& gx = ensure_grad(xn);
        for (int b = 0; b < B; ++b) {
            ECMap F(xn.value.data() + static_cast<std::int64_t>(b) * C * hw, C, hw);
            ECMap G(self.grad.data() + static_cast<std::int64_t>(b) * C * C, C, C);
            EMap GF(gx.data() + static_cast<std::int64_t>(b) * C * hw, C, hw);
            GF.noalias() += (G + G.transpose()) * F;
        }
    });
}

}  // namespace facefill
