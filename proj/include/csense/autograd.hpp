#pragma once

// Reverse-mode automatic differentiation over dense tensors. Graphs are
// built define-by-run: every op returns a new node holding its value, its
// parents and a closure that routes the incoming gradient to the parents.
// All kernels are single-threaded with fixed loop order, so identical
// inputs give bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "csense/tensor.hpp"

namespace csense::nn {

enum class Mode { Train, Eval };

struct DegenerateBatch : Error {
    explicit DegenerateBatch(const std::string& what) : Error("degenerate batch: " + what) {}
};

struct ClassOutOfRange : Error {
    explicit ClassOutOfRange(const std::string& what) : Error("class out of range: " + what) {}
};

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    TensorT<T> value;
    TensorT<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.numel() == 0) grad = TensorT<T>::zeros(value.shape);
    }
};

template <typename T>
Var<T> make_leaf(TensorT<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Var<T> make_node(const char* op, TensorT<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_fn) {
    check_finite(value, op);
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

// Runs backpropagation from a scalar root. Gradients accumulate into each
// node's grad tensor; leaves keep theirs for the caller to harvest.
template <typename T>
void backward(const Var<T>& root) {
    if (root->value.numel() != 1) throw ShapeMismatch("backward() root must be scalar");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0 && seen.count(node)) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            Node<T>* next = node->parents[idx].get();
            ++idx;
            if (!seen.count(next) && next->requires_grad) stack.push_back({next, 0});
        } else {
            seen.insert(node);
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->requires_grad && n->backward_fn && n->grad.numel()) n->backward_fn(*n);
    }
}

namespace detail {

template <typename T>
void accumulate(const Var<T>& p, const TensorT<T>& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.ptr();
    const T* src = g.ptr();
    for (int64_t i = 0, n = g.numel(); i < n; ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw ShapeMismatch("add: " + a->value.shape_str() + " vs " + b->value.shape_str());
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
    return make_node<T>("add", std::move(out), {a, b}, [a, b](Node<T>& n) {
        detail::accumulate(a, n.grad);
        detail::accumulate(b, n.grad);
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] * c;
    return make_node<T>("scale", std::move(out), {a}, [a, c](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad.data[i] += n.grad.data[i] * c;
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] > T(0) ? a->value.data[i] : T(0);
    return make_node<T>("relu", std::move(out), {a}, [a](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (a->value.data[i] > T(0)) a->grad.data[i] += n.grad.data[i];
    });
}

// exact gelu: x * Phi(x)
template <typename T>
Var<T> gelu(const Var<T>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x = static_cast<double>(a->value.data[i]);
        out.data[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    return make_node<T>("gelu", std::move(out), {a}, [a](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = static_cast<double>(a->value.data[i]);
            double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double dens = inv_sqrt2pi * std::exp(-0.5 * x * x);
            a->grad.data[i] += n.grad.data[i] * static_cast<T>(phi + x * dens);
        }
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// x [B,Cin,L], weight [Cout,Cin,K], bias [Cout] (empty tensor = no bias).
// Cross-correlation; L_out = floor((L + 2*padding - K)/stride) + 1.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride = 1,
              int64_t padding = 0) {
    if (x->value.rank() != 3 || w->value.rank() != 3)
        throw ShapeMismatch("conv1d expects x[B,C,L], w[Cout,Cin,K]");
    const int64_t B = x->value.dim(0), Cin = x->value.dim(1), L = x->value.dim(2);
    const int64_t Cout = w->value.dim(0), K = w->value.dim(2);
    if (w->value.dim(1) != Cin)
        throw ShapeMismatch("conv1d: weight Cin " + std::to_string(w->value.dim(1)) +
                            " vs input " + std::to_string(Cin));
    if (b && b->value.numel() && b->value.numel() != Cout)
        throw ShapeMismatch("conv1d: bias size");
    if (K > L + 2 * padding) throw ShapeMismatch("conv1d: kernel longer than padded input");
    const int64_t Lout = (L + 2 * padding - K) / stride + 1;

    TensorT<T> out({B, Cout, Lout});
    const T* xp = x->value.ptr();
    const T* wp = w->value.ptr();
    T* op = out.ptr();
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t co = 0; co < Cout; ++co) {
            T* orow = op + (bi * Cout + co) * Lout;
            if (b && b->value.numel()) {
                T bv = b->value.data[static_cast<size_t>(co)];
                for (int64_t l = 0; l < Lout; ++l) orow[l] = bv;
            }
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const T* xrow = xp + (bi * Cin + ci) * L;
                const T* wrow = wp + (co * Cin + ci) * K;
                for (int64_t k = 0; k < K; ++k) {
                    const T wv = wrow[k];
                    const int64_t off = k - padding;
                    // valid l range keeps l*stride+off within [0, L)
                    int64_t lo = 0, hi = Lout;
                    if (stride == 1) {
                        lo = std::max<int64_t>(0, -off);
                        hi = std::min<int64_t>(Lout, L - off);
                        const T* xk = xrow + off;
                        for (int64_t l = lo; l < hi; ++l) orow[l] += wv * xk[l];
                    } else {
                        for (int64_t l = 0; l < Lout; ++l) {
                            int64_t t = l * stride + off;
                            if (t >= 0 && t < L) orow[l] += wv * xrow[t];
                        }
                    }
                }
            }
        }

    auto backward = [x, w, b, stride, padding, B, Cin, Cout, K, L, Lout](Node<T>& n) {
        const T* gp = n.grad.ptr();
        if (x->requires_grad) {
            x->ensure_grad();
            T* dx = x->grad.ptr();
            const T* wp2 = w->value.ptr();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t co = 0; co < Cout; ++co) {
                    const T* grow = gp + (bi * Cout + co) * Lout;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        T* dxrow = dx + (bi * Cin + ci) * L;
                        const T* wrow = wp2 + (co * Cin + ci) * K;
                        for (int64_t k = 0; k < K; ++k) {
                            const T wv = wrow[k];
                            const int64_t off = k - padding;
                            if (stride == 1) {
                                const int64_t lo = std::max<int64_t>(0, -off);
                                const int64_t hi = std::min<int64_t>(Lout, L - off);
                                T* dxk = dxrow + off;
                                for (int64_t l = lo; l < hi; ++l) dxk[l] += wv * grow[l];
                            } else {
                                for (int64_t l = 0; l < Lout; ++l) {
                                    int64_t t = l * stride + off;
                                    if (t >= 0 && t < L) dxrow[t] += wv * grow[l];
                                }
                            }
                        }
                    }
                }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            T* dw = w->grad.ptr();
            const T* xp2 = x->value.ptr();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t co = 0; co < Cout; ++co) {
                    const T* grow = gp + (bi * Cout + co) * Lout;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const T* xrow = xp2 + (bi * Cin + ci) * L;
                        T* dwrow = dw + (co * Cin + ci) * K;
                        for (int64_t k = 0; k < K; ++k) {
                            const int64_t off = k - padding;
                            T acc = T(0);
                            if (stride == 1) {
                                const int64_t lo = std::max<int64_t>(0, -off);
                                const int64_t hi = std::min<int64_t>(Lout, L - off);
                                const T* xk = xrow + off;
                                for (int64_t l = lo; l < hi; ++l) acc += grow[l] * xk[l];
                            } else {
                                for (int64_t l = 0; l < Lout; ++l) {
                                    int64_t t = l * stride + off;
                                    if (t >= 0 && t < L) acc += grow[l] * xrow[t];
                                }
                            }
                            dwrow[k] += acc;
                        }
                    }
                }
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t co = 0; co < Cout; ++co) {
                    const T* grow = gp + (bi * Cout + co) * Lout;
                    T acc = T(0);
                    for (int64_t l = 0; l < Lout; ++l) acc += grow[l];
                    b->grad.data[static_cast<size_t>(co)] += acc;
                }
        }
    };
    std::vector<Var<T>> parents{x, w};
    if (b) parents.push_back(b);
    return make_node<T>("conv1d", std::move(out), std::move(parents), backward);
}

// x [B,Cin,L], weight [Cin,Cout,K] (input channels lead, so the same tensor
// used by conv1d as [Cout,Cin,K] makes this op its exact adjoint).
// Output length = (L-1)*stride + K.
template <typename T>
Var<T> conv1d_transposed(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride = 1) {
    if (x->value.rank() != 3 || w->value.rank() != 3)
        throw ShapeMismatch("conv1d_transposed expects x[B,C,L], w[Cin,Cout,K]");
    const int64_t B = x->value.dim(0), Cin = x->value.dim(1), L = x->value.dim(2);
    const int64_t Cout = w->value.dim(1), K = w->value.dim(2);
    if (w->value.dim(0) != Cin)
        throw ShapeMismatch("conv1d_transposed: weight Cin mismatch");
    const int64_t Lout = (L - 1) * stride + K;

    TensorT<T> out({B, Cout, Lout});
    const T* xp = x->value.ptr();
    const T* wp = w->value.ptr();
    T* op = out.ptr();
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t co = 0; co < Cout; ++co) {
            T* orow = op + (bi * Cout + co) * Lout;
            if (b && b->value.numel()) {
                T bv = b->value.data[static_cast<size_t>(co)];
                for (int64_t t = 0; t < Lout; ++t) orow[t] = bv;
            }
        }
        for (int64_t ci = 0; ci < Cin; ++ci) {
            const T* xrow = xp + (bi * Cin + ci) * L;
            for (int64_t co = 0; co < Cout; ++co) {
                T* orow = op + (bi * Cout + co) * Lout;
                const T* wrow = wp + (ci * Cout + co) * K;
                for (int64_t l = 0; l < L; ++l) {
                    const T xv = xrow[l];
                    T* obase = orow + l * stride;
                    for (int64_t k = 0; k < K; ++k) obase[k] += xv * wrow[k];
                }
            }
        }
    }

    auto backward = [x, w, b, stride, B, Cin, Cout, K, L, Lout](Node<T>& n) {
        const T* gp = n.grad.ptr();
        if (x->requires_grad) {
            x->ensure_grad();
            T* dx = x->grad.ptr();
            const T* wp2 = w->value.ptr();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    T* dxrow = dx + (bi * Cin + ci) * L;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* grow = gp + (bi * Cout + co) * Lout;
                        const T* wrow = wp2 + (ci * Cout + co) * K;
                        for (int64_t l = 0; l < L; ++l) {
                            const T* gbase = grow + l * stride;
                            T acc = T(0);
                            for (int64_t k = 0; k < K; ++k) acc += gbase[k] * wrow[k];
                            dxrow[l] += acc;
                        }
                    }
                }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            T* dw = w->grad.ptr();
            const T* xp2 = x->value.ptr();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const T* xrow = xp2 + (bi * Cin + ci) * L;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* grow = gp + (bi * Cout + co) * Lout;
                        T* dwrow = dw + (ci * Cout + co) * K;
                        for (int64_t l = 0; l < L; ++l) {
                            const T xv = xrow[l];
                            const T* gbase = grow + l * stride;
                            for (int64_t k = 0; k < K; ++k) dwrow[k] += xv * gbase[k];
                        }
                    }
                }
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t co = 0; co < Cout; ++co) {
                    const T* grow = gp + (bi * Cout + co) * Lout;
                    T acc = T(0);
                    for (int64_t t = 0; t < Lout; ++t) acc += grow[t];
                    b->grad.data[static_cast<size_t>(co)] += acc;
                }
        }
    };
    std::vector<Var<T>> parents{x, w};
    if (b) parents.push_back(b);
    return make_node<T>("conv1d_transposed", std::move(out), std::move(parents), backward);
}

// ---------------------------------------------------------------------------
// pooling / normalization
// ---------------------------------------------------------------------------

template <typename T>
Var<T> max_pool1d(const Var<T>& x, int64_t kernel = 2, int64_t stride = 2) {
    if (x->value.rank() != 3) throw ShapeMismatch("max_pool1d expects [B,C,L]");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
    if (kernel > L) throw ShapeMismatch("max_pool1d: kernel longer than input");
    const int64_t Lout = (L - kernel) / stride + 1;
    TensorT<T> out({B, C, Lout});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C * Lout));
    const T* xp = x->value.ptr();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* xrow = xp + bc * L;
        for (int64_t l = 0; l < Lout; ++l) {
            int64_t best = l * stride;
            T bv = xrow[best];
            for (int64_t k = 1; k < kernel; ++k) {
                int64_t t = l * stride + k;
                if (xrow[t] > bv) {
                    bv = xrow[t];
                    best = t;
                }
            }
            out.data[static_cast<size_t>(bc * Lout + l)] = bv;
            (*argmax)[static_cast<size_t>(bc * Lout + l)] = best;
        }
    }
    return make_node<T>("max_pool1d", std::move(out), {x}, [x, argmax, B, C, L, Lout](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        T* dx = x->grad.ptr();
        const T* gp = n.grad.ptr();
        for (int64_t bc = 0; bc < B * C; ++bc)
            for (int64_t l = 0; l < Lout; ++l)
                dx[bc * L + (*argmax)[static_cast<size_t>(bc * Lout + l)]] +=
                    gp[bc * Lout + l];
    });
}

// x [B,C,L]; gamma/beta [C]. Train mode normalizes by batch statistics over
// (B,L) and, when buffers are given, updates running stats in place with the
// usual momentum rule (unbiased variance in the running estimate). Eval mode
// normalizes by the running stats.
template <typename T>
Var<T> batch_norm1d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    TensorT<T>* running_mean, TensorT<T>* running_var, Mode mode,
                    double eps = 1e-5, double momentum = 0.1) {
    if (x->value.rank() != 3) throw ShapeMismatch("batch_norm1d expects [B,C,L]");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw ShapeMismatch("batch_norm1d: gamma/beta size");
    const int64_t n = B * L;
    if (mode == Mode::Train && n <= 1)
        throw DegenerateBatch("batch_norm1d needs B*L > 1 in train mode");
    if (mode == Mode::Eval && (!running_mean || !running_var))
        throw ShapeMismatch("batch_norm1d: eval mode needs running stats");

    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
    const T* xp = x->value.ptr();
    if (mode == Mode::Train) {
        for (int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (int64_t bi = 0; bi < B; ++bi) {
                const T* row = xp + (bi * C + c) * L;
                for (int64_t l = 0; l < L; ++l) s += static_cast<double>(row[l]);
            }
            double m = s / static_cast<double>(n);
            double v = 0.0;
            for (int64_t bi = 0; bi < B; ++bi) {
                const T* row = xp + (bi * C + c) * L;
                for (int64_t l = 0; l < L; ++l) {
                    double d = static_cast<double>(row[l]) - m;
                    v += d * d;
                }
            }
            v /= static_cast<double>(n);
            (*mean)[static_cast<size_t>(c)] = static_cast<T>(m);
            (*inv_std)[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(v + eps));
            if (running_mean && running_var) {
                double unbiased = v * static_cast<double>(n) / static_cast<double>(n - 1);
                running_mean->data[static_cast<size_t>(c)] = static_cast<T>(
                    (1.0 - momentum) * static_cast<double>(running_mean->data[static_cast<size_t>(c)]) +
                    momentum * m);
                running_var->data[static_cast<size_t>(c)] = static_cast<T>(
                    (1.0 - momentum) * static_cast<double>(running_var->data[static_cast<size_t>(c)]) +
                    momentum * unbiased);
            }
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            (*mean)[static_cast<size_t>(c)] = running_mean->data[static_cast<size_t>(c)];
            (*inv_std)[static_cast<size_t>(c)] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(running_var->data[static_cast<size_t>(c)]) + eps));
        }
    }

    TensorT<T> out({B, C, L});
    auto xhat = std::make_shared<TensorT<T>>(std::vector<int64_t>{B, C, L});
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t c = 0; c < C; ++c) {
            const T m = (*mean)[static_cast<size_t>(c)];
            const T is = (*inv_std)[static_cast<size_t>(c)];
            const T g = gamma->value.data[static_cast<size_t>(c)];
            const T bta = beta->value.data[static_cast<size_t>(c)];
            const T* xrow = xp + (bi * C + c) * L;
            T* hrow = xhat->ptr() + (bi * C + c) * L;
            T* orow = out.ptr() + (bi * C + c) * L;
            for (int64_t l = 0; l < L; ++l) {
                T h = (xrow[l] - m) * is;
                hrow[l] = h;
                orow[l] = g * h + bta;
            }
        }

    const bool train_stats = (mode == Mode::Train);
    auto backward = [x, gamma, beta, xhat, inv_std, B, C, L, n, train_stats](Node<T>& nd) {
        const T* gp = nd.grad.ptr();
        const T* hp = xhat->ptr();
        for (int64_t c = 0; c < C; ++c) {
            double sum_g = 0.0, sum_gh = 0.0;
            for (int64_t bi = 0; bi < B; ++bi) {
                const T* grow = gp + (bi * C + c) * L;
                const T* hrow = hp + (bi * C + c) * L;
                for (int64_t l = 0; l < L; ++l) {
                    sum_g += static_cast<double>(grow[l]);
                    sum_gh += static_cast<double>(grow[l]) * static_cast<double>(hrow[l]);
                }
            }
            if (gamma->requires_grad) {
                gamma->ensure_grad();
                gamma->grad.data[static_cast<size_t>(c)] += static_cast<T>(sum_gh);
            }
            if (beta->requires_grad) {
                beta->ensure_grad();
                beta->grad.data[static_cast<size_t>(c)] += static_cast<T>(sum_g);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                const T gam = gamma->value.data[static_cast<size_t>(c)];
                const T is = (*inv_std)[static_cast<size_t>(c)];
                const double mg = sum_g / static_cast<double>(n);
                const double mgh = sum_gh / static_cast<double>(n);
                for (int64_t bi = 0; bi < B; ++bi) {
                    const T* grow = gp + (bi * C + c) * L;
                    const T* hrow = hp + (bi * C + c) * L;
                    T* dxrow = x->grad.ptr() + (bi * C + c) * L;
                    for (int64_t l = 0; l < L; ++l) {
                        double term = train_stats
                                          ? static_cast<double>(grow[l]) - mg -
                                                static_cast<double>(hrow[l]) * mgh
                                          : static_cast<double>(grow[l]);
                        dxrow[l] += static_cast<T>(static_cast<double>(gam) *
                                                   static_cast<double>(is) * term);
                    }
                }
            }
        }
    };
    return make_node<T>("batch_norm1d", std::move(out), {x, gamma, beta}, backward);
}

// Normalizes the last dimension; gamma/beta [D].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5) {
    const int64_t D = x->value.shape.back();
    if (gamma->value.numel() != D || beta->value.numel() != D)
        throw ShapeMismatch("layer_norm: gamma/beta size");
    const int64_t rows = x->value.numel() / D;
    TensorT<T> out(x->value.shape);
    auto xhat = std::make_shared<TensorT<T>>(x->value.shape);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const T* xp = x->value.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xrow = xp + r * D;
        double s = 0.0;
        for (int64_t i = 0; i < D; ++i) s += static_cast<double>(xrow[i]);
        double m = s / static_cast<double>(D);
        double v = 0.0;
        for (int64_t i = 0; i < D; ++i) {
            double d = static_cast<double>(xrow[i]) - m;
            v += d * d;
        }
        v /= static_cast<double>(D);
        T is = static_cast<T>(1.0 / std::sqrt(v + eps));
        (*inv_std)[static_cast<size_t>(r)] = is;
        T* hrow = xhat->ptr() + r * D;
        T* orow = out.ptr() + r * D;
        for (int64_t i = 0; i < D; ++i) {
            T h = (xrow[i] - static_cast<T>(m)) * is;
            hrow[i] = h;
            orow[i] = gamma->value.data[static_cast<size_t>(i)] * h +
                      beta->value.data[static_cast<size_t>(i)];
        }
    }
    auto backward = [x, gamma, beta, xhat, inv_std, rows, D](Node<T>& n) {
        const T* gp = n.grad.ptr();
        const T* hp = xhat->ptr();
        for (int64_t r = 0; r < rows; ++r) {
            const T* grow = gp + r * D;
            const T* hrow = hp + r * D;
            if (gamma->requires_grad) {
                gamma->ensure_grad();
                for (int64_t i = 0; i < D; ++i)
                    gamma->grad.data[static_cast<size_t>(i)] += grow[i] * hrow[i];
            }
            if (beta->requires_grad) {
                beta->ensure_grad();
                for (int64_t i = 0; i < D; ++i) beta->grad.data[static_cast<size_t>(i)] += grow[i];
            }
            if (x->requires_grad) {
                x->ensure_grad();
                double sum_h = 0.0, sum_hh = 0.0;
                for (int64_t i = 0; i < D; ++i) {
                    double hg = static_cast<double>(grow[i]) *
                                static_cast<double>(gamma->value.data[static_cast<size_t>(i)]);
                    sum_h += hg;
                    sum_hh += hg * static_cast<double>(hrow[i]);
                }
                double mh = sum_h / static_cast<double>(D);
                double mhh = sum_hh / static_cast<double>(D);
                T* dxrow = x->grad.ptr() + r * D;
                const T is = (*inv_std)[static_cast<size_t>(r)];
                for (int64_t i = 0; i < D; ++i) {
                    double hg = static_cast<double>(grow[i]) *
                                static_cast<double>(gamma->value.data[static_cast<size_t>(i)]);
                    dxrow[i] += static_cast<T>(static_cast<double>(is) *
                                               (hg - mh - static_cast<double>(hrow[i]) * mhh));
                }
            }
        }
    };
    return make_node<T>("layer_norm", std::move(out), {x, gamma, beta}, backward);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

// x [N,in] @ w [in,out] + b [out]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    if (x->value.rank() != 2 || w->value.rank() != 2)
        throw ShapeMismatch("linear expects x[N,in], w[in,out]");
    const int64_t N = x->value.dim(0), In = x->value.dim(1), Out = w->value.dim(1);
    if (w->value.dim(0) != In) throw ShapeMismatch("linear: in dims disagree");
    if (b && b->value.numel() && b->value.numel() != Out) throw ShapeMismatch("linear: bias size");
    TensorT<T> out({N, Out});
    const T* xp = x->value.ptr();
    const T* wp = w->value.ptr();
    T* op = out.ptr();
    for (int64_t i = 0; i < N; ++i) {
        T* orow = op + i * Out;
        if (b && b->value.numel())
            for (int64_t o = 0; o < Out; ++o) orow[o] = b->value.data[static_cast<size_t>(o)];
        const T* xrow = xp + i * In;
        for (int64_t k = 0; k < In; ++k) {
            const T xv = xrow[k];
            const T* wrow = wp + k * Out;
            for (int64_t o = 0; o < Out; ++o) orow[o] += xv * wrow[o];
        }
    }
    auto backward = [x, w, b, N, In, Out](Node<T>& n) {
        const T* gp = n.grad.ptr();
        if (x->requires_grad) {
            x->ensure_grad();
            const T* wp2 = w->value.ptr();
            for (int64_t i = 0; i < N; ++i) {
                T* dxrow = x->grad.ptr() + i * In;
                const T* grow = gp + i * Out;
                for (int64_t k = 0; k < In; ++k) {
                    const T* wrow = wp2 + k * Out;
                    T acc = T(0);
                    for (int64_t o = 0; o < Out; ++o) acc += grow[o] * wrow[o];
                    dxrow[k] += acc;
                }
            }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            const T* xp2 = x->value.ptr();
            for (int64_t i = 0; i < N; ++i) {
                const T* xrow = xp2 + i * In;
                const T* grow = gp + i * Out;
                for (int64_t k = 0; k < In; ++k) {
                    T* dwrow = w->grad.ptr() + k * Out;
                    const T xv = xrow[k];
                    for (int64_t o = 0; o < Out; ++o) dwrow[o] += xv * grow[o];
                }
            }
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < N; ++i) {
                const T* grow = gp + i * Out;
                for (int64_t o = 0; o < Out; ++o) b->grad.data[static_cast<size_t>(o)] += grow[o];
            }
        }
    };
    std::vector<Var<T>> parents{x, w};
    if (b) parents.push_back(b);
    return make_node<T>("linear", std::move(out), std::move(parents), backward);
}

// batched matmul over the last two dims; leading dims must match exactly
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa.size() < 2 || sa.size() != sb.size()) throw ShapeMismatch("bmm: rank");
    for (size_t i = 0; i + 2 < sa.size(); ++i)
        if (sa[i] != sb[i]) throw ShapeMismatch("bmm: batch dims");
    const int64_t M = sa[sa.size() - 2], K = sa[sa.size() - 1];
    const int64_t K2 = sb[sb.size() - 2], N = sb[sb.size() - 1];
    if (K != K2) throw ShapeMismatch("bmm: inner dims");
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    std::vector<int64_t> so(sa.begin(), sa.end() - 2);
    so.push_back(M);
    so.push_back(N);
    TensorT<T> out(so);
    const T* ap = a->value.ptr();
    const T* bp = b->value.ptr();
    T* op = out.ptr();
    for (int64_t bt = 0; bt < batch; ++bt) {
        const T* A = ap + bt * M * K;
        const T* Bm = bp + bt * K * N;
        T* O = op + bt * M * N;
        for (int64_t i = 0; i < M; ++i) {
            T* orow = O + i * N;
            for (int64_t j = 0; j < N; ++j) orow[j] = T(0);
            const T* arow = A + i * K;
            for (int64_t k = 0; k < K; ++k) {
                const T av = arow[k];
                const T* brow = Bm + k * N;
                for (int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    }
    auto backward = [a, b, batch, M, K, N](Node<T>& n) {
        const T* gp = n.grad.ptr();
        if (a->requires_grad) {
            a->ensure_grad();
            const T* bp2 = b->value.ptr();
            for (int64_t bt = 0; bt < batch; ++bt) {
                const T* G = gp + bt * M * N;
                const T* Bm = bp2 + bt * K * N;
                T* dA = a->grad.ptr() + bt * M * K;
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t k = 0; k < K; ++k) {
                        const T* grow = G + i * N;
                        const T* brow = Bm + k * N;
                        T acc = T(0);
                        for (int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                        dA[i * K + k] += acc;
                    }
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            const T* ap2 = a->value.ptr();
            for (int64_t bt = 0; bt < batch; ++bt) {
                const T* G = gp + bt * M * N;
                const T* A = ap2 + bt * M * K;
                T* dB = b->grad.ptr() + bt * K * N;
                for (int64_t i = 0; i < M; ++i) {
                    const T* arow = A + i * K;
                    const T* grow = G + i * N;
                    for (int64_t k = 0; k < K; ++k) {
                        const T av = arow[k];
                        T* dbrow = dB + k * N;
                        for (int64_t j = 0; j < N; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        }
    };
    return make_node<T>("bmm", std::move(out), {a, b}, backward);
}

template <typename T>
Var<T> transpose_last2(const Var<T>& a) {
    const auto& s = a->value.shape;
    if (s.size() < 2) throw ShapeMismatch("transpose_last2: rank");
    const int64_t M = s[s.size() - 2], N = s[s.size() - 1];
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < s.size(); ++i) batch *= s[i];
    std::vector<int64_t> so(s.begin(), s.end() - 2);
    so.push_back(N);
    so.push_back(M);
    TensorT<T> out(so);
    const T* ap = a->value.ptr();
    for (int64_t bt = 0; bt < batch; ++bt)
        for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < N; ++j)
                out.data[static_cast<size_t>(bt * M * N + j * M + i)] = ap[bt * M * N + i * N + j];
    return make_node<T>("transpose_last2", std::move(out), {a}, [a, batch, M, N](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const T* gp = n.grad.ptr();
        for (int64_t bt = 0; bt < batch; ++bt)
            for (int64_t i = 0; i < M; ++i)
                for (int64_t j = 0; j < N; ++j)
                    a->grad.data[static_cast<size_t>(bt * M * N + i * N + j)] +=
                        gp[bt * M * N + j * M + i];
    });
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size());
    int64_t acc = 1;
    for (size_t i = shape.size(); i-- > 0;) {
        st[i] = acc;
        acc *= shape[i];
    }
    return st;
}

}  // namespace detail

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int64_t> new_shape) {
    if (TensorT<T>::count(new_shape) != a->value.numel())
        throw ShapeMismatch("reshape: element count changes");
    TensorT<T> out;
    out.shape = std::move(new_shape);
    out.data = a->value.data;
    return make_node<T>("reshape", std::move(out), {a}, [a](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad.data[static_cast<size_t>(i)] += n.grad.data[static_cast<size_t>(i)];
    });
}

template <typename T>
Var<T> permute(const Var<T>& a, std::vector<int> perm) {
    const auto& s = a->value.shape;
    if (perm.size() != s.size()) throw ShapeMismatch("permute: rank");
    std::vector<int64_t> so(s.size());
    for (size_t i = 0; i < perm.size(); ++i) so[i] = s[static_cast<size_t>(perm[i])];
    auto in_strides = detail::strides_of(s);
    auto out_strides = detail::strides_of(so);
    // map[i] = input stride of output axis i
    std::vector<int64_t> map(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) map[i] = in_strides[static_cast<size_t>(perm[i])];
    const int64_t n = a->value.numel();
    TensorT<T> out(so);
    auto src_index = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
    std::vector<int64_t> idx(so.size(), 0);
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t src = 0;
        for (size_t d = 0; d < so.size(); ++d) src += idx[d] * map[d];
        out.data[static_cast<size_t>(flat)] = a->value.data[static_cast<size_t>(src)];
        (*src_index)[static_cast<size_t>(flat)] = src;
        for (size_t d = so.size(); d-- > 0;) {
            if (++idx[d] < so[d]) break;
            idx[d] = 0;
        }
    }
    return make_node<T>("permute", std::move(out), {a}, [a, src_index](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            a->grad.data[static_cast<size_t>((*src_index)[static_cast<size_t>(i)])] +=
                n.grad.data[static_cast<size_t>(i)];
    });
}

// cyclic left-shift along axis 0: out[t] = a[(t + shift) mod T]
template <typename T>
Var<T> roll_axis0(const Var<T>& a, int64_t shift) {
    const int64_t Tn = a->value.dim(0);
    const int64_t row = a->value.numel() / Tn;
    const int64_t s = ((shift % Tn) + Tn) % Tn;
    TensorT<T> out(a->value.shape);
    for (int64_t t = 0; t < Tn; ++t) {
        const int64_t srcr = (t + s) % Tn;
        for (int64_t i = 0; i < row; ++i)
            out.data[static_cast<size_t>(t * row + i)] = a->value.data[static_cast<size_t>(srcr * row + i)];
    }
    return make_node<T>("roll_axis0", std::move(out), {a}, [a, Tn, row, s](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t t = 0; t < Tn; ++t) {
            const int64_t srcr = (t + s) % Tn;
            for (int64_t i = 0; i < row; ++i)
                a->grad.data[static_cast<size_t>(srcr * row + i)] +=
                    n.grad.data[static_cast<size_t>(t * row + i)];
        }
    });
}

// concat along axis 1 of [B,C,L] tensors
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[2])
        throw ShapeMismatch("concat_channels: incompatible " + a->value.shape_str() + " vs " +
                            b->value.shape_str());
    const int64_t B = sa[0], Ca = sa[1], Cb = sb[1], L = sa[2];
    TensorT<T> out({B, Ca + Cb, L});
    for (int64_t bi = 0; bi < B; ++bi) {
        std::copy_n(a->value.ptr() + bi * Ca * L, Ca * L, out.ptr() + bi * (Ca + Cb) * L);
        std::copy_n(b->value.ptr() + bi * Cb * L, Cb * L, out.ptr() + bi * (Ca + Cb) * L + Ca * L);
    }
    return make_node<T>("concat_channels", std::move(out), {a, b}, [a, b, B, Ca, Cb, L](Node<T>& n) {
        const T* gp = n.grad.ptr();
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t i = 0; i < Ca * L; ++i)
                    a->grad.data[static_cast<size_t>(bi * Ca * L + i)] += gp[bi * (Ca + Cb) * L + i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t i = 0; i < Cb * L; ++i)
                    b->grad.data[static_cast<size_t>(bi * Cb * L + i)] +=
                        gp[bi * (Ca + Cb) * L + Ca * L + i];
        }
    });
}

// stacks 1-D vars of equal length into [B,C]
template <typename T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
    if (rows.empty()) throw ShapeMismatch("stack_rows: empty");
    const int64_t C = rows[0]->value.numel();
    const int64_t B = static_cast<int64_t>(rows.size());
    TensorT<T> out({B, C});
    for (int64_t i = 0; i < B; ++i) {
        if (rows[static_cast<size_t>(i)]->value.numel() != C)
            throw ShapeMismatch("stack_rows: ragged rows");
        std::copy_n(rows[static_cast<size_t>(i)]->value.ptr(), C, out.ptr() + i * C);
    }
    std::vector<Var<T>> parents(rows.begin(), rows.end());
    return make_node<T>("stack_rows", std::move(out), std::move(parents), [rows, B, C](Node<T>& n) {
        for (int64_t i = 0; i < B; ++i) {
            const auto& r = rows[static_cast<size_t>(i)];
            if (!r->requires_grad) continue;
            r->ensure_grad();
            for (int64_t j = 0; j < C; ++j)
                r->grad.data[static_cast<size_t>(j)] += n.grad.data[static_cast<size_t>(i * C + j)];
        }
    });
}

// mean over axis 0 of [T,D] -> [D]
template <typename T>
Var<T> mean_axis0(const Var<T>& a) {
    if (a->value.rank() != 2) throw ShapeMismatch("mean_axis0 expects [T,D]");
    const int64_t Tn = a->value.dim(0), D = a->value.dim(1);
    TensorT<T> out({D});
    for (int64_t t = 0; t < Tn; ++t)
        for (int64_t d = 0; d < D; ++d) out.data[static_cast<size_t>(d)] += a->value.data[static_cast<size_t>(t * D + d)];
    for (int64_t d = 0; d < D; ++d) out.data[static_cast<size_t>(d)] /= static_cast<T>(Tn);
    return make_node<T>("mean_axis0", std::move(out), {a}, [a, Tn, D](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t t = 0; t < Tn; ++t)
            for (int64_t d = 0; d < D; ++d)
                a->grad.data[static_cast<size_t>(t * D + d)] +=
                    n.grad.data[static_cast<size_t>(d)] / static_cast<T>(Tn);
    });
}

// ---------------------------------------------------------------------------
// softmax / attention
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a) {
    const int64_t D = a->value.shape.back();
    const int64_t rows = a->value.numel() / D;
    TensorT<T> out(a->value.shape);
    const T* ap = a->value.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xrow = ap + r * D;
        T* orow = out.ptr() + r * D;
        T mx = xrow[0];
        for (int64_t i = 1; i < D; ++i) mx = std::max(mx, xrow[i]);
        double s = 0.0;
        for (int64_t i = 0; i < D; ++i) {
            double e = std::exp(static_cast<double>(xrow[i] - mx));
            orow[i] = static_cast<T>(e);
            s += e;
        }
        for (int64_t i = 0; i < D; ++i) orow[i] = static_cast<T>(static_cast<double>(orow[i]) / s);
    }
    auto y = std::make_shared<TensorT<T>>(out);
    return make_node<T>("softmax", std::move(out), {a}, [a, y, rows, D](Node<T>& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const T* gp = n.grad.ptr();
        const T* yp = y->ptr();
        for (int64_t r = 0; r < rows; ++r) {
            const T* grow = gp + r * D;
            const T* yrow = yp + r * D;
            double dot = 0.0;
            for (int64_t i = 0; i < D; ++i) dot += static_cast<double>(grow[i]) * static_cast<double>(yrow[i]);
            T* dx = a->grad.ptr() + r * D;
            for (int64_t i = 0; i < D; ++i)
                dx[i] += static_cast<T>(static_cast<double>(yrow[i]) *
                                        (static_cast<double>(grow[i]) - dot));
        }
    });
}

// scores [B,H,T,U] + bias [H,T,U], broadcast over the batch axis; the bias
// participates in the graph (used for learned relative position terms).
template <typename T>
Var<T> add_head_bias(const Var<T>& scores, const Var<T>& bias) {
    const auto& s = scores->value.shape;
    const auto& sb = bias->value.shape;
    if (s.size() != 4 || sb.size() != 3 || s[1] != sb[0] || s[2] != sb[1] || s[3] != sb[2])
        throw ShapeMismatch("add_head_bias: " + scores->value.shape_str() + " vs " +
                            bias->value.shape_str());
    const int64_t B = s[0], rest = s[1] * s[2] * s[3];
    TensorT<T> out(s);
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < rest; ++i)
            out.data[static_cast<size_t>(bi * rest + i)] =
                scores->value.data[static_cast<size_t>(bi * rest + i)] + bias->value.data[static_cast<size_t>(i)];
    return make_node<T>("add_head_bias", std::move(out), {scores, bias}, [scores, bias, B, rest](Node<T>& n) {
        if (scores->requires_grad) detail::accumulate(scores, n.grad);
        if (bias->requires_grad) {
            bias->ensure_grad();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t i = 0; i < rest; ++i)
                    bias->grad.data[static_cast<size_t>(i)] += n.grad.data[static_cast<size_t>(bi * rest + i)];
        }
    });
}

// scores [B,H,T,U] + constant additive mask of shape [T,U] (broadcast over
// batch and heads) or [B,T,U] (broadcast over heads). No gradient flows to
// the mask.
template <typename T>
Var<T> add_const_mask(const Var<T>& scores, const TensorT<T>& mask) {
    const auto& s = scores->value.shape;
    if (s.size() != 4) throw ShapeMismatch("add_const_mask: scores must be [B,H,T,U]");
    const int64_t B = s[0], H = s[1], Tt = s[2], U = s[3];
    TensorT<T> out = scores->value;
    if (mask.rank() == 2 && mask.dim(0) == Tt && mask.dim(1) == U) {
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t i = 0; i < Tt * U; ++i)
                    out.data[static_cast<size_t>(((bi * H + h) * Tt * U) + i)] += mask.data[static_cast<size_t>(i)];
    } else if (mask.rank() == 3 && mask.dim(0) == B && mask.dim(1) == Tt && mask.dim(2) == U) {
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t i = 0; i < Tt * U; ++i)
                    out.data[static_cast<size_t>(((bi * H + h) * Tt * U) + i)] +=
                        mask.data[static_cast<size_t>(bi * Tt * U + i)];
    } else {
        throw ShapeMismatch("add_const_mask: mask " + mask.shape_str());
    }
    return make_node<T>("add_const_mask", std::move(out), {scores},
                        [scores](Node<T>& n) { detail::accumulate(scores, n.grad); });
}

// softmax(q k^T / sqrt(d) [+ bias] [+ mask]) v for q,k,v [B,H,T,d].
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const TensorT<T>* additive_mask = nullptr, const Var<T>& head_bias = nullptr) {
    if (q->value.rank() != 4) throw ShapeMismatch("attention expects [B,H,T,d]");
    if (!q->value.same_shape(k->value) || !q->value.same_shape(v->value))
        throw ShapeMismatch("attention: q/k/v shapes differ");
    const int64_t d = q->value.shape.back();
    auto scores = bmm(q, transpose_last2(k));
    scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    if (head_bias) scores = add_head_bias(scores, head_bias);
    if (additive_mask) scores = add_const_mask(scores, *additive_mask);
    auto attn = softmax_lastdim(scores);
    return bmm(attn, v);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean squared error between a prediction and a constant target. When a 0/1
// mask of the same shape is given, both the sum and the element count range
// over mask==1 positions only.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const TensorT<T>& target, const TensorT<T>* mask = nullptr) {
    if (!pred->value.same_shape(target))
        throw ShapeMismatch("mse_loss: " + pred->value.shape_str() + " vs " + target.shape_str());
    if (mask && !pred->value.same_shape(*mask)) throw ShapeMismatch("mse_loss: mask shape");
    const int64_t n = pred->value.numel();
    double count = 0.0, sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double m = mask ? static_cast<double>(mask->data[static_cast<size_t>(i)]) : 1.0;
        if (m == 0.0) continue;
        const double d =
            static_cast<double>(pred->value.data[static_cast<size_t>(i)]) - static_cast<double>(target.data[static_cast<size_t>(i)]);
        sum += m * d * d;
        count += m;
    }
    if (count <= 0.0) throw ShapeMismatch("mse_loss: empty mask");
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(sum / count));
    auto tgt = std::make_shared<TensorT<T>>(target);
    std::shared_ptr<TensorT<T>> msk = mask ? std::make_shared<TensorT<T>>(*mask) : nullptr;
    return make_node<T>("mse_loss", std::move(out), {pred}, [pred, tgt, msk, n, count](Node<T>& nd) {
        if (!pred->requires_grad) return;
        pred->ensure_grad();
        const T g = nd.grad.data[0];
        for (int64_t i = 0; i < n; ++i) {
            const T m = msk ? msk->data[static_cast<size_t>(i)] : T(1);
            if (m == T(0)) continue;
            pred->grad.data[static_cast<size_t>(i)] +=
                g * static_cast<T>(2.0 / count) * m *
                (pred->value.data[static_cast<size_t>(i)] - tgt->data[static_cast<size_t>(i)]);
        }
    });
}

// sum(x * w) against a constant weight tensor; reduces any op output to a
// scalar so its gradient can be checked.
template <typename T>
Var<T> weighted_sum(const Var<T>& a, const TensorT<T>& w) {
    if (!a->value.same_shape(w)) throw ShapeMismatch("weighted_sum: weight shape");
    double s = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i)
        s += static_cast<double>(a->value.data[static_cast<size_t>(i)]) *
             static_cast<double>(w.data[static_cast<size_t>(i)]);
    auto wc = std::make_shared<TensorT<T>>(w);
    return make_node<T>("weighted_sum", TensorT<T>::scalar(static_cast<T>(s)), {a},
                        [a, wc](Node<T>& n) {
                            if (!a->requires_grad) return;
                            a->ensure_grad();
                            const T g = n.grad.data[0];
                            for (int64_t i = 0; i < a->value.numel(); ++i)
                                a->grad.data[static_cast<size_t>(i)] += g * wc->data[static_cast<size_t>(i)];
                        });
}

// Mean over the batch of -log softmax(logits)[label]; logits [B,C].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    if (logits->value.rank() != 2) throw ShapeMismatch("cross_entropy expects [B,C]");
    const int64_t B = logits->value.dim(0), C = logits->value.dim(1);
    if (C < 2) throw ShapeMismatch("cross_entropy: C must be >= 2");
    if (static_cast<int64_t>(labels.size()) != B) throw ShapeMismatch("cross_entropy: label count");
    for (int y : labels)
        if (y < 0 || y >= C)
            throw ClassOutOfRange("label " + std::to_string(y) + " not in [0," + std::to_string(C) + ")");
    auto prob = std::make_shared<TensorT<T>>(std::vector<int64_t>{B, C});
    double loss = 0.0;
    for (int64_t bi = 0; bi < B; ++bi) {
        const T* row = logits->value.ptr() + bi * C;
        T mx = row[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double s = 0.0;
        for (int64_t c = 0; c < C; ++c) s += std::exp(static_cast<double>(row[c] - mx));
        const double lse = std::log(s) + static_cast<double>(mx);
        for (int64_t c = 0; c < C; ++c)
            prob->data[static_cast<size_t>(bi * C + c)] =
                static_cast<T>(std::exp(static_cast<double>(row[c]) - lse));
        loss += lse - static_cast<double>(row[labels[static_cast<size_t>(bi)]]);
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(loss / static_cast<double>(B)));
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    return make_node<T>("cross_entropy", std::move(out), {logits}, [logits, prob, labels_copy, B, C](Node<T>& nd) {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        const T g = nd.grad.data[0];
        for (int64_t bi = 0; bi < B; ++bi) {
            T* dst = logits->grad.ptr() + bi * C;
            const T* p = prob->ptr() + bi * C;
            for (int64_t c = 0; c < C; ++c) dst[c] += g * p[c] / static_cast<T>(B);
            dst[(*labels_copy)[static_cast<size_t>(bi)]] -= g / static_cast<T>(B);
        }
    });
}

}  // namespace csense::nn
