#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace umurl {

// Reverse-mode tape. Operations append nodes in evaluation order, which is
// by construction a topological order, so backward() is a single reverse
// sweep. A tape lives for one forward/backward round and is confined to one
// thread; parameters persist outside it and re-enter as leaves each round.

template <typename T>
class Tape;

template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::int32_t index) : tape_(tape), index_(index) {}

    Tape<T>* tape() const { return tape_; }
    std::int32_t index() const { return index_; }
    bool valid() const { return tape_ != nullptr; }

    const Shape& shape() const;
    const std::vector<T>& value() const;
    // Gradient accumulated by backward(); zeros if the value was never
    // reached.
    const std::vector<T>& grad() const;
    bool requires_grad() const;
    std::size_t numel() const { return value().size(); }
    T scalar() const {
        require(numel() == 1, "Var::scalar: value is not a scalar");
        return value()[0];
    }

private:
    Tape<T>* tape_ = nullptr;
    std::int32_t index_ = -1;
};

template <typename T>
class Tape {
public:
    // backprop receives the index of its own output node.
    using Backprop = std::function<void(std::int32_t)>;

    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;
        Backprop backprop;
        const char* op = "leaf";
        bool requires_grad = false;
        bool grad_live = false;
    };

    Tape() { nodes_.reserve(1024); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(TensorData<T> t, bool requires_grad) {
        return record(std::move(t.shape), std::move(t.data), requires_grad, "leaf", {});
    }

    Var<T> constant(TensorData<T> t) { return leaf(std::move(t), false); }

    Var<T> record(Shape shape, std::vector<T> value, bool requires_grad, const char* op,
                  Backprop backprop) {
        require(value.size() == shape_numel(shape), "Tape::record: shape/value mismatch");
        for (T v : value) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw NumericError(std::string("non-finite value produced by op '") + op + "'");
            }
        }
        Node n;
        n.shape = std::move(shape);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.op = op;
        if (requires_grad) {
            n.backprop = std::move(backprop);
        }
        nodes_.push_back(std::move(n));
        return Var<T>(this, static_cast<std::int32_t>(nodes_.size() - 1));
    }

    Node& node(std::int32_t i) { return nodes_[static_cast<std::size_t>(i)]; }
    const Node& node(std::int32_t i) const { return nodes_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return nodes_.size(); }

    // Accumulation buffer for node i, allocated on first touch.
    std::vector<T>& grad_acc(std::int32_t i) {
        Node& n = node(i);
        if (!n.grad_live) {
            n.grad.assign(n.value.size(), T{0});
            n.grad_live = true;
        }
        return n.grad;
    }

    const std::vector<T>& grad_of(std::int32_t i) {
        return grad_acc(i);  // zeros when the node was never reached
    }

    void backward(const Var<T>& root) {
        require(root.tape() == this, "Tape::backward: root from another tape");
        require(root.numel() == 1, "Tape::backward: root must be a scalar");
        require(!backward_done_, "Tape::backward: one backward pass per tape");
        backward_done_ = true;
        if (!node(root.index()).requires_grad) {
            return;  // nothing on the tape needs a gradient
        }
        grad_acc(root.index())[0] = T{1};
        for (std::int32_t i = root.index(); i >= 0; --i) {
            Node& n = node(i);
            if (!n.requires_grad || !n.grad_live || !n.backprop) {
                continue;
            }
            n.backprop(i);
        }
        for (const Node& n : nodes_) {
            if (!n.grad_live) {
                continue;
            }
            for (T g : n.grad) {
                if (!std::isfinite(static_cast<double>(g))) {
                    throw NumericError(std::string("non-finite gradient at op '") + n.op + "'");
                }
            }
        }
    }

private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

template <typename T>
const Shape& Var<T>::shape() const {
    return tape_->node(index_).shape;
}
template <typename T>
const std::vector<T>& Var<T>::value() const {
    return tape_->node(index_).value;
}
template <typename T>
const std::vector<T>& Var<T>::grad() const {
    return tape_->grad_of(index_);
}
template <typename T>
bool Var<T>::requires_grad() const {
    return tape_->node(index_).requires_grad;
}

namespace detail {

template <typename T>
Tape<T>* same_tape(const Var<T>& a, const Var<T>& b) {
    require(a.tape() == b.tape(), "operands recorded on different tapes");
    return a.tape();
}

inline void check(bool cond, const char* msg) {
    require(cond, msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar-constant ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    Tape<T>* t = detail::same_tape(a, b);
    detail::check(a.shape() == b.shape(), "add: shape mismatch");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] + b.value()[i];
    }
    const std::int32_t ia = a.index(), ib = b.index();
    return t->record(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(), "add",
                     [t, ia, ib](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         if (t->node(ia).requires_grad) {
                             std::vector<T>& ga = t->grad_acc(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         }
                         if (t->node(ib).requires_grad) {
                             std::vector<T>& gb = t->grad_acc(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                         }
                     });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    Tape<T>* t = detail::same_tape(a, b);
    detail::check(a.shape() == b.shape(), "sub: shape mismatch");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] - b.value()[i];
    }
    const std::int32_t ia = a.index(), ib = b.index();
    return t->record(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(), "sub",
                     [t, ia, ib](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         if (t->node(ia).requires_grad) {
                             std::vector<T>& ga = t->grad_acc(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         }
                         if (t->node(ib).requires_grad) {
                             std::vector<T>& gb = t->grad_acc(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                         }
                     });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    Tape<T>* t = detail::same_tape(a, b);
    detail::check(a.shape() == b.shape(), "mul: shape mismatch");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] * b.value()[i];
    }
    const std::int32_t ia = a.index(), ib = b.index();
    return t->record(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(), "mul",
                     [t, ia, ib](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& av = t->node(ia).value;
                         const std::vector<T>& bv = t->node(ib).value;
                         if (t->node(ia).requires_grad) {
                             std::vector<T>& ga = t->grad_acc(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                         }
                         if (t->node(ib).requires_grad) {
                             std::vector<T>& gb = t->grad_acc(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                         }
                     });
}

template <typename T>
Var<T> scale(const Var<T>& a, double c) {
    Tape<T>* t = a.tape();
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<T>(a.value()[i] * c);
    }
    const std::int32_t ia = a.index();
    return t->record(a.shape(), std::move(out), a.requires_grad(), "scale",
                     [t, ia, c](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] += static_cast<T>(g[i] * c);
                         }
                     });
}

template <typename T>
Var<T> add_const(const Var<T>& a, double c) {
    Tape<T>* t = a.tape();
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<T>(a.value()[i] + c);
    }
    const std::int32_t ia = a.index();
    return t->record(a.shape(), std::move(out), a.requires_grad(), "add_const",
                     [t, ia](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

// Elementwise product with a fixed mask (no gradient into the mask).
template <typename T>
Var<T> mul_mask(const Var<T>& a, const TensorData<T>& mask) {
    Tape<T>* t = a.tape();
    detail::check(a.shape() == mask.shape, "mul_mask: shape mismatch");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] * mask.data[i];
    }
    const std::int32_t ia = a.index();
    std::vector<T> m = mask.data;
    return t->record(a.shape(), std::move(out), a.requires_grad(), "mul_mask",
                     [t, ia, m = std::move(m)](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
                     });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tape<T>* t = a.tape();
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] > T{0} ? a.value()[i] : T{0};
    }
    const std::int32_t ia = a.index();
    // Subgradient 0 on the flat branch and at the kink.
    return t->record(a.shape(), std::move(out), a.requires_grad(), "relu",
                     [t, ia](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& av = t->node(ia).value;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             if (av[i] > T{0}) ga[i] += g[i];
                         }
                     });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    Tape<T>* t = a.tape();
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] * a.value()[i];
    }
    const std::int32_t ia = a.index();
    return t->record(a.shape(), std::move(out), a.requires_grad(), "square",
                     [t, ia](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& av = t->node(ia).value;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] += T{2} * g[i] * av[i];
                         }
                     });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
    Tape<T>* t = a.tape();
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::sqrt(a.value()[i]);
    }
    const std::int32_t ia = a.index();
    // d/dx sqrt = 1/(2 sqrt); an exact zero input yields an infinite
    // gradient, surfaced as a numeric error by the backward scan.
    return t->record(a.shape(), std::move(out), a.requires_grad(), "sqrt",
                     [t, ia](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& yv = t->node(io).value;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i] / (T{2} * yv[i]);
                         }
                     });
}

// y = 1 / sqrt(x + shift); dy/dx = -y^3 / 2.
template <typename T>
Var<T> rsqrt_shift(const Var<T>& a, double shift) {
    Tape<T>* t = a.tape();
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = T{1} / std::sqrt(a.value()[i] + static_cast<T>(shift));
    }
    const std::int32_t ia = a.index();
    return t->record(a.shape(), std::move(out), a.requires_grad(), "rsqrt_shift",
                     [t, ia](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& yv = t->node(io).value;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] -= g[i] * yv[i] * yv[i] * yv[i] / T{2};
                         }
                     });
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
    Tape<T>* t = detail::same_tape(a, b);
    detail::check(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 operands required");
    const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
    const std::size_t ka = trans_a ? a.shape()[0] : a.shape()[1];
    const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
    const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
    detail::check(ka == kb, "matmul: inner dimensions disagree");
    std::vector<T> out(m * n);
    gemm(trans_a, trans_b, m, n, ka, a.value().data(), b.value().data(), out.data(), false);
    const std::int32_t ia = a.index(), ib = b.index();
    return t->record({m, n}, std::move(out), a.requires_grad() || b.requires_grad(), "matmul",
                     [t, ia, ib, trans_a, trans_b, m, n, ka](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& av = t->node(ia).value;
                         const std::vector<T>& bv = t->node(ib).value;
                         if (t->node(ia).requires_grad) {
                             std::vector<T>& ga = t->grad_acc(ia);
                             if (!trans_a) {
                                 // dA = dC * op(B)^T
                                 gemm(false, !trans_b, m, ka, n, g.data(), bv.data(), ga.data(),
                                      true);
                             } else {
                                 // A used transposed: dA = op(B) * dC^T
                                 gemm(trans_b, true, ka, m, n, bv.data(), g.data(), ga.data(),
                                      true);
                             }
                         }
                         if (t->node(ib).requires_grad) {
                             std::vector<T>& gb = t->grad_acc(ib);
                             if (!trans_b) {
                                 // dB = op(A)^T * dC
                                 gemm(!trans_a, false, ka, n, m, av.data(), g.data(), gb.data(),
                                      true);
                             } else {
                                 // B used transposed: dB = dC^T * op(A)
                                 gemm(true, trans_a, n, ka, m, g.data(), av.data(), gb.data(),
                                      true);
                             }
                         }
                     });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    Tape<T>* t = a.tape();
    detail::check(a.shape().size() == 2, "transpose: rank-2 operand required");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = a.value()[i * n + j];
        }
    }
    const std::int32_t ia = a.index();
    return t->record({n, m}, std::move(out), a.requires_grad(), "transpose",
                     [t, ia, m, n](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < n; ++j) {
                                 ga[i * n + j] += g[j * m + i];
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// broadcast ops: vector along rows (one entry per column) or along columns
// (one entry per row)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_rowvec(const Var<T>& m, const Var<T>& v, const char* op) {
    check(m.shape().size() == 2 && v.shape().size() == 1, "rowvec op: ranks must be (2, 1)");
    check(m.shape()[1] == v.shape()[0], (std::string(op) + ": width mismatch").c_str());
}

template <typename T>
void check_colvec(const Var<T>& m, const Var<T>& v, const char* op) {
    check(m.shape().size() == 2 && v.shape().size() == 1, "colvec op: ranks must be (2, 1)");
    check(m.shape()[0] == v.shape()[0], (std::string(op) + ": height mismatch").c_str());
}

}  // namespace detail

template <typename T>
Var<T> add_rowvec(const Var<T>& m, const Var<T>& v) {
    Tape<T>* t = detail::same_tape(m, v);
    detail::check_rowvec(m, v, "add_rowvec");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = m.value()[i * cols + j] + v.value()[j];
        }
    }
    const std::int32_t im = m.index(), iv = v.index();
    return t->record(m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                     "add_rowvec", [t, im, iv, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         if (t->node(im).requires_grad) {
                             std::vector<T>& gm = t->grad_acc(im);
                             for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                         }
                         if (t->node(iv).requires_grad) {
                             std::vector<T>& gv = t->grad_acc(iv);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     gv[j] += g[i * cols + j];
                                 }
                             }
                         }
                     });
}

template <typename T>
Var<T> sub_rowvec(const Var<T>& m, const Var<T>& v) {
    Tape<T>* t = detail::same_tape(m, v);
    detail::check_rowvec(m, v, "sub_rowvec");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = m.value()[i * cols + j] - v.value()[j];
        }
    }
    const std::int32_t im = m.index(), iv = v.index();
    return t->record(m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                     "sub_rowvec", [t, im, iv, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         if (t->node(im).requires_grad) {
                             std::vector<T>& gm = t->grad_acc(im);
                             for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                         }
                         if (t->node(iv).requires_grad) {
                             std::vector<T>& gv = t->grad_acc(iv);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     gv[j] -= g[i * cols + j];
                                 }
                             }
                         }
                     });
}

template <typename T>
Var<T> mul_rowvec(const Var<T>& m, const Var<T>& v) {
    Tape<T>* t = detail::same_tape(m, v);
    detail::check_rowvec(m, v, "mul_rowvec");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = m.value()[i * cols + j] * v.value()[j];
        }
    }
    const std::int32_t im = m.index(), iv = v.index();
    return t->record(m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                     "mul_rowvec", [t, im, iv, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& mv = t->node(im).value;
                         const std::vector<T>& vv = t->node(iv).value;
                         if (t->node(im).requires_grad) {
                             std::vector<T>& gm = t->grad_acc(im);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     gm[i * cols + j] += g[i * cols + j] * vv[j];
                                 }
                             }
                         }
                         if (t->node(iv).requires_grad) {
                             std::vector<T>& gv = t->grad_acc(iv);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     gv[j] += g[i * cols + j] * mv[i * cols + j];
                                 }
                             }
                         }
                     });
}

template <typename T>
Var<T> sub_colvec(const Var<T>& m, const Var<T>& v) {
    Tape<T>* t = detail::same_tape(m, v);
    detail::check_colvec(m, v, "sub_colvec");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = m.value()[i * cols + j] - v.value()[i];
        }
    }
    const std::int32_t im = m.index(), iv = v.index();
    return t->record(m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                     "sub_colvec", [t, im, iv, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         if (t->node(im).requires_grad) {
                             std::vector<T>& gm = t->grad_acc(im);
                             for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                         }
                         if (t->node(iv).requires_grad) {
                             std::vector<T>& gv = t->grad_acc(iv);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     gv[i] -= g[i * cols + j];
                                 }
                             }
                         }
                     });
}

template <typename T>
Var<T> mul_colvec(const Var<T>& m, const Var<T>& v) {
    Tape<T>* t = detail::same_tape(m, v);
    detail::check_colvec(m, v, "mul_colvec");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = m.value()[i * cols + j] * v.value()[i];
        }
    }
    const std::int32_t im = m.index(), iv = v.index();
    return t->record(m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                     "mul_colvec", [t, im, iv, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& mv = t->node(im).value;
                         const std::vector<T>& vv = t->node(iv).value;
                         if (t->node(im).requires_grad) {
                             std::vector<T>& gm = t->grad_acc(im);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     gm[i * cols + j] += g[i * cols + j] * vv[i];
                                 }
                             }
                         }
                         if (t->node(iv).requires_grad) {
                             std::vector<T>& gv = t->grad_acc(iv);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     gv[i] += g[i * cols + j] * mv[i * cols + j];
                                 }
                             }
                         }
                     });
}

// Multiply a matrix by a tape scalar (shape {1}).
template <typename T>
Var<T> mul_scalar(const Var<T>& m, const Var<T>& s) {
    Tape<T>* t = detail::same_tape(m, s);
    detail::check(s.numel() == 1, "mul_scalar: scalar operand required");
    const T sv = s.value()[0];
    std::vector<T> out(m.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = m.value()[i] * sv;
    }
    const std::int32_t im = m.index(), is = s.index();
    return t->record(m.shape(), std::move(out), m.requires_grad() || s.requires_grad(),
                     "mul_scalar", [t, im, is](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& mv = t->node(im).value;
                         const T sval = t->node(is).value[0];
                         if (t->node(im).requires_grad) {
                             std::vector<T>& gm = t->grad_acc(im);
                             for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i] * sval;
                         }
                         if (t->node(is).requires_grad) {
                             T acc{0};
                             for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * mv[i];
                             t->grad_acc(is)[0] += acc;
                         }
                     });
}

// Element i of a rank-1 value as a tape scalar.
template <typename T>
Var<T> element(const Var<T>& v, std::size_t i) {
    Tape<T>* t = v.tape();
    detail::check(i < v.numel(), "element: index out of range");
    const std::int32_t iv = v.index();
    return t->record({1}, {v.value()[i]}, v.requires_grad(), "element",
                     [t, iv, i](std::int32_t io) {
                         t->grad_acc(iv)[i] += t->node(io).grad[0];
                     });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

// Mean over rows: [M, N] -> [N].
template <typename T>
Var<T> mean_rows(const Var<T>& a) {
    Tape<T>* t = a.tape();
    detail::check(a.shape().size() == 2, "mean_rows: rank-2 operand required");
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    std::vector<T> out(cols, T{0});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[j] += a.value()[i * cols + j];
        }
    }
    for (T& x : out) {
        x /= static_cast<T>(rows);
    }
    const std::int32_t ia = a.index();
    return t->record({cols}, std::move(out), a.requires_grad(), "mean_rows",
                     [t, ia, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         std::vector<T>& ga = t->grad_acc(ia);
                         const T inv = T{1} / static_cast<T>(rows);
                         for (std::size_t i = 0; i < rows; ++i) {
                             for (std::size_t j = 0; j < cols; ++j) {
                                 ga[i * cols + j] += g[j] * inv;
                             }
                         }
                     });
}

// Mean over columns: [M, N] -> [M].
template <typename T>
Var<T> mean_cols(const Var<T>& a) {
    Tape<T>* t = a.tape();
    detail::check(a.shape().size() == 2, "mean_cols: rank-2 operand required");
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    std::vector<T> out(rows, T{0});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[i] += a.value()[i * cols + j];
        }
        out[i] /= static_cast<T>(cols);
    }
    const std::int32_t ia = a.index();
    return t->record({rows}, std::move(out), a.requires_grad(), "mean_cols",
                     [t, ia, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         std::vector<T>& ga = t->grad_acc(ia);
                         const T inv = T{1} / static_cast<T>(cols);
                         for (std::size_t i = 0; i < rows; ++i) {
                             for (std::size_t j = 0; j < cols; ++j) {
                                 ga[i * cols + j] += g[i] * inv;
                             }
                         }
                     });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    Tape<T>* t = a.tape();
    T acc{0};
    for (T v : a.value()) {
        acc += v;
    }
    const std::int32_t ia = a.index();
    return t->record({1}, {acc}, a.requires_grad(), "sum_all", [t, ia](std::int32_t io) {
        const T g = t->node(io).grad[0];
        std::vector<T>& ga = t->grad_acc(ia);
        for (T& x : ga) {
            x += g;
        }
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

// Concatenate rank-2 values along columns; all must share a row count.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    detail::check(!parts.empty(), "concat_cols: no operands");
    Tape<T>* t = parts[0].tape();
    const std::size_t rows = parts[0].shape()[0];
    std::size_t total = 0;
    bool rg = false;
    for (const Var<T>& p : parts) {
        detail::check(p.tape() == t, "concat_cols: operands on different tapes");
        detail::check(p.shape().size() == 2 && p.shape()[0] == rows,
                      "concat_cols: row counts disagree");
        total += p.shape()[1];
        rg = rg || p.requires_grad();
    }
    std::vector<T> out(rows * total);
    std::size_t off = 0;
    std::vector<std::int32_t> idx;
    std::vector<std::size_t> widths;
    for (const Var<T>& p : parts) {
        const std::size_t w = p.shape()[1];
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy_n(p.value().data() + i * w, w, out.data() + i * total + off);
        }
        idx.push_back(p.index());
        widths.push_back(w);
        off += w;
    }
    return t->record({rows, total}, std::move(out), rg, "concat_cols",
                     [t, idx, widths, rows, total](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         std::size_t off2 = 0;
                         for (std::size_t p = 0; p < idx.size(); ++p) {
                             const std::size_t w = widths[p];
                             if (t->node(idx[p]).requires_grad) {
                                 std::vector<T>& gp = t->grad_acc(idx[p]);
                                 for (std::size_t i = 0; i < rows; ++i) {
                                     for (std::size_t j = 0; j < w; ++j) {
                                         gp[i * w + j] += g[i * total + off2 + j];
                                     }
                                 }
                             }
                             off2 += w;
                         }
                     });
}

// Stack rank-1 values as the rows of a rank-2 result.
template <typename T>
Var<T> stack_rows(const std::vector<Var<T>>& parts) {
    detail::check(!parts.empty(), "stack_rows: no operands");
    Tape<T>* t = parts[0].tape();
    const std::size_t cols = parts[0].numel();
    bool rg = false;
    std::vector<std::int32_t> idx;
    std::vector<T> out;
    out.reserve(parts.size() * cols);
    for (const Var<T>& p : parts) {
        detail::check(p.tape() == t, "stack_rows: operands on different tapes");
        detail::check(p.shape().size() == 1 && p.numel() == cols,
                      "stack_rows: rank-1 operands of equal length required");
        out.insert(out.end(), p.value().begin(), p.value().end());
        idx.push_back(p.index());
        rg = rg || p.requires_grad();
    }
    return t->record({parts.size(), cols}, std::move(out), rg, "stack_rows",
                     [t, idx, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         for (std::size_t p = 0; p < idx.size(); ++p) {
                             if (!t->node(idx[p]).requires_grad) {
                                 continue;
                             }
                             std::vector<T>& gp = t->grad_acc(idx[p]);
                             for (std::size_t j = 0; j < cols; ++j) {
                                 gp[j] += g[p * cols + j];
                             }
                         }
                     });
}

// Split a [B*R, C] value into B consecutive [R, C] blocks.
template <typename T>
std::vector<Var<T>> split_rows(const Var<T>& a, std::size_t block_rows) {
    Tape<T>* t = a.tape();
    detail::check(a.shape().size() == 2, "split_rows: rank-2 operand required");
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    detail::check(block_rows > 0 && rows % block_rows == 0,
                  "split_rows: row count not divisible by block size");
    const std::size_t blocks = rows / block_rows;
    std::vector<Var<T>> out;
    out.reserve(blocks);
    const std::int32_t ia = a.index();
    for (std::size_t b = 0; b < blocks; ++b) {
        std::vector<T> v(a.value().begin() + static_cast<std::ptrdiff_t>(b * block_rows * cols),
                         a.value().begin() +
                             static_cast<std::ptrdiff_t>((b + 1) * block_rows * cols));
        out.push_back(t->record({block_rows, cols}, std::move(v), a.requires_grad(), "split_rows",
                                [t, ia, b, block_rows, cols](std::int32_t io) {
                                    const std::vector<T>& g = t->node(io).grad;
                                    std::vector<T>& ga = t->grad_acc(ia);
                                    const std::size_t base = b * block_rows * cols;
                                    for (std::size_t i = 0; i < g.size(); ++i) {
                                        ga[base + i] += g[i];
                                    }
                                }));
    }
    return out;
}

// Add p (shape [R, C]) to each of the B consecutive [R, C] blocks of a.
template <typename T>
Var<T> add_tile_rows(const Var<T>& a, const Var<T>& p) {
    Tape<T>* t = detail::same_tape(a, p);
    detail::check(a.shape().size() == 2 && p.shape().size() == 2, "add_tile_rows: rank-2 required");
    detail::check(a.shape()[1] == p.shape()[1], "add_tile_rows: widths disagree");
    const std::size_t tile = p.shape()[0];
    detail::check(tile > 0 && a.shape()[0] % tile == 0,
                  "add_tile_rows: row count not divisible by tile");
    const std::size_t cols = a.shape()[1];
    const std::size_t blocks = a.shape()[0] / tile;
    std::vector<T> out(a.numel());
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t base = b * tile * cols;
        for (std::size_t i = 0; i < tile * cols; ++i) {
            out[base + i] = a.value()[base + i] + p.value()[i];
        }
    }
    const std::int32_t ia = a.index(), ip = p.index();
    return t->record(a.shape(), std::move(out), a.requires_grad() || p.requires_grad(),
                     "add_tile_rows", [t, ia, ip, blocks, tile, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         if (t->node(ia).requires_grad) {
                             std::vector<T>& ga = t->grad_acc(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         }
                         if (t->node(ip).requires_grad) {
                             std::vector<T>& gp = t->grad_acc(ip);
                             for (std::size_t b = 0; b < blocks; ++b) {
                                 const std::size_t base = b * tile * cols;
                                 for (std::size_t i = 0; i < tile * cols; ++i) {
                                     gp[i] += g[base + i];
                                 }
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// softmax and classification
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
    Tape<T>* t = a.tape();
    detail::check(a.shape().size() == 2, "softmax_rows: rank-2 operand required");
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const T* row = a.value().data() + i * cols;
        T mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) {
            mx = std::max(mx, row[j]);
        }
        T denom{0};
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = std::exp(row[j] - mx);
            denom += out[i * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] /= denom;
        }
    }
    const std::int32_t ia = a.index();
    // dx = y * (g - sum_j g_j y_j) rowwise
    return t->record(a.shape(), std::move(out), a.requires_grad(), "softmax_rows",
                     [t, ia, rows, cols](std::int32_t io) {
                         const std::vector<T>& g = t->node(io).grad;
                         const std::vector<T>& y = t->node(io).value;
                         std::vector<T>& ga = t->grad_acc(ia);
                         for (std::size_t i = 0; i < rows; ++i) {
                             T dot{0};
                             for (std::size_t j = 0; j < cols; ++j) {
                                 dot += g[i * cols + j] * y[i * cols + j];
                             }
                             for (std::size_t j = 0; j < cols; ++j) {
                                 ga[i * cols + j] +=
                                     y[i * cols + j] * (g[i * cols + j] - dot);
                             }
                         }
                     });
}

// Mean cross-entropy of row-wise softmax against integer labels.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<std::uint32_t>& labels) {
    Tape<T>* t = logits.tape();
    detail::check(logits.shape().size() == 2, "softmax_cross_entropy: rank-2 logits required");
    const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
    detail::check(labels.size() == rows, "softmax_cross_entropy: label count mismatch");
    std::vector<T> probs(rows * cols);
    T loss{0};
    for (std::size_t i = 0; i < rows; ++i) {
        const T* row = logits.value().data() + i * cols;
        detail::check(labels[i] < cols, "softmax_cross_entropy: label out of range");
        T mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) {
            mx = std::max(mx, row[j]);
        }
        T denom{0};
        for (std::size_t j = 0; j < cols; ++j) {
            probs[i * cols + j] = std::exp(row[j] - mx);
            denom += probs[i * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            probs[i * cols + j] /= denom;
        }
        loss -= std::log(probs[i * cols + labels[i]]);
    }
    loss /= static_cast<T>(rows);
    const std::int32_t il = logits.index();
    return t->record({1}, {loss}, logits.requires_grad(), "softmax_cross_entropy",
                     [t, il, rows, cols, probs = std::move(probs),
                      labels](std::int32_t io) {
                         const T g = t->node(io).grad[0] / static_cast<T>(rows);
                         std::vector<T>& gl = t->grad_acc(il);
                         for (std::size_t i = 0; i < rows; ++i) {
                             for (std::size_t j = 0; j < cols; ++j) {
                                 T d = probs[i * cols + j];
                                 if (j == labels[i]) {
                                     d -= T{1};
                                 }
                                 gl[i * cols + j] += g * d;
                             }
                         }
                     });
}

}  // namespace umurl
