#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "tdmix/common.hpp"
#include "tdmix/tensor.hpp"

namespace tdmix::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid only as long as the tape lives.
struct Value {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

/**
 * Reverse-mode tape. Nodes are appended in execution order, which is a
 * topological order of the graph by construction; backward() walks them in
 * reverse. A tape built with recording=false evaluates forward values only
 * and cannot run backward; inference paths use that mode.
 *
 * One tape per training step, single-threaded.
 */
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    /// Register an input tensor. Gradients accumulate into leaves like any
    /// other node; read them back with grad().
    Value leaf(Tensor t) {
        nodes_.push_back(Node{std::move(t), Tensor(), nullptr});
        return Value{this, nodes_.size() - 1};
    }

    const Tensor& value(Value v) const { return nodes_.at(v.id).val; }

    /// Gradient of the last backward() root w.r.t. this node. A zero tensor
    /// if the node is not an ancestor of the root.
    Tensor grad(Value v) const {
        const Node& n = nodes_.at(v.id);
        if (n.grad.numel() == 0) return Tensor(n.val.shape());
        return n.grad;
    }

    /**
     * Accumulate gradients of a scalar node into every recorded ancestor.
     * Non-scalar roots and non-recording tapes are contract errors.
     */
    void backward(Value root) {
        if (!recording_) throw ContractError("backward: tape was built in non-recording mode");
        if (value(root).numel() != 1) throw ContractError("backward: root is not a scalar");
        grad_slot(root.id)[0] += 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back && n.grad.numel() != 0) n.back(*this);
        }
    }

    // --- plumbing for the op constructors below ---
    Value push(Tensor val) {
        nodes_.push_back(Node{std::move(val), Tensor(), nullptr});
        return Value{this, nodes_.size() - 1};
    }
    void attach(Value v, std::function<void(Tape&)> back) {
        if (recording_) nodes_[v.id].back = std::move(back);
    }
    /// Grad slot, zero-allocated on first touch.
    Tensor& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.numel() == 0) n.grad = Tensor(n.val.shape());
        return n.grad;
    }
    /// Own gradient during backward; only called for nodes whose slot exists.
    const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
    const Tensor& val_of(std::size_t id) const { return nodes_[id].val; }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
    bool recording_;
};

namespace detail {
inline Tape& host(Value a, const char* who) {
    if (a.tape == nullptr) throw ContractError(std::string(who) + ": value has no tape");
    return *a.tape;
}
inline Tape& host(Value a, Value b, const char* who) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw ContractError(std::string(who) + ": operands live on different tapes");
    return *a.tape;
}
inline void axpy(Tensor& dst, const Tensor& src, double c = 1.0) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += c * src[i];
}
} // namespace detail

inline Value add(Value a, Value b) {
    Tape& t = detail::host(a, b, "add");
    Value v = t.push(tdmix::add(t.value(a), t.value(b)));
    t.attach(v, [sa = a.id, sb = b.id, self = v.id](Tape& tp) {
        const Tensor& g = tp.grad_of(self);
        detail::axpy(tp.grad_slot(sa), g);
        detail::axpy(tp.grad_slot(sb), g);
    });
    return v;
}

inline Value scale(Value a, double c) {
    Tape& t = detail::host(a, "scale");
    Value v = t.push(tdmix::scale(t.value(a), c));
    t.attach(v, [sa = a.id, c, self = v.id](Tape& tp) {
        detail::axpy(tp.grad_slot(sa), tp.grad_of(self), c);
    });
    return v;
}

inline Value hadamard(Value a, Value b) {
    Tape& t = detail::host(a, b, "hadamard");
    Value v = t.push(tdmix::hadamard(t.value(a), t.value(b)));
    t.attach(v, [sa = a.id, sb = b.id, self = v.id](Tape& tp) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& av = tp.val_of(sa);
        const Tensor& bv = tp.val_of(sb);
        Tensor& ga = tp.grad_slot(sa);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        Tensor& gb = tp.grad_slot(sb);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    });
    return v;
}

inline Value matmul(Value a, Value b) {
    Tape& t = detail::host(a, b, "matmul");
    Value v = t.push(tdmix::matmul(t.value(a), t.value(b)));
    t.attach(v, [sa = a.id, sb = b.id, self = v.id](Tape& tp) {
        const Tensor& g = tp.grad_of(self);
        // dA = g . B^T, dB = A^T . g
        detail::axpy(tp.grad_slot(sa), tdmix::matmul(g, transpose(tp.val_of(sb))));
        detail::axpy(tp.grad_slot(sb), tdmix::matmul(transpose(tp.val_of(sa)), g));
    });
    return v;
}

inline Value transpose(Value a) {
    Tape& t = detail::host(a, "transpose");
    Value v = t.push(tdmix::transpose(t.value(a)));
    t.attach(v, [sa = a.id, self = v.id](Tape& tp) {
        detail::axpy(tp.grad_slot(sa), tdmix::transpose(tp.grad_of(self)));
    });
    return v;
}

inline Value relu(Value a) {
    Tape& t = detail::host(a, "relu");
    Value v = t.push(tdmix::relu(t.value(a)));
    t.attach(v, [sa = a.id, self = v.id](Tape& tp) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& av = tp.val_of(sa);
        Tensor& ga = tp.grad_slot(sa);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (av[i] > 0.0) ga[i] += g[i];
    });
    return v;
}

inline Value softmax_rows(Value a) {
    Tape& t = detail::host(a, "softmax_rows");
    Value v = t.push(tdmix::softmax_rows(t.value(a)));
    t.attach(v, [sa = a.id, self = v.id](Tape& tp) {
        const Tensor& y = tp.val_of(self);
        const Tensor& g = tp.grad_of(self);
        Tensor& ga = tp.grad_slot(sa);
        const std::size_t rows = y.rank() == 2 ? y.extent(0) : 1;
        const std::size_t cols = y.rank() == 2 ? y.extent(1) : y.extent(0);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* yr = y.data().data() + i * cols;
            const double* gr = g.data().data() + i * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
            double* gar = ga.data().data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gar[j] += yr[j] * (gr[j] - dot);
        }
    });
    return v;
}

inline Value mean_rows(Value a) {
    Tape& t = detail::host(a, "mean_rows");
    Value v = t.push(tdmix::mean_rows(t.value(a)));
    t.attach(v, [sa = a.id, self = v.id](Tape& tp) {
        const Tensor& g = tp.grad_of(self);
        Tensor& ga = tp.grad_slot(sa);
        const std::size_t n = ga.extent(0), d = ga.extent(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += g[j] / static_cast<double>(n);
    });
    return v;
}

inline Value sum(Value a) {
    Tape& t = detail::host(a, "sum");
    Value v = t.push(Tensor::scalar(tdmix::sum(t.value(a))));
    t.attach(v, [sa = a.id, self = v.id](Tape& tp) {
        const double g = tp.grad_of(self)[0];
        Tensor& ga = tp.grad_slot(sa);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
    return v;
}

inline Value reshape(Value a, std::vector<std::size_t> shape) {
    Tape& t = detail::host(a, "reshape");
    Value v = t.push(t.value(a).reshaped(std::move(shape)));
    t.attach(v, [sa = a.id, self = v.id](Tape& tp) {
        // same element count, flat accumulate
        detail::axpy(tp.grad_slot(sa), tp.grad_of(self));
    });
    return v;
}

inline Value slice_cols(Value a, std::size_t c0, std::size_t c1) {
    Tape& t = detail::host(a, "slice_cols");
    Value v = t.push(tdmix::slice_cols(t.value(a), c0, c1));
    t.attach(v, [sa = a.id, c0, self = v.id](Tape& tp) {
        const Tensor& g = tp.grad_of(self);
        Tensor& ga = tp.grad_slot(sa);
        for (std::size_t i = 0; i < g.extent(0); ++i)
            for (std::size_t j = 0; j < g.extent(1); ++j) ga.at(i, c0 + j) += g.at(i, j);
    });
    return v;
}

inline Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    Tape& t = detail::host(parts[0], "concat_cols");
    std::vector<Tensor> vals;
    std::vector<std::size_t> ids;
    for (Value p : parts) {
        detail::host(parts[0], p, "concat_cols");
        vals.push_back(t.value(p));
        ids.push_back(p.id);
    }
    Value v = t.push(tdmix::concat_cols(vals));
    t.attach(v, [ids, self = v.id](Tape& tp) {
        const Tensor& g = tp.grad_of(self);
        std::size_t off = 0;
        for (std::size_t sid : ids) {
            Tensor& gp = tp.grad_slot(sid);
            for (std::size_t i = 0; i < gp.extent(0); ++i)
                for (std::size_t j = 0; j < gp.extent(1); ++j) gp.at(i, j) += g.at(i, off + j);
            off += gp.extent(1);
        }
    });
    return v;
}

/// Fused log-softmax cross entropy against a constant soft target.
inline Value cross_entropy(Value logits, const Tensor& target) {
    Tape& t = detail::host(logits, "cross_entropy");
    Value v = t.push(Tensor::scalar(tdmix::cross_entropy(t.value(logits), target)));
    t.attach(v, [sl = logits.id, target, self = v.id](Tape& tp) {
        const double g = tp.grad_of(self)[0];
        Tensor p = tdmix::softmax_rows(tp.val_of(sl));
        Tensor& gl = tp.grad_slot(sl);
        for (std::size_t i = 0; i < gl.numel(); ++i) gl[i] += g * (p[i] - target[i]);
    });
    return v;
}

/// Mean absolute difference against a constant target.
inline Value l1_to_const(Value a, const Tensor& target) {
    Tape& t = detail::host(a, "l1_to_const");
    Value v = t.push(Tensor::scalar(tdmix::l1_distance(t.value(a), target)));
    t.attach(v, [sa = a.id, target, self = v.id](Tape& tp) {
        const double g = tp.grad_of(self)[0];
        const Tensor& av = tp.val_of(sa);
        Tensor& ga = tp.grad_slot(sa);
        const double inv_n = 1.0 / static_cast<double>(av.numel());
        for (std::size_t i = 0; i < av.numel(); ++i) {
            const double d = av[i] - target[i];
            if (d > 0.0)
                ga[i] += g * inv_n;
            else if (d < 0.0)
                ga[i] -= g * inv_n;
        }
    });
    return v;
}

/**
 * Worst relative deviation between central differences of f and an analytic
 * gradient, over the given coordinates (all coordinates when empty).
 * Per-coordinate deviation is |fd - g| / max(|fd|, |g|, 1).
 */
inline double finite_diff_check(const std::function<double(const Tensor&)>& f,
                                const Tensor& params, const Tensor& analytic_grad,
                                double eps,
                                const std::vector<std::size_t>& coords = {}) {
    if (eps <= 0.0) throw ContractError("finite_diff_check: eps must be positive");
    if (!params.same_shape(analytic_grad))
        throw ShapeError("finite_diff_check: gradient shape mismatch");
    std::vector<std::size_t> idx = coords;
    if (idx.empty()) {
        idx.resize(params.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    }
    Tensor p = params;
    double worst = 0.0;
    for (std::size_t i : idx) {
        const double saved = p[i];
        p[i] = saved + eps;
        const double fp = f(p);
        p[i] = saved - eps;
        const double fm = f(p);
        p[i] = saved;
        const double fd = (fp - fm) / (2.0 * eps);
        const double g = analytic_grad[i];
        const double dev = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1.0});
        worst = std::max(worst, dev);
    }
    return worst;
}

} // namespace tdmix::ad
