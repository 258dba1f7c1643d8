#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
// A Var is a handle to a node in a dynamically built DAG; backward() walks
// the graph in reverse topological order and accumulates gradients into
// every node with requires_grad. Graphs are freed when the last Var handle
// goes out of scope; parameter nodes persist across steps.

#include "uranet/common.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace uranet::ad {

struct Node {
    Mat value;
    Mat grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    void accumulate(const Mat& g) {
        if (!requires_grad) return;
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var constant(Mat v) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        return Var(std::move(n));
    }
    static Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }
    static Var param(Mat v) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    Mat& value() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad() { node_->grad.resize(0, 0); }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double item() const {
        check(node_->value.size() == 1, "Var::item: not a scalar");
        return node_->value(0, 0);
    }
    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make(Mat value, std::vector<std::shared_ptr<Node>> parents,
                std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Var(std::move(n));
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
    check(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops

inline Var add(const Var& a, const Var& b) {
    detail::same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    return detail::make(a.value() + b.value(), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad);
        pb->accumulate(n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    return detail::make(a.value() - b.value(), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad);
        pb->accumulate(-n.grad);
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::same_shape(a, b, "mul");
    auto pa = a.node(), pb = b.node();
    return detail::make(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad.cwiseProduct(pb->value));
        pb->accumulate(n.grad.cwiseProduct(pa->value));
    });
}

inline Var div(const Var& a, const Var& b) {
    detail::same_shape(a, b, "div");
    auto pa = a.node(), pb = b.node();
    return detail::make(a.value().cwiseQuotient(b.value()), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad.cwiseQuotient(pb->value));
        pb->accumulate(
            (-n.grad.array() * pa->value.array() / pb->value.array().square()).matrix());
    });
}

inline Var neg(const Var& a) {
    auto pa = a.node();
    return detail::make(-a.value(), {pa}, [pa](Node& n) { pa->accumulate(-n.grad); });
}

inline Var scale(const Var& a, double s) {
    auto pa = a.node();
    return detail::make(a.value() * s, {pa},
                        [pa, s](Node& n) { pa->accumulate(n.grad * s); });
}

inline Var add_scalar(const Var& a, double s) {
    auto pa = a.node();
    return detail::make((a.value().array() + s).matrix(), {pa},
                        [pa](Node& n) { pa->accumulate(n.grad); });
}

inline Var square(const Var& a) {
    auto pa = a.node();
    return detail::make(a.value().array().square().matrix(), {pa}, [pa](Node& n) {
        pa->accumulate((2.0 * n.grad.array() * pa->value.array()).matrix());
    });
}

inline Var sqrt_(const Var& a) {
    auto pa = a.node();
    Mat v = a.value().array().sqrt().matrix();
    return detail::make(v, {pa}, [pa, v](Node& n) {
        pa->accumulate((0.5 * n.grad.array() / v.array()).matrix());
    });
}

inline Var log_(const Var& a) {
    auto pa = a.node();
    return detail::make(a.value().array().log().matrix(), {pa}, [pa](Node& n) {
        pa->accumulate(n.grad.cwiseQuotient(pa->value));
    });
}

inline Var relu(const Var& a) {
    auto pa = a.node();
    return detail::make(a.value().cwiseMax(0.0), {pa}, [pa](Node& n) {
        pa->accumulate(
            (n.grad.array() * (pa->value.array() > 0.0).cast<double>()).matrix());
    });
}

// numerically stable softplus: max(x,0) + log1p(exp(-|x|))
inline Var softplus(const Var& a) {
    auto pa = a.node();
    Mat v = a.value().unaryExpr(
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return detail::make(v, {pa}, [pa](Node& n) {
        Mat sig = pa->value.unaryExpr([](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        });
        pa->accumulate(n.grad.cwiseProduct(sig));
    });
}

inline Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    auto pa = a.node();
    Mat v = a.value().unaryExpr(
        [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    return detail::make(v, {pa}, [pa](Node& n) {
        Mat d = pa->value.unaryExpr([=](double x) {
            double phi = inv_sqrt2pi * std::exp(-0.5 * x * x);
            double Phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            return Phi + x * phi;
        });
        pa->accumulate(n.grad.cwiseProduct(d));
    });
}

// max(a, m); gradient flows only where a > m
inline Var clamp_min(const Var& a, double m) {
    auto pa = a.node();
    return detail::make(a.value().cwiseMax(m), {pa}, [pa, m](Node& n) {
        pa->accumulate(
            (n.grad.array() * (pa->value.array() > m).cast<double>()).matrix());
    });
}

inline Var stop_gradient(const Var& a) { return Var::constant(a.value()); }

// ---------------------------------------------------------------------------
// matrix ops

inline Var matmul(const Var& a, const Var& b) {
    check(a.cols() == b.rows(), "matmul: inner dims mismatch");
    auto pa = a.node(), pb = b.node();
    return detail::make(a.value() * b.value(), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad * pb->value.transpose());
        pb->accumulate(pa->value.transpose() * n.grad);
    });
}

inline Var transpose(const Var& a) {
    auto pa = a.node();
    return detail::make(a.value().transpose(), {pa},
                        [pa](Node& n) { pa->accumulate(n.grad.transpose()); });
}

inline Var sum(const Var& a) {
    auto pa = a.node();
    return detail::make(Mat::Constant(1, 1, a.value().sum()), {pa}, [pa](Node& n) {
        pa->accumulate(Mat::Constant(pa->value.rows(), pa->value.cols(), n.grad(0, 0)));
    });
}

inline Var mean(const Var& a) {
    auto pa = a.node();
    double inv_n = 1.0 / static_cast<double>(a.value().size());
    return detail::make(Mat::Constant(1, 1, a.value().sum() * inv_n), {pa},
                        [pa, inv_n](Node& n) {
                            pa->accumulate(Mat::Constant(pa->value.rows(), pa->value.cols(),
                                                         n.grad(0, 0) * inv_n));
                        });
}

inline Var row_sum(const Var& a) {  // (R x C) -> (R x 1)
    auto pa = a.node();
    return detail::make(a.value().rowwise().sum(), {pa}, [pa](Node& n) {
        pa->accumulate(n.grad.replicate(1, pa->value.cols()));
    });
}

// rows of a scaled by column vector v: out(i,j) = a(i,j) * v(i)
inline Var mul_colvec(const Var& a, const Var& v) {
    check(v.cols() == 1 && v.rows() == a.rows(), "mul_colvec: shape");
    auto pa = a.node(), pv = v.node();
    return detail::make((a.value().array().colwise() * v.value().col(0).array()).matrix(),
                        {pa, pv}, [pa, pv](Node& n) {
                            pa->accumulate(
                                (n.grad.array().colwise() * pv->value.col(0).array()).matrix());
                            pv->accumulate(n.grad.cwiseProduct(pa->value).rowwise().sum());
                        });
}

inline Var add_colvec(const Var& a, const Var& v) {
    check(v.cols() == 1 && v.rows() == a.rows(), "add_colvec: shape");
    auto pa = a.node(), pv = v.node();
    return detail::make((a.value().array().colwise() + v.value().col(0).array()).matrix(),
                        {pa, pv}, [pa, pv](Node& n) {
                            pa->accumulate(n.grad);
                            pv->accumulate(n.grad.rowwise().sum());
                        });
}

// bias add: out(i,j) = a(i,j) + r(j), r is 1 x C
inline Var add_rowvec(const Var& a, const Var& r) {
    check(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec: shape");
    auto pa = a.node(), pr = r.node();
    return detail::make((a.value().array().rowwise() + r.value().row(0).array()).matrix(),
                        {pa, pr}, [pa, pr](Node& n) {
                            pa->accumulate(n.grad);
                            pr->accumulate(n.grad.colwise().sum());
                        });
}

inline Var mul_rowvec(const Var& a, const Var& r) {
    check(r.rows() == 1 && r.cols() == a.cols(), "mul_rowvec: shape");
    auto pa = a.node(), pr = r.node();
    return detail::make((a.value().array().rowwise() * r.value().row(0).array()).matrix(),
                        {pa, pr}, [pa, pr](Node& n) {
                            pa->accumulate(
                                (n.grad.array().rowwise() * pr->value.row(0).array()).matrix());
                            pr->accumulate(n.grad.cwiseProduct(pa->value).colwise().sum());
                        });
}

inline Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n_cols) {
    check(c0 >= 0 && c0 + n_cols <= a.cols(), "slice_cols: out of range");
    auto pa = a.node();
    return detail::make(a.value().middleCols(c0, n_cols), {pa}, [pa, c0, n_cols](Node& n) {
        Mat g = Mat::Zero(pa->value.rows(), pa->value.cols());
        g.middleCols(c0, n_cols) = n.grad;
        pa->accumulate(g);
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    Eigen::Index rows = parts[0].rows(), total = 0;
    std::vector<std::shared_ptr<Node>> ps;
    for (const auto& p : parts) {
        check(p.rows() == rows, "concat_cols: row mismatch");
        total += p.cols();
        ps.push_back(p.node());
    }
    Mat v(rows, total);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return detail::make(std::move(v), ps, [ps](Node& n) {
        Eigen::Index at = 0;
        for (const auto& p : ps) {
            p->accumulate(n.grad.middleCols(at, p->value.cols()));
            at += p->value.cols();
        }
    });
}

inline Var softmax_rows(const Var& a) {
    auto pa = a.node();
    Mat v = a.value();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        double m = v.row(i).maxCoeff();
        v.row(i) = (v.row(i).array() - m).exp();
        v.row(i) /= v.row(i).sum();
    }
    return detail::make(v, {pa}, [pa, v](Node& n) {
        Mat g(v.rows(), v.cols());
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            double dot = n.grad.row(i).dot(v.row(i));
            g.row(i) = (n.grad.row(i).array() - dot) * v.row(i).array();
        }
        pa->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// backward

inline void backward(const Var& loss) {
    check(loss.value().size() == 1, "backward: loss must be scalar");
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;  // node, next parent index
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->grad = Mat::Ones(1, 1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// composites

// layer norm over each row, with learnable 1 x C gain and bias
inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias,
                           double eps = 1e-5) {
    double inv_c = 1.0 / static_cast<double>(x.cols());
    Var m = scale(row_sum(x), inv_c);
    Var xc = add_colvec(x, neg(m));
    Var var = scale(row_sum(square(xc)), inv_c);
    Var inv_std = div(Var::constant(Mat::Ones(x.rows(), 1)), sqrt_(add_scalar(var, eps)));
    Var xn = mul_colvec(xc, inv_std);
    return add_rowvec(mul_rowvec(xn, gain), bias);
}

}  // namespace uranet::ad
