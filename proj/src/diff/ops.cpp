#include "mssm/diff/ops.hpp"

#include <cmath>

#include "mssm/kernels/kernels.hpp"

namespace mssm::diff {

namespace {

const kernels::KernelTable& K() { return kernels::active(); }

std::size_t usz(std::int64_t n) { return static_cast<std::size_t>(n); }

NodePtr make_node(const char* op, Tensor value, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void require_rank2(const char* op, const Var& a) {
    if (a.value().rank() != 2) throw ShapeError(op, "expected rank-2 tensor, got " +
                                                        Tensor::shape_str(a.shape()));
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(op, "operand shapes differ: " + Tensor::shape_str(a.shape()) + " vs " +
                                 Tensor::shape_str(b.shape()));
}

Tensor transposed(const Tensor& t) {
    const std::int64_t r = t.dim(0), c = t.dim(1);
    Tensor out({c, r});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.at(j, i) = t.at(i, j);
    return out;
}

using Map1 = double (*)(double);

Var unary_op(const char* op, const Var& a, Map1 fwd, double (*dfn)(double x, double y)) {
    Tensor out(a.value().shape());
    const Tensor& x = a.value();
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
    auto n = make_node(op, std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        Node* self = n.get();
        n->backward_fn = [pa, self, dfn](Node& nd) {
            Tensor g(nd.grad.shape());
            const Tensor& x = pa->value;
            const Tensor& y = self->value;
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = nd.grad[i] * dfn(x[i], y[i]);
            pa->accumulate(g);
        };
    }
    return Var(n);
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape("add", a, b);
    Tensor out(a.value().shape());
    K().add(a.value().data(), b.value().data(), out.data(), usz(out.numel()));
    auto n = make_node("add", std::move(out), {a.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *pa = a.node(), *pb = b.node();
        n->backward_fn = [pa, pb](Node& nd) {
            if (pa->requires_grad) pa->accumulate(nd.grad);
            if (pb->requires_grad) pb->accumulate(nd.grad);
        };
    }
    return Var(n);
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a, b);
    Tensor out(a.value().shape());
    K().sub(a.value().data(), b.value().data(), out.data(), usz(out.numel()));
    auto n = make_node("sub", std::move(out), {a.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *pa = a.node(), *pb = b.node();
        n->backward_fn = [pa, pb](Node& nd) {
            if (pa->requires_grad) pa->accumulate(nd.grad);
            if (pb->requires_grad) {
                Tensor g(nd.grad.shape());
                K().scale(-1.0, nd.grad.data(), g.data(), usz(g.numel()));
                pb->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a, b);
    Tensor out(a.value().shape());
    K().mul(a.value().data(), b.value().data(), out.data(), usz(out.numel()));
    auto n = make_node("mul", std::move(out), {a.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *pa = a.node(), *pb = b.node();
        n->backward_fn = [pa, pb](Node& nd) {
            Tensor g(nd.grad.shape());
            if (pa->requires_grad) {
                K().mul(nd.grad.data(), pb->value.data(), g.data(), usz(g.numel()));
                pa->accumulate(g);
            }
            if (pb->requires_grad) {
                K().mul(nd.grad.data(), pa->value.data(), g.data(), usz(g.numel()));
                pb->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var div(const Var& a, const Var& b) {
    require_same_shape("div", a, b);
    Tensor out(a.value().shape());
    K().div(a.value().data(), b.value().data(), out.data(), usz(out.numel()));
    auto n = make_node("div", std::move(out), {a.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *pa = a.node(), *pb = b.node();
        Node* self = n.get();
        n->backward_fn = [pa, pb, self](Node& nd) {
            if (pa->requires_grad) {
                Tensor g(nd.grad.shape());
                K().div(nd.grad.data(), pb->value.data(), g.data(), usz(g.numel()));
                pa->accumulate(g);
            }
            if (pb->requires_grad) {
                // d/db (a/b) = -(a/b)/b
                Tensor g(nd.grad.shape());
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    g[i] = -nd.grad[i] * self->value[i] / pb->value[i];
                pb->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double c) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + c;
    auto n = make_node("add_scalar", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa](Node& nd) { pa->accumulate(nd.grad); };
    }
    return Var(n);
}

Var mul_scalar(const Var& a, double c) {
    Tensor out(a.value().shape());
    K().scale(c, a.value().data(), out.data(), usz(out.numel()));
    auto n = make_node("mul_scalar", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa, c](Node& nd) {
            Tensor g(nd.grad.shape());
            K().scale(c, nd.grad.data(), g.data(), usz(g.numel()));
            pa->accumulate(g);
        };
    }
    return Var(n);
}

Var add_rowvec(const Var& m, const Var& v) {
    require_rank2("add_rowvec", m);
    require_rank2("add_rowvec", v);
    if (v.rows() != 1 || v.cols() != m.cols())
        throw ShapeError("add_rowvec", "bias " + Tensor::shape_str(v.shape()) +
                                           " does not broadcast over " + Tensor::shape_str(m.shape()));
    const std::int64_t r = m.rows(), c = m.cols();
    Tensor out({r, c});
    for (std::int64_t i = 0; i < r; ++i)
        K().add(m.value().data() + i * c, v.value().data(), out.data() + i * c, usz(c));
    auto n = make_node("add_rowvec", std::move(out), {m.ptr(), v.ptr()});
    if (n->requires_grad) {
        Node *pm = m.node(), *pv = v.node();
        n->backward_fn = [pm, pv, r, c](Node& nd) {
            if (pm->requires_grad) pm->accumulate(nd.grad);
            if (pv->requires_grad) {
                Tensor g({1, c});
                for (std::int64_t i = 0; i < r; ++i)
                    K().add(g.data(), nd.grad.data() + i * c, g.data(), usz(c));
                pv->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var scale_by(const Var& m, const Var& s) {
    if (s.value().numel() != 1) throw ShapeError("scale_by", "scale must be a [1x1] scalar");
    Tensor out(m.value().shape());
    K().scale(s.value()[0], m.value().data(), out.data(), usz(out.numel()));
    auto n = make_node("scale_by", std::move(out), {m.ptr(), s.ptr()});
    if (n->requires_grad) {
        Node *pm = m.node(), *ps = s.node();
        n->backward_fn = [pm, ps](Node& nd) {
            if (pm->requires_grad) {
                Tensor g(nd.grad.shape());
                K().scale(ps->value[0], nd.grad.data(), g.data(), usz(g.numel()));
                pm->accumulate(g);
            }
            if (ps->requires_grad) {
                Tensor g({1, 1});
                g[0] = K().dot(nd.grad.data(), pm->value.data(), usz(nd.grad.numel()));
                ps->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var matmul(const Var& a, const Var& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    if (a.cols() != b.rows())
        throw ShapeError("matmul", "inner dimensions differ: " + Tensor::shape_str(a.shape()) +
                                       " * " + Tensor::shape_str(b.shape()));
    const std::int64_t m = a.rows(), k = a.cols(), nn = b.cols();
    Tensor out({m, nn});
    K().gemm_nn(usz(m), usz(nn), usz(k), a.value().data(), b.value().data(), out.data(), false);
    auto n = make_node("matmul", std::move(out), {a.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *pa = a.node(), *pb = b.node();
        n->backward_fn = [pa, pb, m, k, nn](Node& nd) {
            if (pa->requires_grad) {
                // dA = g * B^T
                Tensor bt = transposed(pb->value);
                Tensor g({m, k});
                K().gemm_nn(usz(m), usz(k), usz(nn), nd.grad.data(), bt.data(), g.data(), false);
                pa->accumulate(g);
            }
            if (pb->requires_grad) {
                // dB = A^T * g
                Tensor at = transposed(pa->value);
                Tensor g({k, nn});
                K().gemm_nn(usz(k), usz(nn), usz(m), at.data(), nd.grad.data(), g.data(), false);
                pb->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank2("matmul_nt", a);
    require_rank2("matmul_nt", b);
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt", "inner dimensions differ: " + Tensor::shape_str(a.shape()) +
                                          " * " + Tensor::shape_str(b.shape()) + "^T");
    const std::int64_t m = a.rows(), k = a.cols(), nn = b.rows();
    Tensor bt = transposed(b.value());
    Tensor out({m, nn});
    K().gemm_nn(usz(m), usz(nn), usz(k), a.value().data(), bt.data(), out.data(), false);
    auto n = make_node("matmul_nt", std::move(out), {a.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *pa = a.node(), *pb = b.node();
        n->backward_fn = [pa, pb, m, k, nn](Node& nd) {
            if (pa->requires_grad) {
                // dA = g * B
                Tensor g({m, k});
                K().gemm_nn(usz(m), usz(k), usz(nn), nd.grad.data(), pb->value.data(), g.data(),
                            false);
                pa->accumulate(g);
            }
            if (pb->requires_grad) {
                // dB = g^T * A
                Tensor gt = transposed(nd.grad);
                Tensor g({nn, k});
                K().gemm_nn(usz(nn), usz(k), usz(m), gt.data(), pa->value.data(), g.data(), false);
                pb->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var transpose(const Var& a) {
    require_rank2("transpose", a);
    auto n = make_node("transpose", transposed(a.value()), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa](Node& nd) { pa->accumulate(transposed(nd.grad)); };
    }
    return Var(n);
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: empty input");
    const std::int64_t r = parts[0].rows();
    std::int64_t total = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        require_rank2("concat_cols", p);
        if (p.rows() != r) throw ShapeError("concat_cols", "row counts differ");
        total += p.cols();
        parents.push_back(p.ptr());
    }
    Tensor out({r, total});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t c = p.cols();
        for (std::int64_t i = 0; i < r; ++i)
            std::copy_n(p.value().data() + i * c, c, out.data() + i * total + off);
        off += c;
    }
    auto n = make_node("concat_cols", std::move(out), std::move(parents));
    if (n->requires_grad) {
        n->backward_fn = [r, total](Node& nd) {
            std::int64_t off = 0;
            for (auto& par : nd.parents) {
                const std::int64_t c = par->value.dim(1);
                if (par->requires_grad) {
                    Tensor g({r, c});
                    for (std::int64_t i = 0; i < r; ++i)
                        std::copy_n(nd.grad.data() + i * total + off, c, g.data() + i * c);
                    par->accumulate(g);
                }
                off += c;
            }
        };
    }
    return Var(n);
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_rows: empty input");
    const std::int64_t c = parts[0].cols();
    std::int64_t total = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        require_rank2("concat_rows", p);
        if (p.cols() != c) throw ShapeError("concat_rows", "column counts differ");
        total += p.rows();
        parents.push_back(p.ptr());
    }
    Tensor out({total, c});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().data(), p.value().numel(), out.data() + off * c);
        off += p.rows();
    }
    auto n = make_node("concat_rows", std::move(out), std::move(parents));
    if (n->requires_grad) {
        n->backward_fn = [c](Node& nd) {
            std::int64_t off = 0;
            for (auto& par : nd.parents) {
                const std::int64_t r = par->value.dim(0);
                if (par->requires_grad) {
                    Tensor g({r, c});
                    std::copy_n(nd.grad.data() + off * c, r * c, g.data());
                    par->accumulate(g);
                }
                off += r;
            }
        };
    }
    return Var(n);
}

Var slice_cols(const Var& a, std::int64_t off, std::int64_t len) {
    require_rank2("slice_cols", a);
    if (off < 0 || len < 1 || off + len > a.cols())
        throw ShapeError("slice_cols", "slice out of range");
    const std::int64_t r = a.rows(), c = a.cols();
    Tensor out({r, len});
    for (std::int64_t i = 0; i < r; ++i)
        std::copy_n(a.value().data() + i * c + off, len, out.data() + i * len);
    auto n = make_node("slice_cols", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa, off, len, r, c](Node& nd) {
            Tensor g({r, c});
            for (std::int64_t i = 0; i < r; ++i)
                std::copy_n(nd.grad.data() + i * len, len, g.data() + i * c + off);
            pa->accumulate(g);
        };
    }
    return Var(n);
}

Var slice_rows(const Var& a, std::int64_t off, std::int64_t len) {
    require_rank2("slice_rows", a);
    if (off < 0 || len < 1 || off + len > a.rows())
        throw ShapeError("slice_rows", "slice out of range");
    const std::int64_t c = a.cols();
    Tensor out({len, c});
    std::copy_n(a.value().data() + off * c, len * c, out.data());
    auto n = make_node("slice_rows", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        const std::int64_t r = a.rows();
        n->backward_fn = [pa, off, len, r, c](Node& nd) {
            Tensor g({r, c});
            std::copy_n(nd.grad.data(), len * c, g.data() + off * c);
            pa->accumulate(g);
        };
    }
    return Var(n);
}

Var reshape(const Var& a, std::vector<std::int64_t> shape) {
    Tensor out = a.value().reshaped(shape);
    auto n = make_node("reshape", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa](Node& nd) { pa->accumulate(nd.grad.reshaped(pa->value.shape())); };
    }
    return Var(n);
}

Var diag_vec(const Var& a) {
    require_rank2("diag_vec", a);
    if (a.rows() != a.cols()) throw ShapeError("diag_vec", "matrix must be square");
    const std::int64_t m = a.rows();
    Tensor out({m, 1});
    for (std::int64_t i = 0; i < m; ++i) out[i] = a.value().at(i, i);
    auto n = make_node("diag_vec", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa, m](Node& nd) {
            Tensor g({m, m});
            for (std::int64_t i = 0; i < m; ++i) g.at(i, i) = nd.grad[i];
            pa->accumulate(g);
        };
    }
    return Var(n);
}

Var detach(const Var& a) { return make_leaf(a.value(), false); }

Var sum_all(const Var& a) {
    Tensor out({1, 1});
    out[0] = K().sum(a.value().data(), usz(a.value().numel()));
    auto n = make_node("sum_all", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa](Node& nd) {
            pa->accumulate(Tensor::full(pa->value.shape(), nd.grad[0]));
        };
    }
    return Var(n);
}

Var mean_all(const Var& a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.value().numel())); }

Var row_sum(const Var& a) {
    require_rank2("row_sum", a);
    const std::int64_t r = a.rows(), c = a.cols();
    Tensor out({r, 1});
    for (std::int64_t i = 0; i < r; ++i) out[i] = K().sum(a.value().data() + i * c, usz(c));
    auto n = make_node("row_sum", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa, r, c](Node& nd) {
            Tensor g({r, c});
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) g.at(i, j) = nd.grad[i];
            pa->accumulate(g);
        };
    }
    return Var(n);
}

Var col_sum(const Var& a) {
    require_rank2("col_sum", a);
    const std::int64_t r = a.rows(), c = a.cols();
    Tensor out({1, c});
    for (std::int64_t i = 0; i < r; ++i) K().add(out.data(), a.value().data() + i * c, out.data(), usz(c));
    auto n = make_node("col_sum", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        n->backward_fn = [pa, r, c](Node& nd) {
            Tensor g({r, c});
            for (std::int64_t i = 0; i < r; ++i) std::copy_n(nd.grad.data(), c, g.data() + i * c);
            pa->accumulate(g);
        };
    }
    return Var(n);
}

Var logsumexp_rows(const Var& a) {
    require_rank2("logsumexp_rows", a);
    const std::int64_t r = a.rows(), c = a.cols();
    Tensor out({r, 1});
    for (std::int64_t i = 0; i < r; ++i) {
        const double* row = a.value().data() + i * c;
        const double m = K().max(row, usz(c));
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
        out[i] = m + std::log(s);
    }
    auto n = make_node("logsumexp_rows", std::move(out), {a.ptr()});
    if (n->requires_grad) {
        Node* pa = a.node();
        Node* self = n.get();
        n->backward_fn = [pa, self, r, c](Node& nd) {
            Tensor g({r, c});
            for (std::int64_t i = 0; i < r; ++i) {
                const double* row = pa->value.data() + i * c;
                const double lse = self->value[i];
                for (std::int64_t j = 0; j < c; ++j)
                    g.at(i, j) = nd.grad[i] * std::exp(row[j] - lse);
            }
            pa->accumulate(g);
        };
    }
    return Var(n);
}

Var square(const Var& a) {
    return unary_op("square", a, [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}
Var sqrt_v(const Var& a) {
    return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}
Var exp_v(const Var& a) {
    return unary_op("exp", a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}
Var log_v(const Var& a) {
    return unary_op("log", a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}
Var tanh_v(const Var& a) {
    return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}
Var sigmoid(const Var& a) {
    return unary_op("sigmoid", a,
                    [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                   : std::exp(x) / (1.0 + std::exp(x)); },
                    [](double, double y) { return y * (1.0 - y); });
}
Var elu(const Var& a) {
    return unary_op("elu", a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                    [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}
Var softplus(const Var& a) {
    return unary_op("softplus", a,
                    [](double x) {
                        if (x > 30.0) return x;
                        if (x < -30.0) return std::exp(x);
                        return std::log1p(std::exp(x));
                    },
                    [](double x, double) {
                        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                        : std::exp(x) / (1.0 + std::exp(x));
                    });
}
Var relu(const Var& a) {
    return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
Var abs_v(const Var& a) {
    return unary_op("abs", a, [](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var min_elem(const Var& a, const Var& b) {
    require_same_shape("min_elem", a, b);
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = a.value()[i] <= b.value()[i] ? a.value()[i] : b.value()[i];
    auto n = make_node("min_elem", std::move(out), {a.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *pa = a.node(), *pb = b.node();
        n->backward_fn = [pa, pb](Node& nd) {
            Tensor ga(nd.grad.shape()), gb(nd.grad.shape());
            for (std::int64_t i = 0; i < nd.grad.numel(); ++i) {
                if (pa->value[i] <= pb->value[i]) ga[i] = nd.grad[i];
                else gb[i] = nd.grad[i];
            }
            if (pa->requires_grad) pa->accumulate(ga);
            if (pb->requires_grad) pb->accumulate(gb);
        };
    }
    return Var(n);
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    require_rank2("layer_norm", x);
    const std::int64_t r = x.rows(), c = x.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
        throw ShapeError("layer_norm", "gain/bias must be [1 x d]");
    Tensor out({r, c});
    Tensor xhat({r, c});
    Tensor inv_std({r, 1});
    for (std::int64_t i = 0; i < r; ++i) {
        const double* row = x.value().data() + i * c;
        const double mean = K().sum(row, usz(c)) / static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::int64_t j = 0; j < c; ++j) {
            const double xh = (row[j] - mean) * is;
            xhat.at(i, j) = xh;
            out.at(i, j) = xh * gain.value()[j] + bias.value()[j];
        }
    }
    auto n = make_node("layer_norm", std::move(out), {x.ptr(), gain.ptr(), bias.ptr()});
    if (n->requires_grad) {
        Node *px = x.node(), *pg = gain.node(), *pb = bias.node();
        auto xh = std::make_shared<Tensor>(std::move(xhat));
        auto is = std::make_shared<Tensor>(std::move(inv_std));
        n->backward_fn = [px, pg, pb, xh, is, r, c](Node& nd) {
            if (pg->requires_grad) {
                Tensor g({1, c});
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j) g[j] += nd.grad.at(i, j) * xh->at(i, j);
                pg->accumulate(g);
            }
            if (pb->requires_grad) {
                Tensor g({1, c});
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j) g[j] += nd.grad.at(i, j);
                pb->accumulate(g);
            }
            if (px->requires_grad) {
                Tensor g({r, c});
                const double invc = 1.0 / static_cast<double>(c);
                for (std::int64_t i = 0; i < r; ++i) {
                    // dxhat = g * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
                    double m1 = 0.0, m2 = 0.0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double dxh = nd.grad.at(i, j) * pg->value[j];
                        m1 += dxh;
                        m2 += dxh * xh->at(i, j);
                    }
                    m1 *= invc;
                    m2 *= invc;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double dxh = nd.grad.at(i, j) * pg->value[j];
                        g.at(i, j) = ((*is)[i]) * (dxh - m1 - xh->at(i, j) * m2);
                    }
                }
                px->accumulate(g);
            }
        };
    }
    return Var(n);
}

Var softmax_rows(const Var& a) {
    Var lse = logsumexp_rows(a);  // [r x 1]
    // broadcast subtract via matmul with ones row
    const std::int64_t c = a.cols();
    Var ones = make_leaf(Tensor::full({1, c}, 1.0), false);
    return exp_v(sub(a, matmul(lse, ones)));
}

Var logsumexp(const Var& a) {
    require_rank2("logsumexp", a);
    if (a.rows() != 1) throw ShapeError("logsumexp", "expected a [1 x n] row vector");
    return logsumexp_rows(a);
}

namespace {

struct ConvGeom {
    std::int64_t C, H, W, OC, kh, kw, stride, OH, OW;
};

// cols [C*kh*kw x OH*OW]
void im2col(const double* img, const ConvGeom& g, double* cols) {
    const std::int64_t patch = g.kh * g.kw;
    for (std::int64_t c = 0; c < g.C; ++c)
        for (std::int64_t di = 0; di < g.kh; ++di)
            for (std::int64_t dj = 0; dj < g.kw; ++dj) {
                double* dst = cols + ((c * g.kh + di) * g.kw + dj) * (g.OH * g.OW);
                for (std::int64_t oi = 0; oi < g.OH; ++oi) {
                    const double* src = img + c * g.H * g.W + (oi * g.stride + di) * g.W + dj;
                    for (std::int64_t oj = 0; oj < g.OW; ++oj)
                        dst[oi * g.OW + oj] = src[oj * g.stride];
                }
            }
    (void)patch;
}

// scatter-add adjoint of im2col
void col2im(const double* cols, const ConvGeom& g, double* img) {
    for (std::int64_t c = 0; c < g.C; ++c)
        for (std::int64_t di = 0; di < g.kh; ++di)
            for (std::int64_t dj = 0; dj < g.kw; ++dj) {
                const double* src = cols + ((c * g.kh + di) * g.kw + dj) * (g.OH * g.OW);
                for (std::int64_t oi = 0; oi < g.OH; ++oi) {
                    double* dst = img + c * g.H * g.W + (oi * g.stride + di) * g.W + dj;
                    for (std::int64_t oj = 0; oj < g.OW; ++oj)
                        dst[oj * g.stride] += src[oi * g.OW + oj];
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t kh, std::int64_t kw,
           std::int64_t stride) {
    if (x.value().rank() != 4) throw ShapeError("conv2d", "input must be [B,C,H,W]");
    const std::int64_t B = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2),
                       W = x.value().dim(3);
    const std::int64_t OC = w.rows();
    if (w.cols() != C * kh * kw)
        throw ShapeError("conv2d", "kernel shape " + Tensor::shape_str(w.shape()) +
                                       " does not match C*kh*kw = " + std::to_string(C * kh * kw));
    if ((H - kh) % stride != 0 || (W - kw) % stride != 0 || H < kh || W < kw)
        throw ShapeError("conv2d", "input spatial size incompatible with kernel/stride");
    if (b.rows() != 1 || b.cols() != OC) throw ShapeError("conv2d", "bias must be [1 x OC]");
    ConvGeom g{C, H, W, OC, kh, kw, stride, (H - kh) / stride + 1, (W - kw) / stride + 1};
    const std::int64_t ck = C * kh * kw, hw = g.OH * g.OW;

    Tensor out({B, OC, g.OH, g.OW});
    auto cols_all = std::make_shared<Tensor>(Tensor({B, ck, hw}));
    for (std::int64_t bi = 0; bi < B; ++bi) {
        double* cols = cols_all->data() + bi * ck * hw;
        im2col(x.value().data() + bi * C * H * W, g, cols);
        double* o = out.data() + bi * OC * hw;
        K().gemm_nn(usz(OC), usz(hw), usz(ck), w.value().data(), cols, o, false);
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            const double bias = b.value()[oc];
            for (std::int64_t p = 0; p < hw; ++p) o[oc * hw + p] += bias;
        }
    }
    auto n = make_node("conv2d", std::move(out), {x.ptr(), w.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *px = x.node(), *pw = w.node(), *pb = b.node();
        n->backward_fn = [px, pw, pb, cols_all, g, B, ck, hw](Node& nd) {
            const std::int64_t OC = g.OC;
            Tensor wt;
            if (px->requires_grad) wt = transposed(pw->value);
            Tensor gx, gw, gb;
            if (px->requires_grad) gx = Tensor(px->value.shape());
            if (pw->requires_grad) gw = Tensor({OC, ck});
            if (pb->requires_grad) gb = Tensor({1, OC});
            Tensor dcols({ck, hw});
            Tensor colsT({hw, ck});
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const double* go = nd.grad.data() + bi * OC * hw;
                if (px->requires_grad) {
                    K().gemm_nn(usz(ck), usz(hw), usz(OC), wt.data(), go, dcols.data(), false);
                    col2im(dcols.data(), g, gx.data() + bi * g.C * g.H * g.W);
                }
                if (pw->requires_grad) {
                    const double* cols = cols_all->data() + bi * ck * hw;
                    for (std::int64_t i = 0; i < ck; ++i)
                        for (std::int64_t p = 0; p < hw; ++p) colsT[p * ck + i] = cols[i * hw + p];
                    K().gemm_nn(usz(OC), usz(ck), usz(hw), go, colsT.data(), gw.data(), true);
                }
                if (pb->requires_grad)
                    for (std::int64_t oc = 0; oc < OC; ++oc)
                        gb[oc] += K().sum(go + oc * hw, usz(hw));
            }
            if (px->requires_grad) px->accumulate(gx);
            if (pw->requires_grad) pw->accumulate(gw);
            if (pb->requires_grad) pb->accumulate(gb);
        };
    }
    return Var(n);
}

Var conv2d_transpose(const Var& x, const Var& w, const Var& b, std::int64_t kh, std::int64_t kw,
                     std::int64_t stride) {
    if (x.value().rank() != 4) throw ShapeError("conv2d_transpose", "input must be [B,C,H,W]");
    const std::int64_t B = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2),
                       W = x.value().dim(3);
    if (w.rows() != C)
        throw ShapeError("conv2d_transpose", "kernel rows must equal input channels");
    const std::int64_t ockk = w.cols();
    if (ockk % (kh * kw) != 0) throw ShapeError("conv2d_transpose", "kernel cols not OC*kh*kw");
    const std::int64_t OC = ockk / (kh * kw);
    if (b.rows() != 1 || b.cols() != OC)
        throw ShapeError("conv2d_transpose", "bias must be [1 x OC]");
    const std::int64_t OH = (H - 1) * stride + kh, OW = (W - 1) * stride + kw;
    // Geometry of the adjoint conv: the *output* is the image, x plays dout.
    ConvGeom g{OC, OH, OW, C, kh, kw, stride, H, W};
    const std::int64_t ck = OC * kh * kw, hw = H * W;

    Tensor out({B, OC, OH, OW});
    Tensor wt = transposed(w.value());  // [ockk x C]
    Tensor cols({ck, hw});
    for (std::int64_t bi = 0; bi < B; ++bi) {
        const double* xi = x.value().data() + bi * C * hw;
        K().gemm_nn(usz(ck), usz(hw), usz(C), wt.data(), xi, cols.data(), false);
        double* o = out.data() + bi * OC * OH * OW;
        col2im(cols.data(), g, o);
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            const double bias = b.value()[oc];
            double* ochan = o + oc * OH * OW;
            for (std::int64_t p = 0; p < OH * OW; ++p) ochan[p] += bias;
        }
    }
    auto n = make_node("conv2d_transpose", std::move(out), {x.ptr(), w.ptr(), b.ptr()});
    if (n->requires_grad) {
        Node *px = x.node(), *pw = w.node(), *pb = b.node();
        n->backward_fn = [px, pw, pb, g, B, C, ck, hw, OC, OH, OW](Node& nd) {
            Tensor gx, gw, gb;
            if (px->requires_grad) gx = Tensor(px->value.shape());
            if (pw->requires_grad) gw = Tensor({C, ck});
            if (pb->requires_grad) gb = Tensor({1, OC});
            Tensor dcols({ck, hw});
            Tensor dcolsT({hw, ck});
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const double* go = nd.grad.data() + bi * OC * OH * OW;
                im2col(go, g, dcols.data());
                if (px->requires_grad) {
                    // dx = W * dcols
                    K().gemm_nn(usz(C), usz(hw), usz(ck), pw->value.data(), dcols.data(),
                                gx.data() + bi * C * hw, false);
                }
                if (pw->requires_grad) {
                    // dW = x * dcols^T
                    for (std::int64_t i = 0; i < ck; ++i)
                        for (std::int64_t p = 0; p < hw; ++p)
                            dcolsT[p * ck + i] = dcols[i * hw + p];
                    K().gemm_nn(usz(C), usz(ck), usz(hw), px->value.data() + bi * C * hw,
                                dcolsT.data(), gw.data(), true);
                }
                if (pb->requires_grad)
                    for (std::int64_t oc = 0; oc < OC; ++oc)
                        gb[oc] += K().sum(go + oc * OH * OW, usz(OH * OW));
            }
            if (px->requires_grad) px->accumulate(gx);
            if (pw->requires_grad) pw->accumulate(gw);
            if (pb->requires_grad) pb->accumulate(gb);
        };
    }
    return Var(n);
}

}  // namespace mssm::diff
