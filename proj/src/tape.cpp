#include "invdiff/tape.hpp"

#include <cmath>
#include <utility>

namespace invdiff {

namespace {

Matrix sigmoid_of(const Matrix& x) {
    return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

} // namespace

std::string Tape::shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

int Tape::check_var(Var v) const {
    if (v.tape != this || v.idx < 0 ||
        v.idx >= static_cast<int>(nodes_.size()))
        throw NumericError("tape: Var does not belong to this tape");
    return v.idx;
}

void Tape::require(bool ok, const char* op, Var a, Var b) const {
    if (!ok)
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(v(a)) + " vs " + shape_str(v(b)));
}

void Tape::require(bool ok, const char* op, Var a) const {
    if (!ok)
        throw ShapeError(std::string(op) + ": bad shape " + shape_str(v(a)));
}

Var Tape::push(Matrix val, const char* op,
               std::function<void(Tape&, const Matrix&)> back) {
    if (!val.allFinite())
        throw NumericError(std::string(op) + ": non-finite result (" +
                           shape_str(val) + ")");
    Node n;
    n.grad = Matrix::Zero(val.rows(), val.cols());
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix v) { return push(std::move(v), "constant", {}); }

Var Tape::param(Param& p) {
    Var out = push(p.value, "param", {});
    nodes_[out.idx].bound = &p;
    return out;
}

Var Tape::matmul(Var a, Var b) {
    check_var(a);
    check_var(b);
    require(v(a).cols() == v(b).rows(), "matmul", a, b);
    Matrix out = v(a) * v(b);
    return push(std::move(out), "matmul",
                [a, b](Tape& t, const Matrix& g) {
                    t.add_grad(a.idx, g * t.v(b).transpose());
                    t.add_grad(b.idx, t.v(a).transpose() * g);
                });
}

Var Tape::transpose(Var a) {
    check_var(a);
    return push(v(a).transpose(), "transpose",
                [a](Tape& t, const Matrix& g) {
                    t.add_grad(a.idx, g.transpose());
                });
}

Var Tape::add(Var a, Var b) {
    check_var(a);
    check_var(b);
    require(v(a).rows() == v(b).rows() && v(a).cols() == v(b).cols(), "add",
            a, b);
    return push(v(a) + v(b), "add", [a, b](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, g);
        t.add_grad(b.idx, g);
    });
}

Var Tape::add_rowvec(Var a, Var b) {
    check_var(a);
    check_var(b);
    require(v(b).rows() == 1 && v(b).cols() == v(a).cols(), "add_rowvec", a,
            b);
    Matrix out = v(a).rowwise() + v(b).row(0);
    return push(std::move(out), "add_rowvec",
                [a, b](Tape& t, const Matrix& g) {
                    t.add_grad(a.idx, g);
                    t.add_grad(b.idx, g.colwise().sum());
                });
}

Var Tape::sub(Var a, Var b) {
    check_var(a);
    check_var(b);
    require(v(a).rows() == v(b).rows() && v(a).cols() == v(b).cols(), "sub",
            a, b);
    return push(v(a) - v(b), "sub", [a, b](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, g);
        t.add_grad(b.idx, -g);
    });
}

Var Tape::mul(Var a, Var b) {
    check_var(a);
    check_var(b);
    require(v(a).rows() == v(b).rows() && v(a).cols() == v(b).cols(), "mul",
            a, b);
    return push(v(a).cwiseProduct(v(b)), "mul",
                [a, b](Tape& t, const Matrix& g) {
                    t.add_grad(a.idx, g.cwiseProduct(t.v(b)));
                    t.add_grad(b.idx, g.cwiseProduct(t.v(a)));
                });
}

Var Tape::cdiv(Var a, Var b) {
    check_var(a);
    check_var(b);
    require(v(a).rows() == v(b).rows() && v(a).cols() == v(b).cols(), "cdiv",
            a, b);
    return push(v(a).cwiseQuotient(v(b)), "cdiv",
                [a, b](Tape& t, const Matrix& g) {
                    const Matrix& bv = t.v(b);
                    t.add_grad(a.idx, g.cwiseQuotient(bv));
                    t.add_grad(b.idx,
                               -g.cwiseProduct(t.v(a))
                                    .cwiseQuotient(bv.cwiseProduct(bv)));
                });
}

Var Tape::scale(Var a, double s) {
    check_var(a);
    return push(v(a) * s, "scale", [a, s](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, g * s);
    });
}

Var Tape::add_scalar(Var a, double s) {
    check_var(a);
    return push(v(a).array() + s, "add_scalar",
                [a](Tape& t, const Matrix& g) { t.add_grad(a.idx, g); });
}

Var Tape::max_scalar(Var a, double s) {
    check_var(a);
    Matrix out = v(a).cwiseMax(s);
    return push(std::move(out), "max_scalar",
                [a, s](Tape& t, const Matrix& g) {
                    // subgradient: pass where a > s
                    Matrix mask =
                        (t.v(a).array() > s).cast<double>().matrix();
                    t.add_grad(a.idx, g.cwiseProduct(mask));
                });
}

Var Tape::square(Var a) {
    check_var(a);
    return push(v(a).cwiseProduct(v(a)), "square",
                [a](Tape& t, const Matrix& g) {
                    t.add_grad(a.idx, 2.0 * g.cwiseProduct(t.v(a)));
                });
}

Var Tape::exp(Var a) {
    check_var(a);
    Matrix out = v(a).array().exp();
    return push(std::move(out), "exp", [a, self = this](Tape& t,
                                                        const Matrix& g) {
        (void)self;
        // out value is the node following a's evaluation; recompute is cheap
        t.add_grad(a.idx, g.cwiseProduct(Matrix(t.v(a).array().exp())));
    });
}

Var Tape::log(Var a) {
    check_var(a);
    Matrix out = v(a).array().log();
    return push(std::move(out), "log", [a](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, g.cwiseQuotient(t.v(a)));
    });
}

Var Tape::sigmoid(Var a) {
    check_var(a);
    return push(sigmoid_of(v(a)), "sigmoid", [a](Tape& t, const Matrix& g) {
        Matrix s = sigmoid_of(t.v(a));
        t.add_grad(a.idx,
                   g.cwiseProduct(s.cwiseProduct(Matrix(1.0 - s.array()))));
    });
}

Var Tape::silu(Var a) {
    check_var(a);
    Matrix s = sigmoid_of(v(a));
    return push(v(a).cwiseProduct(s), "silu", [a](Tape& t, const Matrix& g) {
        Matrix s = sigmoid_of(t.v(a));
        // d/dx x*s(x) = s(x) * (1 + x*(1 - s(x)))
        Matrix d = s.cwiseProduct(
            Matrix(1.0 + (t.v(a).array() * (1.0 - s.array()))));
        t.add_grad(a.idx, g.cwiseProduct(d));
    });
}

Var Tape::softplus(Var a) {
    check_var(a);
    // stable: max(x,0) + log1p(exp(-|x|))
    Matrix out = v(a).unaryExpr([](double x) {
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    });
    return push(std::move(out), "softplus", [a](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, g.cwiseProduct(sigmoid_of(t.v(a))));
    });
}

Var Tape::softmax_rows(Var a) {
    check_var(a);
    Matrix out = v(a);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        double mx = out.row(r).maxCoeff();
        out.row(r) = (out.row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    Var res = push(std::move(out), "softmax_rows", {});
    nodes_[res.idx].back = [a, res](Tape& t, const Matrix& g) {
        const Matrix& y = t.v(res);
        Matrix dx(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double dot = g.row(r).dot(y.row(r));
            dx.row(r) =
                y.row(r).cwiseProduct(Matrix(g.row(r).array() - dot));
        }
        t.add_grad(a.idx, dx);
    };
    return res;
}

Var Tape::concat_cols(Var a, Var b) {
    check_var(a);
    check_var(b);
    require(v(a).rows() == v(b).rows(), "concat_cols", a, b);
    Matrix out(v(a).rows(), v(a).cols() + v(b).cols());
    out << v(a), v(b);
    Eigen::Index ca = v(a).cols();
    return push(std::move(out), "concat_cols",
                [a, b, ca](Tape& t, const Matrix& g) {
                    t.add_grad(a.idx, g.leftCols(ca));
                    t.add_grad(b.idx, g.rightCols(g.cols() - ca));
                });
}

Var Tape::gather_rows(Var table, std::vector<int> idx) {
    check_var(table);
    const Matrix& tab = v(table);
    Matrix out(static_cast<Eigen::Index>(idx.size()), tab.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= tab.rows())
            throw ShapeError("gather_rows: index " + std::to_string(idx[i]) +
                             " out of range for " + shape_str(tab));
        out.row(static_cast<Eigen::Index>(i)) = tab.row(idx[i]);
    }
    return push(std::move(out), "gather_rows",
                [table, idx = std::move(idx)](Tape& t, const Matrix& g) {
                    Matrix d = Matrix::Zero(t.v(table).rows(),
                                            t.v(table).cols());
                    for (std::size_t i = 0; i < idx.size(); ++i)
                        d.row(idx[i]) +=
                            g.row(static_cast<Eigen::Index>(i));
                    t.add_grad(table.idx, d);
                });
}

Var Tape::row_sum(Var a) {
    check_var(a);
    Matrix out = v(a).rowwise().sum();
    return push(std::move(out), "row_sum", [a](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, g * Matrix::Ones(1, t.v(a).cols()));
    });
}

Var Tape::col_sum(Var a) {
    check_var(a);
    Matrix out = v(a).colwise().sum();
    return push(std::move(out), "col_sum", [a](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, Matrix::Ones(t.v(a).rows(), 1) * g);
    });
}

Var Tape::sum(Var a) {
    check_var(a);
    Matrix out(1, 1);
    out(0, 0) = v(a).sum();
    return push(std::move(out), "sum", [a](Tape& t, const Matrix& g) {
        t.add_grad(a.idx,
                   Matrix::Constant(t.v(a).rows(), t.v(a).cols(), g(0, 0)));
    });
}

Var Tape::mean(Var a) {
    check_var(a);
    double n = static_cast<double>(v(a).size());
    Matrix out(1, 1);
    out(0, 0) = v(a).sum() / n;
    return push(std::move(out), "mean", [a, n](Tape& t, const Matrix& g) {
        t.add_grad(a.idx, Matrix::Constant(t.v(a).rows(), t.v(a).cols(),
                                           g(0, 0) / n));
    });
}

double Tape::scalar(Var v) const {
    const Matrix& m = nodes_[check_var(v)].val;
    if (m.size() != 1)
        throw ShapeError("scalar: node is " + shape_str(m));
    return m(0, 0);
}

void Tape::backward(Var out) {
    if (nodes_[check_var(out)].val.size() != 1)
        throw NumericError("backward: default seed requires scalar output");
    backward(out, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
    int o = check_var(out);
    if (nodes_.empty())
        throw NumericError("backward: empty tape (no forward recorded)");
    const Matrix& ov = nodes_[o].val;
    if (seed.rows() != ov.rows() || seed.cols() != ov.cols())
        throw ShapeError("backward: seed " + shape_str(seed) +
                         " does not match output " + shape_str(ov));
    nodes_[o].grad += seed;
    for (int i = o; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.isZero(0.0))
            continue;
        if (n.back)
            n.back(*this, n.grad);
        if (n.bound)
            n.bound->grad += n.grad;
        // clear so a second backward() pass re-accumulates from the seed only
        n.grad.setZero();
    }
}

} // namespace invdiff
