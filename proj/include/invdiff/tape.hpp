#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace invdiff {

using Matrix = Eigen::MatrixXd;

// Shape mismatch in a tape op; message names the op and the shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf produced by an op, or backward called in an invalid state.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A named trainable tensor with its gradient accumulator.
struct Param {
    std::string name;
    Matrix value;
    Matrix grad;

    Param(std::string n, Matrix v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return value.size(); }
};

class Tape;

// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int idx = -1;
};

// Reverse-mode tape over dense double matrices. Fixed op vocabulary; every
// op checks shapes up front and finiteness of its result. Calling
// backward() twice without zeroing accumulates (grads double exactly).
class Tape {
public:
    Var constant(Matrix v);
    Var param(Param& p); // leaf whose backward adds into p.grad

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);        // same shape
    Var add_rowvec(Var a, Var b); // b: 1 x cols, broadcast over rows
    Var sub(Var a, Var b);
    Var mul(Var a, Var b); // elementwise
    Var cdiv(Var a, Var b); // elementwise
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var max_scalar(Var a, double s); // elementwise max(a, s)
    Var square(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var sigmoid(Var a);
    Var silu(Var a);
    Var softplus(Var a);
    Var softmax_rows(Var a);
    Var concat_cols(Var a, Var b);
    Var gather_rows(Var table, std::vector<int> idx);
    Var row_sum(Var a); // N x 1
    Var col_sum(Var a); // 1 x E
    Var sum(Var a);     // 1 x 1
    Var mean(Var a);    // 1 x 1

    const Matrix& val(Var v) const { return nodes_[check_var(v)].val; }
    const Matrix& grad(Var v) const { return nodes_[check_var(v)].grad; }
    double scalar(Var v) const;

    // Seeds the output gradient and runs the tape in reverse. Param leaves
    // accumulate into their Param::grad.
    void backward(Var out, const Matrix& seed);
    void backward(Var out); // scalar output, seed = 1

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix val;
        Matrix grad;
        std::function<void(Tape&, const Matrix&)> back; // empty for constants
        Param* bound = nullptr;
    };

    std::vector<Node> nodes_;

    int check_var(Var v) const;
    Var push(Matrix val, const char* op,
             std::function<void(Tape&, const Matrix&)> back);
    void add_grad(int idx, const Matrix& g) { nodes_[idx].grad += g; }
    const Matrix& v(Var a) const { return nodes_[a.idx].val; }

    static std::string shape_str(const Matrix& m);
    void require(bool ok, const char* op, Var a, Var b) const;
    void require(bool ok, const char* op, Var a) const;
};

} // namespace invdiff
