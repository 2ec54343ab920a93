#pragma once

#include <jof/common.hpp>
#include <jof/rng.hpp>
#include <jof/tensor.hpp>

#include <functional>
#include <string>
#include <vector>

namespace jof {

enum class Activation { Identity, Relu, LeakyRelu, Sigmoid, Tanh };

// Nonzero gradient everywhere keeps occupancy decoders trainable when units
// saturate negative.
constexpr double kLeakySlope = 0.02;

double activate(Activation act, double a);
double activate_derivative(Activation act, double pre, double post);
const char* activation_name(Activation act);
Activation activation_from_name(const std::string& name);

// Row-major sample batches: one sample per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DenseLayer {
    Matrix weight; // out x in, row-major
    Vector bias;   // out
    Activation act = Activation::Identity;
};

// Plain fully connected network. Parameters are read-only during evaluation;
// updates go through the optimizer between batches.
struct DenseNet {
    std::vector<DenseLayer> layers;

    int input_dim() const;
    int output_dim() const;
    std::size_t param_count() const;
    void validate() const;

    // Glorot-uniform weights, zero biases.
    static DenseNet make(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng);

    // Value-only evaluation, no tape. Batched rows evaluate through the same
    // per-sample kernel as the single-sample path, so results are bit-equal.
    Vector eval(const Vector& x) const;
    RowMatrix eval(const RowMatrix& x) const;

    void to_store(TensorStore& store, const std::string& prefix) const;
    static DenseNet from_store(const TensorStore& store, const std::string& prefix);
};

// Recorded intermediates of one forward pass. Single use: backward consumes
// the tape and rejects a second invocation.
struct Tape {
    const DenseNet* net = nullptr;
    RowMatrix input;             // n x in
    std::vector<RowMatrix> pre;  // per layer, n x out_l
    std::vector<RowMatrix> post; // per layer, n x out_l
    bool spent = false;

    Eigen::Index batch() const { return input.rows(); }
};

struct NetGrads {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;

    static NetGrads zeros_like(const DenseNet& net);
    void add_scaled(const NetGrads& other, double s);
    void scale(double s);
    bool all_finite() const;
};

struct BackwardResult {
    NetGrads grads;       // empty when param grads not requested
    RowMatrix input_grad; // n x in
};

// Forward pass recording intermediates. Throws UsageError on dimension
// mismatch, NumericError on non-finite input.
std::pair<Vector, Tape> forward(const DenseNet& net, const Vector& x);
std::pair<RowMatrix, Tape> forward(const DenseNet& net, const RowMatrix& x);

// Reverse-mode gradients of <output_grad, y> with respect to parameters and
// input. Consumes the tape.
BackwardResult backward(Tape& tape, const RowMatrix& output_grad, bool want_param_grads = true);
BackwardResult backward(Tape& tape, const Vector& output_grad, bool want_param_grads = true);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h.
Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                                  double h);

// Flat named views over parameter storage, consumed by the optimizer.
struct ParamView {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};

struct GradView {
    const double* data = nullptr;
    std::size_t size = 0;
};

std::vector<ParamView> param_views(DenseNet& net, const std::string& prefix);
std::vector<GradView> grad_views(const NetGrads& grads);

} // namespace jof
