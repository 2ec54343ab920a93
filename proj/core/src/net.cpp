#include <jof/net.hpp>

#include <cmath>
#include <cstring>

namespace jof {

double activate(Activation act, double a) {
    switch (act) {
    case Activation::Identity: return a;
    case Activation::Relu: return a > 0.0 ? a : 0.0;
    case Activation::LeakyRelu: return a > 0.0 ? a : kLeakySlope * a;
    case Activation::Sigmoid: {
        if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
        const double e = std::exp(a);
        return e / (1.0 + e);
    }
    case Activation::Tanh: return std::tanh(a);
    }
    throw UsageError("unknown activation");
}

double activate_derivative(Activation act, double pre, double post) {
    switch (act) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::LeakyRelu: return pre > 0.0 ? 1.0 : kLeakySlope;
    case Activation::Sigmoid: return post * (1.0 - post);
    case Activation::Tanh: return 1.0 - post * post;
    }
    throw UsageError("unknown activation");
}

const char* activation_name(Activation act) {
    switch (act) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    }
    throw UsageError("unknown activation");
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::Relu;
    if (name == "leaky_relu") return Activation::LeakyRelu;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "tanh") return Activation::Tanh;
    throw UsageError("unknown activation name: " + name);
}

int DenseNet::input_dim() const {
    if (layers.empty()) throw UsageError("empty network");
    return static_cast<int>(layers.front().weight.cols());
}

int DenseNet::output_dim() const {
    if (layers.empty()) throw UsageError("empty network");
    return static_cast<int>(layers.back().weight.rows());
}

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

void DenseNet::validate() const {
    if (layers.empty()) throw UsageError("empty network");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.rows() <= 0 || l.weight.cols() <= 0)
            throw UsageError("layer " + std::to_string(i) + " has empty weight");
        if (l.bias.size() != l.weight.rows())
            throw UsageError("layer " + std::to_string(i) + " bias size mismatch");
        if (i > 0 && layers[i - 1].weight.rows() != l.weight.cols())
            throw UsageError("layer " + std::to_string(i) + " input dim does not match previous output");
        if (!l.weight.allFinite() || !l.bias.allFinite())
            throw NumericError("layer " + std::to_string(i) + " has non-finite parameters");
    }
}

DenseNet DenseNet::make(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng) {
    if (dims.size() < 2) throw UsageError("network needs at least one layer");
    if (acts.size() != dims.size() - 1) throw UsageError("one activation per layer required");
    DenseNet net;
    net.layers.resize(dims.size() - 1);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const int fan_in = dims[i];
        const int fan_out = dims[i + 1];
        if (fan_in <= 0 || fan_out <= 0) throw UsageError("layer dims must be positive");
        DenseLayer& l = net.layers[i];
        l.weight.resize(fan_out, fan_in);
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                l.weight(r, c) = rng.uniform(-bound, bound);
        l.bias = Vector::Zero(fan_out);
        l.act = acts[i];
    }
    net.validate();
    return net;
}

namespace {

// Shared per-sample kernel; batched paths call it row by row so batch results
// are bit-equal to single-sample evaluation.
void affine_row(const Matrix& weight, const Vector& bias, const double* x, double* out) {
    const Eigen::Index rows = weight.rows();
    const Eigen::Index cols = weight.cols();
    const double* w = weight.data();
    for (Eigen::Index r = 0; r < rows; ++r, w += cols) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < cols; ++c) acc += w[c] * x[c];
        out[r] = acc + bias[r];
    }
}

void check_input(const DenseNet& net, Eigen::Index dim, Eigen::Index n, const double* data) {
    if (net.layers.empty()) throw UsageError("empty network");
    if (dim != net.input_dim())
        throw UsageError("input dim " + std::to_string(dim) + " does not match network input dim " +
                         std::to_string(net.input_dim()));
    const std::size_t total = static_cast<std::size_t>(dim) * static_cast<std::size_t>(n);
    for (std::size_t i = 0; i < total; ++i)
        if (!is_finite(data[i])) throw NumericError("non-finite network input");
}

} // namespace

Vector DenseNet::eval(const Vector& x) const {
    check_input(*this, x.size(), 1, x.data());
    Vector cur = x;
    Vector next;
    for (const auto& l : layers) {
        next.resize(l.weight.rows());
        affine_row(l.weight, l.bias, cur.data(), next.data());
        for (Eigen::Index i = 0; i < next.size(); ++i) next[i] = activate(l.act, next[i]);
        cur.swap(next);
    }
    return cur;
}

RowMatrix DenseNet::eval(const RowMatrix& x) const {
    check_input(*this, x.cols(), x.rows(), x.data());
    const Eigen::Index n = x.rows();
    RowMatrix cur = x;
    RowMatrix next;
    for (const auto& l : layers) {
        next.resize(n, l.weight.rows());
        for (Eigen::Index s = 0; s < n; ++s) {
            affine_row(l.weight, l.bias, cur.data() + s * cur.cols(), next.data() + s * next.cols());
            double* row = next.data() + s * next.cols();
            for (Eigen::Index i = 0; i < next.cols(); ++i) row[i] = activate(l.act, row[i]);
        }
        cur.swap(next);
    }
    return cur;
}

std::pair<RowMatrix, Tape> forward(const DenseNet& net, const RowMatrix& x) {
    check_input(net, x.cols(), x.rows(), x.data());
    const Eigen::Index n = x.rows();
    Tape tape;
    tape.net = &net;
    tape.input = x;
    tape.pre.resize(net.layers.size());
    tape.post.resize(net.layers.size());
    const RowMatrix* cur = &tape.input;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const DenseLayer& l = net.layers[li];
        RowMatrix& pre = tape.pre[li];
        RowMatrix& post = tape.post[li];
        pre.resize(n, l.weight.rows());
        post.resize(n, l.weight.rows());
        for (Eigen::Index s = 0; s < n; ++s) {
            affine_row(l.weight, l.bias, cur->data() + s * cur->cols(), pre.data() + s * pre.cols());
            const double* p = pre.data() + s * pre.cols();
            double* q = post.data() + s * post.cols();
            for (Eigen::Index i = 0; i < pre.cols(); ++i) q[i] = activate(l.act, p[i]);
        }
        cur = &post;
    }
    return {tape.post.back(), std::move(tape)};
}

std::pair<Vector, Tape> forward(const DenseNet& net, const Vector& x) {
    RowMatrix xm(1, x.size());
    xm.row(0) = x.transpose();
    auto [y, tape] = forward(net, xm);
    Vector yv = y.row(0).transpose();
    return {std::move(yv), std::move(tape)};
}

NetGrads NetGrads::zeros_like(const DenseNet& net) {
    NetGrads g;
    g.weight.reserve(net.layers.size());
    g.bias.reserve(net.layers.size());
    for (const auto& l : net.layers) {
        g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
        g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
}

void NetGrads::add_scaled(const NetGrads& other, double s) {
    if (other.weight.size() != weight.size()) throw UsageError("gradient shape mismatch");
    for (std::size_t i = 0; i < weight.size(); ++i) {
        weight[i] += s * other.weight[i];
        bias[i] += s * other.bias[i];
    }
}

void NetGrads::scale(double s) {
    for (auto& w : weight) w *= s;
    for (auto& b : bias) b *= s;
}

bool NetGrads::all_finite() const {
    for (const auto& w : weight)
        if (!w.allFinite()) return false;
    for (const auto& b : bias)
        if (!b.allFinite()) return false;
    return true;
}

BackwardResult backward(Tape& tape, const RowMatrix& output_grad, bool want_param_grads) {
    if (tape.net == nullptr) throw UsageError("tape was not produced by forward");
    if (tape.spent) throw UsageError("tape already consumed by backward");
    tape.spent = true;
    const DenseNet& net = *tape.net;
    const Eigen::Index n = tape.batch();
    if (output_grad.rows() != n || output_grad.cols() != net.output_dim())
        throw UsageError("output gradient shape mismatch");
    if (!output_grad.allFinite()) throw NumericError("non-finite output gradient");

    BackwardResult result;
    if (want_param_grads) result.grads = NetGrads::zeros_like(net);

    RowMatrix delta = output_grad; // gradient w.r.t. post-activation of current layer
    RowMatrix prev_delta;
    for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
        const DenseLayer& l = net.layers[li];
        const RowMatrix& pre = tape.pre[li];
        const RowMatrix& post = tape.post[li];
        const RowMatrix& below = (li == 0) ? tape.input : tape.post[li - 1];
        const Eigen::Index out = l.weight.rows();
        const Eigen::Index in = l.weight.cols();

        // gradient w.r.t. pre-activation, in place
        for (Eigen::Index s = 0; s < n; ++s) {
            double* d = delta.data() + s * out;
            const double* p = pre.data() + s * out;
            const double* q = post.data() + s * out;
            for (Eigen::Index i = 0; i < out; ++i) d[i] *= activate_derivative(l.act, p[i], q[i]);
        }

        if (want_param_grads) {
            Matrix& gw = result.grads.weight[li];
            Vector& gb = result.grads.bias[li];
            for (Eigen::Index s = 0; s < n; ++s) {
                const double* d = delta.data() + s * out;
                const double* z = below.data() + s * in;
                for (Eigen::Index r = 0; r < out; ++r) {
                    double* grow = gw.data() + r * in;
                    for (Eigen::Index c = 0; c < in; ++c) grow[c] += d[r] * z[c];
                    gb[r] += d[r];
                }
            }
        }

        prev_delta.setZero(n, in);
        for (Eigen::Index s = 0; s < n; ++s) {
            const double* d = delta.data() + s * out;
            double* g = prev_delta.data() + s * in;
            const double* w = l.weight.data();
            for (Eigen::Index r = 0; r < out; ++r, w += in) {
                const double dr = d[r];
                for (Eigen::Index c = 0; c < in; ++c) g[c] += dr * w[c];
            }
        }
        delta.swap(prev_delta);
    }
    result.input_grad = std::move(delta);
    return result;
}

BackwardResult backward(Tape& tape, const Vector& output_grad, bool want_param_grads) {
    RowMatrix g(1, output_grad.size());
    g.row(0) = output_grad.transpose();
    return backward(tape, g, want_param_grads);
}

Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                                  double h) {
    if (h <= 0.0) throw UsageError("finite difference step must be positive");
    Vector g(x.size());
    Vector probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        probe[i] = xi + h;
        const double fp = f(probe);
        probe[i] = xi - h;
        const double fm = f(probe);
        probe[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

void DenseNet::to_store(TensorStore& store, const std::string& prefix) const {
    Tensor meta;
    meta.name = prefix + ".layer_count";
    meta.dims = {1};
    meta.data = {static_cast<double>(layers.size())};
    store.put(std::move(meta));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string base = prefix + ".layer" + std::to_string(i);
        Tensor w = Tensor::from_matrix(base + ".weight", layers[i].weight);
        store.put(std::move(w));
        Tensor b = Tensor::from_vector(base + ".bias", layers[i].bias);
        store.put(std::move(b));
        Tensor a;
        a.name = base + ".act";
        a.dims = {1};
        a.data = {static_cast<double>(static_cast<int>(layers[i].act))};
        store.put(std::move(a));
    }
}

DenseNet DenseNet::from_store(const TensorStore& store, const std::string& prefix) {
    const Tensor& meta = store.get(prefix + ".layer_count");
    const std::size_t count = static_cast<std::size_t>(meta.as_scalar());
    if (count == 0) throw IoError("stored network has no layers: " + prefix);
    DenseNet net;
    net.layers.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::string base = prefix + ".layer" + std::to_string(i);
        net.layers[i].weight = store.get(base + ".weight").as_matrix();
        net.layers[i].bias = store.get(base + ".bias").as_vector();
        const int code = static_cast<int>(store.get(base + ".act").as_scalar());
        if (code < 0 || code > static_cast<int>(Activation::Tanh))
            throw IoError("stored network has invalid activation code");
        net.layers[i].act = static_cast<Activation>(code);
    }
    net.validate();
    return net;
}

std::vector<ParamView> param_views(DenseNet& net, const std::string& prefix) {
    std::vector<ParamView> views;
    views.reserve(net.layers.size() * 2);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::string base = prefix + ".layer" + std::to_string(i);
        views.push_back({base + ".weight", net.layers[i].weight.data(),
                         static_cast<std::size_t>(net.layers[i].weight.size())});
        views.push_back({base + ".bias", net.layers[i].bias.data(),
                         static_cast<std::size_t>(net.layers[i].bias.size())});
    }
    return views;
}

std::vector<GradView> grad_views(const NetGrads& grads) {
    std::vector<GradView> views;
    views.reserve(grads.weight.size() * 2);
    for (std::size_t i = 0; i < grads.weight.size(); ++i) {
        views.push_back({grads.weight[i].data(), static_cast<std::size_t>(grads.weight[i].size())});
        views.push_back({grads.bias[i].data(), static_cast<std::size_t>(grads.bias[i].size())});
    }
    return views;
}

} // namespace jof
