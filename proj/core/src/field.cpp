#include <jof/field.hpp>

#include <cmath>

namespace jof {

LatentCodes LatentCodes::zeros(int l_C, int l_S, int l_A) {
    LatentCodes c;
    c.f_C = Vector::Zero(l_C);
    c.f_S = Vector::Zero(l_S);
    c.f_A = Vector::Zero(l_A);
    return c;
}

LatentCodes LatentCodes::random(int l_C, int l_S, int l_A, double scale, Rng& rng) {
    LatentCodes c = zeros(l_C, l_S, l_A);
    for (Eigen::Index i = 0; i < c.f_C.size(); ++i) c.f_C[i] = scale * rng.normal();
    for (Eigen::Index i = 0; i < c.f_S.size(); ++i) c.f_S[i] = scale * rng.normal();
    for (Eigen::Index i = 0; i < c.f_A.size(); ++i) c.f_A[i] = scale * rng.normal();
    return c;
}

void LatentCodes::validate() const {
    if (!f_C.allFinite() || !f_S.allFinite() || !f_A.allFinite())
        throw NumericError("latent codes contain non-finite entries");
}

void JofParams::validate() const {
    if (k < 2) throw UsageError("branch count must be at least 2");
    if (!(tau > 0.0 && tau < 1.0)) throw UsageError("tau must lie in (0,1)");
    shape_net.validate();
    albedo_net.validate();
    if (shape_net.input_dim() != l_C + l_S + 3)
        throw UsageError("shape net input dim must be l_C+l_S+3");
    if (shape_net.output_dim() != k) throw UsageError("shape net must have k outputs");
    if (albedo_net.input_dim() != l_C + l_S + l_A + 3)
        throw UsageError("albedo net input dim must be l_C+l_S+l_A+3");
    if (albedo_net.output_dim() != 3 * k) throw UsageError("albedo net must have 3k outputs");
    if (shape_net.layers.back().act != Activation::Sigmoid ||
        albedo_net.layers.back().act != Activation::Sigmoid)
        throw UsageError("branch heads must be sigmoid");
}

JofParams JofParams::make(int k, int l_C, int l_S, int l_A, int trunk_width, int trunk_depth,
                          Rng& rng) {
    if (trunk_depth < 1) throw UsageError("trunk depth must be at least 1");
    JofParams p;
    p.k = k;
    p.l_C = l_C;
    p.l_S = l_S;
    p.l_A = l_A;

    auto dims_for = [&](int in, int out) {
        std::vector<int> dims = {in};
        for (int i = 0; i < trunk_depth; ++i) dims.push_back(trunk_width);
        dims.push_back(out);
        return dims;
    };
    std::vector<Activation> acts(static_cast<std::size_t>(trunk_depth), Activation::LeakyRelu);
    acts.push_back(Activation::Sigmoid);

    p.shape_net = DenseNet::make(dims_for(l_C + l_S + 3, k), acts, rng);
    p.albedo_net = DenseNet::make(dims_for(l_C + l_S + l_A + 3, 3 * k), acts, rng);
    p.validate();
    return p;
}

void JofParams::to_store(TensorStore& store, const std::string& prefix) const {
    Tensor meta;
    meta.name = prefix + ".meta";
    meta.dims = {5};
    meta.data = {static_cast<double>(k), tau, static_cast<double>(l_C), static_cast<double>(l_S),
                 static_cast<double>(l_A)};
    store.put(std::move(meta));
    shape_net.to_store(store, prefix + ".shape");
    albedo_net.to_store(store, prefix + ".albedo");
}

JofParams JofParams::from_store(const TensorStore& store, const std::string& prefix) {
    const Tensor& meta = store.get(prefix + ".meta");
    if (meta.data.size() != 5) throw IoError("bad field metadata: " + prefix);
    JofParams p;
    p.k = static_cast<int>(meta.data[0]);
    p.tau = meta.data[1];
    p.l_C = static_cast<int>(meta.data[2]);
    p.l_S = static_cast<int>(meta.data[3]);
    p.l_A = static_cast<int>(meta.data[4]);
    p.shape_net = DenseNet::from_store(store, prefix + ".shape");
    p.albedo_net = DenseNet::from_store(store, prefix + ".albedo");
    p.validate();
    return p;
}

std::uint64_t JofParams::shape_hash() const {
    TensorStore store;
    shape_net.to_store(store, "shape");
    const auto bytes = store.serialize();
    return fnv1a64(bytes.data(), bytes.size());
}

int argmax_branch(const Vector& branch_values) {
    if (branch_values.size() == 0) throw UsageError("empty branch vector");
    int best = 0;
    for (Eigen::Index i = 1; i < branch_values.size(); ++i)
        if (branch_values[i] > branch_values[best]) best = static_cast<int>(i);
    return best;
}

namespace {

void check_codes(const JofParams& params, const LatentCodes& codes) {
    if (codes.f_C.size() != params.l_C || codes.f_S.size() != params.l_S ||
        codes.f_A.size() != params.l_A)
        throw UsageError("latent code dimensions do not match the model");
}

void fill_shape_row(const JofParams& params, const LatentCodes& codes, const Vec3& x, double* row) {
    for (int i = 0; i < params.l_C; ++i) row[i] = codes.f_C[i];
    for (int i = 0; i < params.l_S; ++i) row[params.l_C + i] = codes.f_S[i];
    for (int i = 0; i < 3; ++i) row[params.l_C + params.l_S + i] = x[i];
}

void fill_albedo_row(const JofParams& params, const LatentCodes& codes, const Vec3& x, double* row) {
    const int base = params.l_C + params.l_S;
    for (int i = 0; i < params.l_C; ++i) row[i] = codes.f_C[i];
    for (int i = 0; i < params.l_S; ++i) row[params.l_C + i] = codes.f_S[i];
    for (int i = 0; i < params.l_A; ++i) row[base + i] = codes.f_A[i];
    for (int i = 0; i < 3; ++i) row[base + params.l_A + i] = x[i];
}

} // namespace

Vector shape_input(const JofParams& params, const LatentCodes& codes, const Vec3& x) {
    check_codes(params, codes);
    Vector in(params.l_C + params.l_S + 3);
    fill_shape_row(params, codes, x, in.data());
    return in;
}

Vector albedo_input(const JofParams& params, const LatentCodes& codes, const Vec3& x) {
    check_codes(params, codes);
    Vector in(params.l_C + params.l_S + params.l_A + 3);
    fill_albedo_row(params, codes, x, in.data());
    return in;
}

std::pair<double, Vector> shape_decode(const JofParams& params, const LatentCodes& codes,
                                       const Vec3& x) {
    Vector branch = params.shape_net.eval(shape_input(params, codes, x));
    return {branch[argmax_branch(branch)], std::move(branch)};
}

double occupancy(const JofParams& params, const LatentCodes& codes, const Vec3& x) {
    return shape_decode(params, codes, x).first;
}

int branch_index(const JofParams& params, const LatentCodes& codes, const Vec3& x) {
    return argmax_branch(params.shape_net.eval(shape_input(params, codes, x)));
}

Vec3 albedo_decode(const JofParams& params, const LatentCodes& codes, const Vec3& x) {
    const int idx = branch_index(params, codes, x);
    Vector rgb = params.albedo_net.eval(albedo_input(params, codes, x));
    return {rgb[3 * idx], rgb[3 * idx + 1], rgb[3 * idx + 2]};
}

FieldSample sample_field(const JofParams& params, const LatentCodes& codes, const Vec3& x) {
    FieldSample s;
    s.x = x;
    auto [o, branch] = shape_decode(params, codes, x);
    s.o = o;
    s.idx = argmax_branch(branch);
    s.branch_values = std::move(branch);
    Vector rgb = params.albedo_net.eval(albedo_input(params, codes, x));
    s.albedo = {rgb[3 * s.idx], rgb[3 * s.idx + 1], rgb[3 * s.idx + 2]};
    return s;
}

ShapeEval shape_forward(const JofParams& params, const LatentCodes& codes, const Vec3& x) {
    auto [y, tape] = forward(params.shape_net, shape_input(params, codes, x));
    ShapeEval e;
    e.branch_values = y;
    e.idx = argmax_branch(y);
    e.o = y[e.idx];
    e.tape = std::move(tape);
    return e;
}

ShapeGrad shape_backward(const JofParams& params, ShapeEval& eval, double d_o,
                         bool want_param_grads) {
    Vector gy = Vector::Zero(params.k);
    gy[eval.idx] = d_o;
    auto res = backward(eval.tape, gy, want_param_grads);
    ShapeGrad g;
    g.d_fC = res.input_grad.row(0).segment(0, params.l_C).transpose();
    g.d_fS = res.input_grad.row(0).segment(params.l_C, params.l_S).transpose();
    for (int i = 0; i < 3; ++i) g.d_x[i] = res.input_grad(0, params.l_C + params.l_S + i);
    g.params = std::move(res.grads);
    return g;
}

AlbedoEval albedo_forward(const JofParams& params, const LatentCodes& codes, const Vec3& x,
                          int idx) {
    if (idx < 0 || idx >= params.k) throw UsageError("branch index out of range");
    auto [y, tape] = forward(params.albedo_net, albedo_input(params, codes, x));
    AlbedoEval e;
    e.idx = idx;
    e.rgb = {y[3 * idx], y[3 * idx + 1], y[3 * idx + 2]};
    e.tape = std::move(tape);
    return e;
}

AlbedoGrad albedo_backward(const JofParams& params, AlbedoEval& eval, const Vec3& d_rgb,
                           bool want_param_grads) {
    Vector gy = Vector::Zero(3 * params.k);
    for (int i = 0; i < 3; ++i) gy[3 * eval.idx + i] = d_rgb[i];
    auto res = backward(eval.tape, gy, want_param_grads);
    AlbedoGrad g;
    const int base = params.l_C + params.l_S;
    g.d_fC = res.input_grad.row(0).segment(0, params.l_C).transpose();
    g.d_fS = res.input_grad.row(0).segment(params.l_C, params.l_S).transpose();
    g.d_fA = res.input_grad.row(0).segment(base, params.l_A).transpose();
    for (int i = 0; i < 3; ++i) g.d_x[i] = res.input_grad(0, base + params.l_A + i);
    g.params = std::move(res.grads);
    return g;
}

ShapeBatchEval shape_forward_batch(const JofParams& params, const LatentCodes& codes,
                                   const std::vector<Vec3>& xs) {
    check_codes(params, codes);
    const Eigen::Index n = static_cast<Eigen::Index>(xs.size());
    RowMatrix in(n, params.l_C + params.l_S + 3);
    for (Eigen::Index r = 0; r < n; ++r) fill_shape_row(params, codes, xs[r], in.data() + r * in.cols());
    auto [y, tape] = forward(params.shape_net, in);
    ShapeBatchEval e;
    e.branch_values = y;
    e.o.resize(xs.size());
    e.idx.resize(xs.size());
    for (Eigen::Index r = 0; r < n; ++r) {
        Vector row = y.row(r).transpose();
        const int idx = argmax_branch(row);
        e.idx[r] = idx;
        e.o[r] = row[idx];
    }
    e.tape = std::move(tape);
    return e;
}

ShapeBatchGrad shape_backward_batch(const JofParams& params, ShapeBatchEval& eval,
                                    const std::vector<double>& d_o, bool want_param_grads) {
    const Eigen::Index n = eval.branch_values.rows();
    if (static_cast<Eigen::Index>(d_o.size()) != n) throw UsageError("gradient count mismatch");
    RowMatrix gy = RowMatrix::Zero(n, params.k);
    for (Eigen::Index r = 0; r < n; ++r) gy(r, eval.idx[r]) = d_o[r];
    auto res = backward(eval.tape, gy, want_param_grads);
    ShapeBatchGrad g;
    g.d_fC = Vector::Zero(params.l_C);
    g.d_fS = Vector::Zero(params.l_S);
    g.d_x.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (int i = 0; i < params.l_C; ++i) g.d_fC[i] += res.input_grad(r, i);
        for (int i = 0; i < params.l_S; ++i) g.d_fS[i] += res.input_grad(r, params.l_C + i);
        for (int i = 0; i < 3; ++i) g.d_x[r][i] = res.input_grad(r, params.l_C + params.l_S + i);
    }
    g.params = std::move(res.grads);
    return g;
}

AlbedoBatchEval albedo_forward_batch(const JofParams& params, const LatentCodes& codes,
                                     const std::vector<Vec3>& xs, const std::vector<int>& idx) {
    check_codes(params, codes);
    if (xs.size() != idx.size()) throw UsageError("point/index count mismatch");
    const Eigen::Index n = static_cast<Eigen::Index>(xs.size());
    RowMatrix in(n, params.l_C + params.l_S + params.l_A + 3);
    for (Eigen::Index r = 0; r < n; ++r)
        fill_albedo_row(params, codes, xs[r], in.data() + r * in.cols());
    auto [y, tape] = forward(params.albedo_net, in);
    AlbedoBatchEval e;
    e.rgb.resize(xs.size());
    e.idx = idx;
    for (Eigen::Index r = 0; r < n; ++r) {
        const int b = idx[r];
        if (b < 0 || b >= params.k) throw UsageError("branch index out of range");
        e.rgb[r] = {y(r, 3 * b), y(r, 3 * b + 1), y(r, 3 * b + 2)};
    }
    e.tape = std::move(tape);
    return e;
}

AlbedoBatchGrad albedo_backward_batch(const JofParams& params, AlbedoBatchEval& eval,
                                      const std::vector<Vec3>& d_rgb, bool want_param_grads) {
    const Eigen::Index n = static_cast<Eigen::Index>(eval.rgb.size());
    if (d_rgb.size() != eval.rgb.size()) throw UsageError("gradient count mismatch");
    RowMatrix gy = RowMatrix::Zero(n, 3 * params.k);
    for (Eigen::Index r = 0; r < n; ++r)
        for (int i = 0; i < 3; ++i) gy(r, 3 * eval.idx[r] + i) = d_rgb[r][i];
    auto res = backward(eval.tape, gy, want_param_grads);
    AlbedoBatchGrad g;
    const int base = params.l_C + params.l_S;
    g.d_fC = Vector::Zero(params.l_C);
    g.d_fS = Vector::Zero(params.l_S);
    g.d_fA = Vector::Zero(params.l_A);
    g.d_x.resize(eval.rgb.size());
    for (Eigen::Index r = 0; r < n; ++r) {
        for (int i = 0; i < params.l_C; ++i) g.d_fC[i] += res.input_grad(r, i);
        for (int i = 0; i < params.l_S; ++i) g.d_fS[i] += res.input_grad(r, params.l_C + i);
        for (int i = 0; i < params.l_A; ++i) g.d_fA[i] += res.input_grad(r, base + i);
        for (int i = 0; i < 3; ++i) g.d_x[r][i] = res.input_grad(r, base + params.l_A + i);
    }
    g.params = std::move(res.grads);
    return g;
}

namespace {

NormalResult normal_from_gradient(const Vec3& g, const Vec3& fallback) {
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (norm < kNormalEps) {
        const double fn = std::sqrt(fallback[0] * fallback[0] + fallback[1] * fallback[1] +
                                    fallback[2] * fallback[2]);
        if (fn < kNormalEps) throw UsageError("degenerate normal fallback direction");
        return {{fallback[0] / fn, fallback[1] / fn, fallback[2] / fn}, true};
    }
    // occupancy decreases outward, so the outward normal is the negated
    // gradient of o
    return {{-g[0] / norm, -g[1] / norm, -g[2] / norm}, false};
}

} // namespace

NormalResult surface_normal(const JofParams& params, const LatentCodes& codes, const Vec3& x,
                            const Vec3& degenerate_fallback) {
    ShapeEval eval = shape_forward(params, codes, x);
    ShapeGrad grad = shape_backward(params, eval, 1.0, false);
    return normal_from_gradient(grad.d_x, degenerate_fallback);
}

std::vector<NormalResult> surface_normal_batch(const JofParams& params, const LatentCodes& codes,
                                               const std::vector<Vec3>& xs,
                                               const std::vector<Vec3>& fallbacks) {
    if (xs.size() != fallbacks.size()) throw UsageError("point/fallback count mismatch");
    ShapeBatchEval eval = shape_forward_batch(params, codes, xs);
    ShapeBatchGrad grad = shape_backward_batch(params, eval, std::vector<double>(xs.size(), 1.0), false);
    std::vector<NormalResult> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        out[i] = normal_from_gradient(grad.d_x[i], fallbacks[i]);
    return out;
}

} // namespace jof
