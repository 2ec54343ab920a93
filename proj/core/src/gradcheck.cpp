#include <jof/gradcheck.hpp>

#include <jof/field.hpp>

#include <cmath>

namespace jof {

void GradcheckResult::merge(const GradcheckResult& other) {
    comparisons += other.comparisons;
    failures += other.failures;
    resampled += other.resampled;
    max_rel_err = std::max(max_rel_err, other.max_rel_err);
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

bool probe_is_smooth(const DenseNet& net, const Vector& x, double margin) {
    auto [y, tape] = forward(net, x);
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const Activation act = net.layers[li].act;
        if (act != Activation::Relu && act != Activation::LeakyRelu) continue;
        const RowMatrix& pre = tape.pre[li];
        for (Eigen::Index i = 0; i < pre.cols(); ++i)
            if (std::abs(pre(0, i)) < margin) return false;
    }
    return true;
}

namespace {

void compare(GradcheckResult& res, const GradcheckConfig& cfg, double analytic, double fd) {
    if (std::abs(analytic) <= cfg.grad_floor) return;
    ++res.comparisons;
    const double err = relative_error(analytic, fd);
    res.max_rel_err = std::max(res.max_rel_err, err);
    if (!(err < cfg.rel_tol)) ++res.failures;
}

void check_one_net(GradcheckResult& res, const GradcheckConfig& cfg, Activation act,
                   std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Activation> acts = {act, act, Activation::Identity};
    DenseNet net = DenseNet::make({4, 6, 6, 1}, acts, rng);

    Vector x(4);
    bool smooth = false;
    for (int attempt = 0; attempt < cfg.max_resamples && !smooth; ++attempt) {
        for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-1.0, 1.0);
        smooth = probe_is_smooth(net, x, cfg.kink_margin);
        if (!smooth) ++res.resampled;
    }
    if (!smooth) return;

    auto [y, tape] = forward(net, x);
    auto grads = backward(tape, Vector(Vector::Ones(1)));

    auto f_input = [&](const Vector& xv) { return net.eval(xv)[0]; };
    const Vector fd_in = finite_difference_gradient(f_input, x, cfg.h);
    for (int i = 0; i < 4; ++i) compare(res, cfg, grads.input_grad(0, i), fd_in[i]);

    DenseNet probe = net;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const Eigen::Index rows = net.layers[li].weight.rows();
        const Eigen::Index cols = net.layers[li].weight.cols();
        // spot-check a deterministic subset of weights plus one bias per layer
        for (int pick = 0; pick < 3; ++pick) {
            const Eigen::Index r = (pick * 7 + static_cast<Eigen::Index>(li)) % rows;
            const Eigen::Index c = (pick * 5 + 1) % cols;
            auto f_w = [&](const Vector& wv) {
                probe.layers[li].weight(r, c) = wv[0];
                const double out = probe.eval(x)[0];
                probe.layers[li].weight(r, c) = net.layers[li].weight(r, c);
                return out;
            };
            Vector w0(1);
            w0[0] = net.layers[li].weight(r, c);
            compare(res, cfg, grads.grads.weight[li](r, c),
                    finite_difference_gradient(f_w, w0, cfg.h)[0]);
        }
        const Eigen::Index br = static_cast<Eigen::Index>(li) % rows;
        auto f_b = [&](const Vector& bv) {
            probe.layers[li].bias[br] = bv[0];
            const double out = probe.eval(x)[0];
            probe.layers[li].bias[br] = net.layers[li].bias[br];
            return out;
        };
        Vector b0(1);
        b0[0] = net.layers[li].bias[br];
        compare(res, cfg, grads.grads.bias[li][br], finite_difference_gradient(f_b, b0, cfg.h)[0]);
    }
}

} // namespace

GradcheckResult run_net_gradcheck(const GradcheckConfig& cfg) {
    GradcheckResult res;
    const Activation acts[] = {Activation::Identity, Activation::Relu, Activation::LeakyRelu,
                               Activation::Sigmoid, Activation::Tanh};
    for (Activation act : acts)
        for (int i = 0; i < cfg.nets_per_activation; ++i)
            check_one_net(res, cfg, act, cfg.seed + static_cast<std::uint64_t>(i) * 131 + static_cast<std::uint64_t>(act) * 7919);
    return res;
}

namespace {

// The occupancy max is itself a kink where the top two branches tie; FD is
// valid only when the argmax has a clear lead.
bool field_probe_is_smooth(const JofParams& params, const LatentCodes& codes, const Vec3& x,
                           double margin) {
    if (!probe_is_smooth(params.shape_net, shape_input(params, codes, x), margin)) return false;
    if (!probe_is_smooth(params.albedo_net, albedo_input(params, codes, x), margin)) return false;
    auto [o, branches] = shape_decode(params, codes, x);
    const int top = argmax_branch(branches);
    for (Eigen::Index j = 0; j < branches.size(); ++j)
        if (static_cast<int>(j) != top && o - branches[j] < margin) return false;
    return true;
}

void check_one_field(GradcheckResult& res, const GradcheckConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    JofParams params = JofParams::make(4, 2, 3, 3, 16, 2, rng);
    LatentCodes codes = LatentCodes::random(2, 3, 3, 0.5, rng);

    Vec3 x;
    bool smooth = false;
    for (int attempt = 0; attempt < cfg.max_resamples && !smooth; ++attempt) {
        for (int i = 0; i < 3; ++i) x[i] = rng.uniform(-0.8, 0.8);
        smooth = field_probe_is_smooth(params, codes, x, cfg.kink_margin);
        if (!smooth) ++res.resampled;
    }
    if (!smooth) return;

    ShapeEval se = shape_forward(params, codes, x);
    const int idx = se.idx;
    ShapeGrad sg = shape_backward(params, se, 1.0, false);
    for (int axis = 0; axis < 3; ++axis) {
        Vec3 xp = x, xm = x;
        xp[axis] += cfg.h;
        xm[axis] -= cfg.h;
        const double fd =
            (occupancy(params, codes, xp) - occupancy(params, codes, xm)) / (2.0 * cfg.h);
        compare(res, cfg, sg.d_x[axis], fd);
    }
    // a couple of latent-code entries ride along at no extra FD cost class
    for (int i = 0; i < 2; ++i) {
        LatentCodes cp = codes, cm = codes;
        cp.f_S[i] += cfg.h;
        cm.f_S[i] -= cfg.h;
        const double fd =
            (occupancy(params, cp, x) - occupancy(params, cm, x)) / (2.0 * cfg.h);
        compare(res, cfg, sg.d_fS[i], fd);
    }

    // albedo branch selection is frozen at idx, so FD reads the same branch
    auto albedo_channel = [&](const Vec3& px, int c) {
        const Vector out = params.albedo_net.eval(albedo_input(params, codes, px));
        return out[3 * idx + c];
    };
    for (int c = 0; c < 3; ++c) {
        AlbedoEval ae = albedo_forward(params, codes, x, idx);
        Vec3 d_rgb = {0.0, 0.0, 0.0};
        d_rgb[c] = 1.0;
        AlbedoGrad ag = albedo_backward(params, ae, d_rgb, false);
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 xp = x, xm = x;
            xp[axis] += cfg.h;
            xm[axis] -= cfg.h;
            const double fd = (albedo_channel(xp, c) - albedo_channel(xm, c)) / (2.0 * cfg.h);
            compare(res, cfg, ag.d_x[axis], fd);
        }
    }
}

} // namespace

GradcheckResult run_field_gradcheck(const GradcheckConfig& cfg) {
    GradcheckResult res;
    const int fields = std::max(1, cfg.nets_per_activation / 4);
    for (int i = 0; i < fields; ++i)
        check_one_field(res, cfg, cfg.seed + 77777 + static_cast<std::uint64_t>(i) * 263);
    return res;
}

GradcheckResult run_gradcheck(const GradcheckConfig& cfg) {
    GradcheckResult res = run_net_gradcheck(cfg);
    if (cfg.check_fields) res.merge(run_field_gradcheck(cfg));
    return res;
}

} // namespace jof
