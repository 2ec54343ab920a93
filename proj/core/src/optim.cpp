#include <jof/optim.hpp>

#include <cmath>

namespace jof {

bool Optimizer::grads_finite(const std::vector<GradView>& grads) {
    for (const auto& g : grads)
        for (std::size_t i = 0; i < g.size; ++i)
            if (!is_finite(g.data[i])) return false;
    return true;
}

void Optimizer::check_aligned(const std::vector<ParamView>& params, const std::vector<GradView>& grads) {
    if (params.size() != grads.size()) throw UsageError("parameter/gradient view count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].size != grads[i].size)
            throw UsageError("parameter/gradient size mismatch at " + params[i].name);
}

GradientDescent::GradientDescent(double lr) : lr_(lr) {
    if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
}

bool GradientDescent::step(const std::vector<ParamView>& params, const std::vector<GradView>& grads) {
    check_aligned(params, grads);
    if (!grads_finite(grads)) {
        ++skipped_;
        return false;
    }
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].size; ++j) params[i].data[j] -= lr_ * grads[i].data[j];
    return true;
}

void GradientDescent::state_to(TensorStore& store, const std::string& prefix) const {
    Tensor t;
    t.name = prefix + ".lr";
    t.dims = {1};
    t.data = {lr_};
    store.put(std::move(t));
}

void GradientDescent::state_from(const TensorStore& store, const std::string& prefix) {
    lr_ = store.get(prefix + ".lr").as_scalar();
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw UsageError("adam betas must lie in [0, 1)");
}

bool Adam::step(const std::vector<ParamView>& params, const std::vector<GradView>& grads) {
    check_aligned(params, grads);
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].size, 0.0);
            v_[i].assign(params[i].size, 0.0);
        }
    }
    if (m_.size() != params.size()) throw UsageError("adam state does not match parameter set");
    if (!grads_finite(grads)) {
        ++skipped_;
        return false;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (m_[i].size() != params[i].size) throw UsageError("adam state does not match parameter set");
        double* p = params[i].data;
        const double* g = grads[i].data;
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t j = 0; j < params[i].size; ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
    return true;
}

void Adam::state_to(TensorStore& store, const std::string& prefix) const {
    Tensor meta;
    meta.name = prefix + ".meta";
    meta.dims = {6};
    meta.data = {lr_, beta1_, beta2_, eps_, static_cast<double>(t_), static_cast<double>(m_.size())};
    store.put(std::move(meta));
    for (std::size_t i = 0; i < m_.size(); ++i) {
        Tensor tm;
        tm.name = prefix + ".m" + std::to_string(i);
        tm.dims = {m_[i].size()};
        tm.data = m_[i];
        store.put(std::move(tm));
        Tensor tv;
        tv.name = prefix + ".v" + std::to_string(i);
        tv.dims = {v_[i].size()};
        tv.data = v_[i];
        store.put(std::move(tv));
    }
}

void Adam::state_from(const TensorStore& store, const std::string& prefix) {
    const Tensor& meta = store.get(prefix + ".meta");
    if (meta.data.size() != 6) throw IoError("bad adam state: " + prefix);
    lr_ = meta.data[0];
    beta1_ = meta.data[1];
    beta2_ = meta.data[2];
    eps_ = meta.data[3];
    t_ = static_cast<std::uint64_t>(meta.data[4]);
    const std::size_t n = static_cast<std::size_t>(meta.data[5]);
    m_.assign(n, {});
    v_.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
        m_[i] = store.get(prefix + ".m" + std::to_string(i)).data;
        v_[i] = store.get(prefix + ".v" + std::to_string(i)).data;
    }
}

} // namespace jof
