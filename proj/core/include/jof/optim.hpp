#pragma once

#include <jof/net.hpp>

#include <memory>
#include <vector>

namespace jof {

// Steps a fixed set of parameter views. Registration order defines state
// layout, so the same views must be passed to every step call.
class Optimizer {
public:
    virtual ~Optimizer() = default;

    // Applies one update. Returns false (and leaves parameters and internal
    // state untouched) when any gradient entry is non-finite.
    virtual bool step(const std::vector<ParamView>& params, const std::vector<GradView>& grads) = 0;

    virtual void state_to(TensorStore& store, const std::string& prefix) const = 0;
    virtual void state_from(const TensorStore& store, const std::string& prefix) = 0;

    std::size_t skipped_steps() const { return skipped_; }

protected:
    static bool grads_finite(const std::vector<GradView>& grads);
    static void check_aligned(const std::vector<ParamView>& params, const std::vector<GradView>& grads);
    std::size_t skipped_ = 0;
};

class GradientDescent : public Optimizer {
public:
    explicit GradientDescent(double lr);
    bool step(const std::vector<ParamView>& params, const std::vector<GradView>& grads) override;
    void state_to(TensorStore& store, const std::string& prefix) const override;
    void state_from(const TensorStore& store, const std::string& prefix) override;

private:
    double lr_;
};

class Adam : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    bool step(const std::vector<ParamView>& params, const std::vector<GradView>& grads) override;
    void state_to(TensorStore& store, const std::string& prefix) const override;
    void state_from(const TensorStore& store, const std::string& prefix) override;

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace jof
