#pragma once

#include <jof/net.hpp>

namespace jof {

struct GradcheckConfig {
    int nets_per_activation = 100;
    double h = 1e-4;
    double rel_tol = 1e-4;
    double grad_floor = 1e-6;
    // Central differences approximate the derivative only on a smooth
    // neighborhood; probe points whose relu-family pre-activations sit within
    // this margin of a kink are resampled.
    double kink_margin = 1e-3;
    int max_resamples = 64;
    std::uint64_t seed = 1234;
    bool check_fields = true;
};

struct GradcheckResult {
    std::size_t comparisons = 0;
    std::size_t failures = 0;
    std::size_t resampled = 0;
    double max_rel_err = 0.0;

    bool passed() const { return failures == 0 && comparisons > 0; }
    void merge(const GradcheckResult& other);
};

// True when every relu/leaky-relu pre-activation at x clears the margin, so
// FD probes of size h cannot straddle a kink.
bool probe_is_smooth(const DenseNet& net, const Vector& x, double margin);

double relative_error(double a, double b);

// Reverse-mode vs central FD on random nets, every activation, input and
// parameter gradients.
GradcheckResult run_net_gradcheck(const GradcheckConfig& cfg);

// Spatial gradients of the occupancy and albedo decoders vs central FD.
GradcheckResult run_field_gradcheck(const GradcheckConfig& cfg);

// Full suite (nets + fields).
GradcheckResult run_gradcheck(const GradcheckConfig& cfg);

} // namespace jof
