#include <jof/raysearch.hpp>

#include <jof/parallel.hpp>

#include <cmath>

namespace jof {

void SearchBudget::validate() const {
    if (!(epsilon > 0.0)) throw UsageError("search step must be positive");
    if (!(t_min < t_max)) throw UsageError("empty search interval");
    if (binary_iters < 0) throw UsageError("negative bisection count");
}

int SearchBudget::max_evals() const {
    return static_cast<int>(std::floor((t_max - t_min) / epsilon)) + 1 + binary_iters;
}

namespace {

Vec3 ray_at(const Ray& ray, double t) {
    return {ray.origin[0] + t * ray.dir[0], ray.origin[1] + t * ray.dir[1],
            ray.origin[2] + t * ray.dir[2]};
}

int linear_sample_count(const SearchBudget& budget) {
    return static_cast<int>(std::floor((budget.t_max - budget.t_min) / budget.epsilon)) + 1;
}

// Per-ray state shared by the sequential and lockstep implementations so both
// perform identical arithmetic and comparisons.
struct RayState {
    SearchBudget budget;
    Ray ray;
    int samples = 0;       // linear samples available
    int step = 0;          // next linear sample index
    int evals = 0;
    bool done = false;
    bool hit = false;
    double best_o = -1.0;  // maximal occupancy seen (miss candidate)
    double best_t = 0.0;
    // linear-phase memory of the previous (exterior) sample
    double prev_t = 0.0;
    double prev_o = 0.0;
    // bisection bracket
    bool in_binary = false;
    int binary_left = 0;
    double lo = 0.0, hi = 0.0, o_lo = 0.0, o_hi = 0.0;

    explicit RayState(const Ray& r, const SearchBudget& b) : budget(b), ray(r) {
        budget.validate();
        samples = linear_sample_count(budget);
    }

    double next_t() const {
        if (in_binary) return 0.5 * (lo + hi);
        return budget.t_min + static_cast<double>(step) * budget.epsilon;
    }

    // Consumes one field evaluation at next_t(). Returns false when the ray
    // is finished.
    void absorb(double t, double o, double tau, std::vector<BracketStep>* trace) {
        ++evals;
        if (in_binary) {
            if (o > tau) {
                hi = t;
                o_hi = o;
            } else {
                lo = t;
                o_lo = o;
            }
            if (trace) trace->push_back({lo, hi, o_lo, o_hi});
            if (--binary_left == 0) done = true;
            return;
        }
        if (o > tau) {
            hit = true;
            if (step == 0 || budget.binary_iters == 0) {
                // no exterior bracket or no refinement requested
                hi = t;
                o_hi = o;
                done = true;
            } else {
                in_binary = true;
                binary_left = budget.binary_iters;
                lo = prev_t;
                o_lo = prev_o;
                hi = t;
                o_hi = o;
                if (trace) trace->push_back({lo, hi, o_lo, o_hi});
            }
            return;
        }
        if (o > best_o) {
            best_o = o;
            best_t = t;
        }
        prev_t = t;
        prev_o = o;
        ++step;
        if (step >= samples) done = true;
    }

    SurfacePoint result() const {
        SurfacePoint sp;
        sp.evals_used = evals;
        if (hit) {
            sp.hit = true;
            sp.t = hi;
            sp.o_at_x = o_hi;
        } else {
            sp.hit = false;
            sp.t = best_t;
            sp.o_at_x = best_o;
        }
        sp.x = ray_at(ray, sp.t);
        return sp;
    }
};

SurfacePoint run_search(const FieldFn& field, const Ray& ray, const SearchBudget& budget,
                        double tau, std::vector<BracketStep>* trace) {
    RayState state(ray, budget);
    while (!state.done) {
        const double t = state.next_t();
        state.absorb(t, field(ray_at(ray, t)), tau, trace);
    }
    return state.result();
}

} // namespace

SurfacePoint linear_search(const FieldFn& field, const Ray& ray, const SearchBudget& budget,
                           double tau) {
    SearchBudget b = budget;
    b.binary_iters = 0;
    return run_search(field, ray, b, tau, nullptr);
}

SurfacePoint linear_binary_search(const FieldFn& field, const Ray& ray, const SearchBudget& budget,
                                  double tau, std::vector<BracketStep>* trace) {
    return run_search(field, ray, budget, tau, trace);
}

std::optional<SearchBudget> budget_for_ray(const Ray& ray, const SearchConfig& cfg) {
    const double b = ray.origin[0] * ray.dir[0] + ray.origin[1] * ray.dir[1] +
                     ray.origin[2] * ray.dir[2];
    const double c = ray.origin[0] * ray.origin[0] + ray.origin[1] * ray.origin[1] +
                     ray.origin[2] * ray.origin[2] - cfg.bound_radius * cfg.bound_radius;
    const double disc = b * b - c;
    if (disc <= 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    SearchBudget budget;
    budget.epsilon = cfg.epsilon;
    budget.t_min = std::max(-b - s, 0.0);
    budget.t_max = -b + s;
    budget.binary_iters = cfg.binary_iters;
    if (!(budget.t_min < budget.t_max)) return std::nullopt;
    return budget;
}

namespace {

SurfacePoint bound_miss(const Ray& ray) {
    SurfacePoint sp;
    sp.hit = false;
    sp.t = std::max(-(ray.origin[0] * ray.dir[0] + ray.origin[1] * ray.dir[1] +
                      ray.origin[2] * ray.dir[2]),
                    0.0);
    sp.x = ray_at(ray, sp.t);
    sp.o_at_x = 0.0;
    sp.evals_used = 0;
    return sp;
}

} // namespace

SurfacePoint search_ray(const FieldFn& field, const Ray& ray, const SearchConfig& cfg) {
    auto budget = budget_for_ray(ray, cfg);
    if (!budget) return bound_miss(ray);
    if (!cfg.use_binary) return linear_search(field, ray, *budget, cfg.tau);
    return linear_binary_search(field, ray, *budget, cfg.tau);
}

std::size_t SurfaceMap::hit_count() const {
    std::size_t n = 0;
    for (const auto& p : points) n += p.hit ? 1 : 0;
    return n;
}

Ray ray_for_pixel(const Projection& proj, int i, int j) {
    return proj.pixel_ray(static_cast<double>(i) + 0.5, static_cast<double>(j) + 0.5);
}

SurfaceMap surface_map(const FieldFn& field, const Projection& proj, int width, int height,
                       const SearchConfig& cfg) {
    if (width <= 0 || height <= 0) throw UsageError("image size must be positive");
    SurfaceMap map;
    map.width = width;
    map.height = height;
    map.points.resize(static_cast<std::size_t>(width) * height);
    parallel_for(map.points.size(), [&](std::size_t p) {
        const int j = static_cast<int>(p) / width;
        const int i = static_cast<int>(p) % width;
        map.points[p] = search_ray(field, ray_for_pixel(proj, i, j), cfg);
    });
    return map;
}

SurfaceMap surface_map_batch(const BatchFieldFn& field, const Projection& proj, int width,
                             int height, const SearchConfig& cfg) {
    if (width <= 0 || height <= 0) throw UsageError("image size must be positive");
    const std::size_t n = static_cast<std::size_t>(width) * height;
    SurfaceMap map;
    map.width = width;
    map.height = height;
    map.points.resize(n);

    std::vector<RayState> states;
    std::vector<std::size_t> owner(n);
    states.reserve(n);
    std::vector<int> state_of(n, -1);
    for (std::size_t p = 0; p < n; ++p) {
        const int j = static_cast<int>(p) / width;
        const int i = static_cast<int>(p) % width;
        const Ray ray = ray_for_pixel(proj, i, j);
        SearchConfig c = cfg;
        if (!cfg.use_binary) c.binary_iters = 0;
        auto budget = budget_for_ray(ray, c);
        if (!budget) {
            map.points[p] = bound_miss(ray);
            continue;
        }
        state_of[p] = static_cast<int>(states.size());
        owner[states.size()] = p;
        states.emplace_back(ray, *budget);
    }

    std::vector<std::size_t> active;
    for (std::size_t s = 0; s < states.size(); ++s) active.push_back(s);
    std::vector<Vec3> pts;
    std::vector<double> ts;
    while (!active.empty()) {
        pts.clear();
        ts.clear();
        for (std::size_t s : active) {
            const double t = states[s].next_t();
            ts.push_back(t);
            pts.push_back(ray_at(states[s].ray, t));
        }
        const std::vector<double> os = field(pts);
        if (os.size() != pts.size()) throw UsageError("batch field returned wrong count");
        std::vector<std::size_t> next;
        for (std::size_t a = 0; a < active.size(); ++a) {
            RayState& st = states[active[a]];
            st.absorb(ts[a], os[a], cfg.tau, nullptr);
            if (!st.done) next.push_back(active[a]);
        }
        active.swap(next);
    }
    for (std::size_t s = 0; s < states.size(); ++s) map.points[owner[s]] = states[s].result();
    return map;
}

ImageGray depth_image(const SurfaceMap& map) {
    ImageGray img = ImageGray::zeros(map.width, map.height);
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x) {
            const SurfacePoint& p = map.at(x, y);
            img.at(x, y) = p.hit ? p.t : 0.0;
        }
    return img;
}

ImageGray hit_mask_image(const SurfaceMap& map) {
    ImageGray img = ImageGray::zeros(map.width, map.height);
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x) img.at(x, y) = map.at(x, y).hit ? 1.0 : 0.0;
    return img;
}

} // namespace jof
