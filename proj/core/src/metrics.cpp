#include <jof/metrics.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace jof {

void PointCloud::validate() const {
    if (points.empty()) throw UsageError("point cloud is empty");
    for (const Vec3& p : points)
        for (double v : p)
            if (!std::isfinite(v)) throw UsageError("point cloud has non-finite coordinates");
    if (!labels.empty() && labels.size() != points.size())
        throw UsageError("label count does not match point count");
}

namespace {

double sq_dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

std::vector<double> nn_squared_brute(const std::vector<Vec3>& queries,
                                     const std::vector<Vec3>& targets) {
    std::vector<double> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& t : targets) {
            const double d2 = sq_dist(queries[i], t);
            if (d2 < best) best = d2;
        }
        out[i] = best;
    }
    return out;
}

struct UniformGrid {
    Vec3 lo;
    double side = 1.0;
    int n[3] = {1, 1, 1};
    std::vector<std::vector<int>> buckets;

    explicit UniformGrid(const std::vector<Vec3>& pts) {
        Vec3 hi = pts[0];
        lo = pts[0];
        for (const Vec3& p : pts)
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        const double extent =
            std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-12});
        const int per_axis = std::clamp(
            static_cast<int>(std::lround(std::cbrt(static_cast<double>(pts.size())))), 1, 48);
        side = extent / per_axis;
        for (int a = 0; a < 3; ++a)
            n[a] = std::min(static_cast<int>((hi[a] - lo[a]) / side) + 1, 4 * per_axis);
        buckets.assign(static_cast<std::size_t>(n[0]) * n[1] * n[2], {});
        for (std::size_t i = 0; i < pts.size(); ++i)
            buckets[index_of(cell_of(pts[i]))].push_back(static_cast<int>(i));
    }

    std::array<int, 3> cell_of(const Vec3& p) const {
        std::array<int, 3> c;
        for (int a = 0; a < 3; ++a)
            c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo[a]) / side)), 0, n[a] - 1);
        return c;
    }

    std::size_t index_of(const std::array<int, 3>& c) const {
        return (static_cast<std::size_t>(c[0]) * n[1] + c[1]) * n[2] + c[2];
    }

    bool ring_covers_grid(const std::array<int, 3>& c, int r) const {
        for (int a = 0; a < 3; ++a)
            if (c[a] - r > 0 || c[a] + r < n[a] - 1) return false;
        return true;
    }
};

double nn_one_gridded(const UniformGrid& g, const std::vector<Vec3>& targets, const Vec3& q) {
    const auto c = g.cell_of(q);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0;; ++r) {
        const int xlo = std::max(c[0] - r, 0), xhi = std::min(c[0] + r, g.n[0] - 1);
        const int ylo = std::max(c[1] - r, 0), yhi = std::min(c[1] + r, g.n[1] - 1);
        const int zlo = std::max(c[2] - r, 0), zhi = std::min(c[2] + r, g.n[2] - 1);
        for (int x = xlo; x <= xhi; ++x)
            for (int y = ylo; y <= yhi; ++y)
                for (int z = zlo; z <= zhi; ++z) {
                    if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) !=
                        r)
                        continue;
                    for (int ti : g.buckets[g.index_of({x, y, z})]) {
                        const double d2 = sq_dist(q, targets[static_cast<std::size_t>(ti)]);
                        if (d2 < best) best = d2;
                    }
                }
        // every unscanned point lies outside the ring-r box, so it is at
        // least the query's margin to the box faces away
        double margin = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            const double blo = g.lo[a] + (c[a] - r) * g.side;
            const double bhi = g.lo[a] + (c[a] + r + 1) * g.side;
            margin = std::min(margin, std::min(q[a] - blo, bhi - q[a]));
        }
        margin = std::max(margin, 0.0);
        if (best <= margin * margin || g.ring_covers_grid(c, r)) return best;
    }
}

} // namespace

std::vector<double> nn_squared(const std::vector<Vec3>& queries, const std::vector<Vec3>& targets,
                               bool accelerated) {
    if (queries.empty() || targets.empty()) throw UsageError("nearest neighbor on empty cloud");
    if (!accelerated) return nn_squared_brute(queries, targets);
    const UniformGrid grid(targets);
    std::vector<double> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i)
        out[i] = nn_one_gridded(grid, targets, queries[i]);
    return out;
}

double chamfer_l1(const PointCloud& a, const PointCloud& b, bool accelerated) {
    a.validate();
    b.validate();
    const std::vector<double> ab = nn_squared(a.points, b.points, accelerated);
    const std::vector<double> ba = nn_squared(b.points, a.points, accelerated);
    double sum_ab = 0.0, sum_ba = 0.0;
    for (double d2 : ab) sum_ab += std::sqrt(d2);
    for (double d2 : ba) sum_ba += std::sqrt(d2);
    return 0.5 * (sum_ab / static_cast<double>(ab.size()) +
                  sum_ba / static_cast<double>(ba.size()));
}

FScore f_score(const PointCloud& pred, const PointCloud& gt, double tau, bool squared_threshold,
               bool accelerated) {
    pred.validate();
    gt.validate();
    if (!(tau > 0.0)) throw UsageError("f-score threshold must be positive");
    const std::vector<double> pd = nn_squared(pred.points, gt.points, accelerated);
    const std::vector<double> gd = nn_squared(gt.points, pred.points, accelerated);
    const double limit = squared_threshold ? tau : tau * tau;
    std::size_t p_in = 0, g_in = 0;
    for (double d2 : pd) p_in += d2 <= limit ? 1 : 0;
    for (double d2 : gd) g_in += d2 <= limit ? 1 : 0;
    FScore s;
    s.precision = 100.0 * static_cast<double>(p_in) / static_cast<double>(pd.size());
    s.recall = 100.0 * static_cast<double>(g_in) / static_cast<double>(gd.size());
    s.f = (s.precision + s.recall) > 0.0
              ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
              : 0.0;
    return s;
}

double segmentation_iou(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.empty() || pred.size() != gt.size())
        throw UsageError("segmentation labels must be nonempty and aligned");
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] < 0 || gt[i] < 0) throw UsageError("segmentation labels must be nonnegative");

    std::set<int> parts_set(gt.begin(), gt.end());
    std::set<int> branches_set(pred.begin(), pred.end());
    const std::vector<int> parts(parts_set.begin(), parts_set.end());
    const std::vector<int> branches(branches_set.begin(), branches_set.end());

    std::map<int, std::size_t> branch_count, part_count;
    std::map<std::pair<int, int>, std::size_t> inter;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++branch_count[pred[i]];
        ++part_count[gt[i]];
        ++inter[{pred[i], gt[i]}];
    }

    // each branch goes to its best-overlap part; ties to the lowest part
    std::map<int, int> assign;
    for (int b : branches) {
        double best = -1.0;
        int best_part = parts.front();
        for (int p : parts) {
            const auto it = inter.find({b, p});
            const double in = it == inter.end() ? 0.0 : static_cast<double>(it->second);
            const double un =
                static_cast<double>(branch_count[b] + part_count[p]) - in;
            const double iou = un > 0.0 ? in / un : 0.0;
            if (iou > best) {
                best = iou;
                best_part = p;
            }
        }
        assign[b] = best_part;
    }

    double total = 0.0;
    for (int p : parts) {
        std::size_t in = 0, un = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool in_union_of_branches = assign[pred[i]] == p;
            const bool in_part = gt[i] == p;
            in += in_union_of_branches && in_part ? 1 : 0;
            un += in_union_of_branches || in_part ? 1 : 0;
        }
        total += un > 0 ? static_cast<double>(in) / static_cast<double>(un) : 0.0;
    }
    return total / static_cast<double>(parts.size());
}

double azimuth_error_degrees(const PoseParams& pred, const PoseParams& gt) {
    const double deg = std::abs(pred.azimuth - gt.azimuth) * 180.0 / M_PI;
    const double wrapped = std::fmod(deg, 360.0);
    return std::min(wrapped, 360.0 - wrapped);
}

void save_point_cloud(const std::string& path, const PointCloud& cloud) {
    cloud.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.precision(17);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        out << cloud.points[i][0] << " " << cloud.points[i][1] << " " << cloud.points[i][2];
        if (!cloud.labels.empty()) out << " " << cloud.labels[i];
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

PointCloud load_point_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    PointCloud cloud;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Vec3 p;
        if (!(ss >> p[0] >> p[1] >> p[2])) throw IoError("malformed point line in " + path);
        int label;
        if (ss >> label) cloud.labels.push_back(label);
        cloud.points.push_back(p);
    }
    if (!cloud.labels.empty() && cloud.labels.size() != cloud.points.size())
        throw IoError("mixed labeled/unlabeled lines in " + path);
    cloud.validate();
    return cloud;
}

std::string format_metrics_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    out.precision(12);
    out << "metric,value\n";
    for (const MetricRow& r : rows) out << r.name << "," << r.value << "\n";
    return out.str();
}

std::string format_metrics_table(const std::vector<MetricRow>& rows) {
    std::size_t width = 6;
    for (const MetricRow& r : rows) width = std::max(width, r.name.size());
    std::ostringstream out;
    out.precision(6);
    for (const MetricRow& r : rows) {
        out << r.name;
        for (std::size_t i = r.name.size(); i < width + 2; ++i) out << ' ';
        out << r.value << "\n";
    }
    return out.str();
}

namespace {

struct RefineResult {
    std::vector<Vec3> xs;
    std::vector<double> o;
    std::vector<int> idx;
};

RefineResult refine_to_level_set(const JofParams& params, const LatentCodes& codes,
                                 std::vector<Vec3> xs) {
    for (int step = 0; step < 10; ++step) {
        ShapeBatchEval ev = shape_forward_batch(params, codes, xs);
        ShapeBatchGrad grad =
            shape_backward_batch(params, ev, std::vector<double>(xs.size(), 1.0), false);
        bool moved = false;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double err = ev.o[i] - params.tau;
            if (std::abs(err) <= 0.005) continue;
            const Vec3& g = grad.d_x[i];
            const double g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            if (g2 < 1e-18) continue;
            double sx = -err * g[0] / g2, sy = -err * g[1] / g2, sz = -err * g[2] / g2;
            const double sn = std::sqrt(sx * sx + sy * sy + sz * sz);
            if (sn > 0.2) {
                sx *= 0.2 / sn;
                sy *= 0.2 / sn;
                sz *= 0.2 / sn;
            }
            xs[i] = {xs[i][0] + sx, xs[i][1] + sy, xs[i][2] + sz};
            moved = true;
        }
        if (!moved) break;
    }
    ShapeBatchEval ev = shape_forward_batch(params, codes, xs);
    return {std::move(xs), std::move(ev.o), std::move(ev.idx)};
}

} // namespace

PointCloud extract_surface_points(const JofParams& params, const LatentCodes& codes, int n,
                                  int grid_res) {
    params.validate();
    if (n < 1) throw UsageError("need at least one surface point");
    if (grid_res < 2) throw UsageError("grid resolution too small");

    const int R = grid_res;
    const int C = R + 1;
    std::vector<double> corner(static_cast<std::size_t>(C) * C * C);
    {
        std::vector<Vec3> pts;
        pts.reserve(corner.size());
        for (int ix = 0; ix < C; ++ix)
            for (int iy = 0; iy < C; ++iy)
                for (int iz = 0; iz < C; ++iz)
                    pts.push_back({-1.0 + 2.0 * ix / R, -1.0 + 2.0 * iy / R,
                                   -1.0 + 2.0 * iz / R});
        const std::size_t chunk = 8192;
        for (std::size_t base = 0; base < pts.size(); base += chunk) {
            const std::size_t m = std::min(chunk, pts.size() - base);
            const std::vector<Vec3> part(pts.begin() + static_cast<std::ptrdiff_t>(base),
                                         pts.begin() + static_cast<std::ptrdiff_t>(base + m));
            ShapeBatchEval ev = shape_forward_batch(params, codes, part);
            for (std::size_t i = 0; i < m; ++i) corner[base + i] = ev.o[i];
        }
    }
    auto corner_at = [&](int ix, int iy, int iz) {
        return corner[(static_cast<std::size_t>(ix) * C + iy) * C + iz];
    };

    std::vector<std::array<int, 3>> cells;
    for (int ix = 0; ix < R; ++ix)
        for (int iy = 0; iy < R; ++iy)
            for (int iz = 0; iz < R; ++iz) {
                bool inside = false, outside = false;
                for (int d = 0; d < 8; ++d) {
                    const double o =
                        corner_at(ix + (d & 1), iy + ((d >> 1) & 1), iz + ((d >> 2) & 1));
                    (o > params.tau ? inside : outside) = true;
                }
                if (inside && outside) cells.push_back({ix, iy, iz});
            }
    if (cells.empty()) throw NumericError("no surface found in the scan volume");

    Rng rng(0x5a17f00d);
    PointCloud cloud;
    const double h = 2.0 / R;
    auto cell_point = [&](const std::array<int, 3>& c, double ux, double uy, double uz) {
        return Vec3{-1.0 + (c[0] + ux) * h, -1.0 + (c[1] + uy) * h, -1.0 + (c[2] + uz) * h};
    };

    std::vector<Vec3> seeds;
    seeds.reserve(cells.size());
    for (const auto& c : cells) seeds.push_back(cell_point(c, 0.5, 0.5, 0.5));

    int rounds = 0;
    while (static_cast<int>(cloud.points.size()) < n && rounds < 64) {
        if (rounds > 0) {
            seeds.clear();
            const std::size_t batch =
                std::max<std::size_t>(static_cast<std::size_t>(n), 1024);
            for (std::size_t i = 0; i < batch; ++i) {
                const auto& c =
                    cells[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cells.size()) - 1))];
                seeds.push_back(cell_point(c, rng.uniform(), rng.uniform(), rng.uniform()));
            }
        }
        RefineResult refined = refine_to_level_set(params, codes, std::move(seeds));
        for (std::size_t i = 0; i < refined.xs.size(); ++i) {
            const Vec3& x = refined.xs[i];
            if (std::abs(refined.o[i] - params.tau) >= 0.02) continue;
            if (x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > 1.44) continue;
            cloud.points.push_back(x);
            cloud.labels.push_back(refined.idx[i]);
        }
        seeds.clear();
        ++rounds;
    }
    if (cloud.points.empty()) throw NumericError("surface refinement produced no points");
    if (static_cast<int>(cloud.points.size()) < n)
        throw NumericError("surface sampling stalled before reaching the requested count");

    std::vector<std::size_t> order(cloud.points.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i],
                  order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    PointCloud out;
    out.points.reserve(static_cast<std::size_t>(n));
    out.labels.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.points.push_back(cloud.points[order[static_cast<std::size_t>(i)]]);
        out.labels.push_back(cloud.labels[order[static_cast<std::size_t>(i)]]);
    }
    return out;
}

} // namespace jof
