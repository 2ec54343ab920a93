#include <jof/losses.hpp>

#include <jof/metrics.hpp>

#include <atomic>
#include <cmath>
#include <sstream>

namespace jof {

namespace {

std::atomic<std::uint64_t> g_loss_warnings{0};

void warn() { g_loss_warnings.fetch_add(1, std::memory_order_relaxed); }

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

bool fg(const ImageGray& M, int x, int y) { return M.at(x, y) > 0.5; }

void check_same_shape(const ImageRGB& a, const ImageRGB& b, const ImageGray& m) {
    if (a.width != b.width || a.height != b.height || a.width != m.width ||
        a.height != m.height)
        throw UsageError("image dimensions disagree");
}

} // namespace

void LossWeights::validate() const {
    const double vals[] = {lambda1, lambda2,  lambda3, lambda_C, lambda_S,
                           lambda_A, lambda_P, alpha,  p,        shading_target};
    for (double v : vals)
        if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("loss weights must be non-negative");
}

std::uint64_t loss_warning_count() { return g_loss_warnings.load(std::memory_order_relaxed); }
void reset_loss_warnings() { g_loss_warnings.store(0, std::memory_order_relaxed); }

// --- photometric -----------------------------------------------------------

double photometric_loss(const ImageRGB& I_hat, const ImageRGB& I, const ImageGray& M) {
    check_same_shape(I_hat, I, M);
    std::size_t count = 0;
    double sum = 0.0;
    for (int y = 0; y < M.height; ++y)
        for (int x = 0; x < M.width; ++x) {
            if (!fg(M, x, y)) continue;
            ++count;
            for (int c = 0; c < 3; ++c) sum += std::abs(I_hat.at(x, y, c) - I.at(x, y, c));
        }
    if (count == 0) {
        warn();
        return 0.0;
    }
    return sum / (3.0 * static_cast<double>(count));
}

ImageRGB photometric_loss_grad(const ImageRGB& I_hat, const ImageRGB& I, const ImageGray& M) {
    check_same_shape(I_hat, I, M);
    ImageRGB g = ImageRGB::zeros(I.width, I.height);
    std::size_t count = 0;
    for (int y = 0; y < M.height; ++y)
        for (int x = 0; x < M.width; ++x)
            if (fg(M, x, y)) ++count;
    if (count == 0) {
        warn();
        return g;
    }
    const double scale = 1.0 / (3.0 * static_cast<double>(count));
    for (int y = 0; y < M.height; ++y)
        for (int x = 0; x < M.width; ++x) {
            if (!fg(M, x, y)) continue;
            for (int c = 0; c < 3; ++c)
                g.at(x, y, c) = scale * sign_of(I_hat.at(x, y, c) - I.at(x, y, c));
        }
    return g;
}

// --- silhouette --------------------------------------------------------------

SilhouetteEval silhouette_loss(const JofParams& params, const LatentCodes& codes,
                               const PoseParams& pose, const ImageGray& M,
                               const SearchConfig& search, bool want_pose_grad,
                               bool want_param_grads) {
    params.validate();
    codes.validate();
    if (M.width <= 0 || M.height <= 0) throw UsageError("empty silhouette mask");
    const Projection proj = compose_projection(pose, M.width, M.height);

    BatchFieldFn field = [&](const std::vector<Vec3>& xs) {
        ShapeBatchEval ev = shape_forward_batch(params, codes, xs);
        return ev.o;
    };
    const SurfaceMap map = surface_map_batch(field, proj, M.width, M.height, search);

    std::vector<Vec3> points;
    points.reserve(map.points.size());
    for (const SurfacePoint& sp : map.points) points.push_back(sp.x);

    ShapeBatchEval ev = shape_forward_batch(params, codes, points);
    const double n_pix = static_cast<double>(points.size());

    SilhouetteEval out;
    out.d_fC = Vector::Zero(params.l_C);
    out.d_fS = Vector::Zero(params.l_S);
    std::vector<double> d_o(points.size(), 0.0);
    std::vector<char> pose_pixel(points.size(), 0);
    for (int y = 0; y < M.height; ++y)
        for (int x = 0; x < M.width; ++x) {
            const std::size_t j = static_cast<std::size_t>(y) * M.width + x;
            const bool inside = fg(M, x, y);
            if (inside) ++out.foreground_pixels;
            pose_pixel[j] = inside && !map.points[j].hit;
            const double target = inside ? params.tau : 0.0;
            const double r = ev.o[j] - target;
            out.loss += std::abs(r);
            d_o[j] = std::abs(r) <= kSilhouetteKinkBand ? 0.0 : sign_of(r) / n_pix;
        }
    out.loss /= n_pix;

    ShapeBatchGrad grad = shape_backward_batch(params, ev, d_o, want_param_grads);
    out.d_fC = grad.d_fC;
    out.d_fS = grad.d_fS;
    if (want_param_grads) out.d_shape = std::move(grad.params);

    if (want_pose_grad) {
        const PoseDual seeded = seed_pose(pose);
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (!pose_pixel[j]) continue;
            const Vec3& dx = grad.d_x[j];
            if (dx[0] == 0.0 && dx[1] == 0.0 && dx[2] == 0.0) continue;
            const Vec3 uvd = proj.project(points[j]);
            const auto X = pose_backproject(seeded, uvd[0], uvd[1], uvd[2]);
            for (int k = 0; k < 3; ++k)
                out.d_pose[k] += dx[0] * X[0].g[k] + dx[1] * X[1].g[k] + dx[2] * X[2].g[k];
        }
    }
    return out;
}

// --- part-boundary features --------------------------------------------------

std::vector<Vec3> boundary_points(const JofParams& params, const LatentCodes& codes, int n_target,
                                  double probe_step) {
    if (n_target <= 0) throw UsageError("boundary point target must be positive");
    if (!(probe_step > 0.0)) throw UsageError("probe step must be positive");
    const int pool_n = std::max(512, 16 * n_target);
    const PointCloud pool = extract_surface_points(params, codes, pool_n, 20);

    std::vector<Vec3> probes;
    probes.reserve(pool.points.size() * 6);
    for (const Vec3& x : pool.points)
        for (int axis = 0; axis < 3; ++axis)
            for (double s : {probe_step, -probe_step}) {
                Vec3 q = x;
                q[axis] += s;
                probes.push_back(q);
            }
    ShapeBatchEval ev = shape_forward_batch(params, codes, probes);

    std::vector<Vec3> found;
    for (std::size_t i = 0; i < pool.points.size(); ++i) {
        const int own = pool.labels[i];
        bool flip = false;
        for (int p = 0; p < 6 && !flip; ++p) flip = ev.idx[i * 6 + p] != own;
        if (flip) found.push_back(pool.points[i]);
    }
    const int required = std::max(8, n_target / 10);
    if (static_cast<int>(found.size()) < required) throw NumericError("insufficient part boundary");
    if (static_cast<int>(found.size()) > n_target) found.resize(n_target);
    return found;
}

Matrix sample_local_features(const std::vector<FeatureMap>& maps, const Matrix& U_2D, int w_img,
                             int h_img, FeatureSampleTape* tape) {
    if (maps.empty()) throw UsageError("no feature maps to sample");
    if (U_2D.cols() != 2) throw UsageError("U_2D must be q x 2");
    if (w_img <= 0 || h_img <= 0) throw UsageError("image dims must be positive");
    int d = 0;
    for (const FeatureMap& m : maps) {
        m.validate();
        d += m.c;
    }
    const Eigen::Index q = U_2D.rows();
    Matrix F = Matrix::Zero(q, d);
    if (tape) {
        tape->corners.assign(static_cast<std::size_t>(q), {});
        tape->map_channels.clear();
        tape->map_h.clear();
        tape->map_w.clear();
        for (const FeatureMap& m : maps) {
            tape->map_channels.push_back(m.c);
            tape->map_h.push_back(m.h);
            tape->map_w.push_back(m.w);
        }
    }
    for (Eigen::Index i = 0; i < q; ++i) {
        int col = 0;
        for (std::size_t mi = 0; mi < maps.size(); ++mi) {
            const FeatureMap& m = maps[mi];
            auto grid_coord = [](double pix, int img_extent, int map_extent) {
                double g = pix * static_cast<double>(map_extent) / img_extent - 0.5;
                if (g < 0.0) g = 0.0;
                const double hi = static_cast<double>(map_extent - 1);
                if (g > hi) g = hi;
                return g;
            };
            const double gx = grid_coord(U_2D(i, 0), w_img, m.w);
            const double gy = grid_coord(U_2D(i, 1), h_img, m.h);
            const int x0 = std::min(static_cast<int>(gx), m.w > 1 ? m.w - 2 : 0);
            const int y0 = std::min(static_cast<int>(gy), m.h > 1 ? m.h - 2 : 0);
            const int x1 = std::min(x0 + 1, m.w - 1);
            const int y1 = std::min(y0 + 1, m.h - 1);
            const double fx = gx - x0;
            const double fy = gy - y0;
            const double w00 = (1.0 - fx) * (1.0 - fy), w10 = fx * (1.0 - fy);
            const double w01 = (1.0 - fx) * fy, w11 = fx * fy;
            for (int ch = 0; ch < m.c; ++ch)
                F(i, col + ch) = w00 * m.at(y0, x0, ch) + w10 * m.at(y0, x1, ch) +
                                 w01 * m.at(y1, x0, ch) + w11 * m.at(y1, x1, ch);
            if (tape) {
                auto& rows = tape->corners[static_cast<std::size_t>(i)];
                const int mid = static_cast<int>(mi);
                rows.push_back({mid, y0, x0, w00});
                rows.push_back({mid, y0, x1, w10});
                rows.push_back({mid, y1, x0, w01});
                rows.push_back({mid, y1, x1, w11});
            }
            col += m.c;
        }
    }
    return F;
}

std::vector<FeatureMap> sample_local_features_backward(const FeatureSampleTape& tape,
                                                       const Matrix& d_F) {
    std::vector<FeatureMap> grads;
    grads.reserve(tape.map_channels.size());
    std::vector<int> offsets;
    int col = 0;
    for (std::size_t mi = 0; mi < tape.map_channels.size(); ++mi) {
        grads.push_back(FeatureMap::zeros(tape.map_h[mi], tape.map_w[mi], tape.map_channels[mi]));
        offsets.push_back(col);
        col += tape.map_channels[mi];
    }
    if (d_F.cols() != col) throw UsageError("feature gradient width mismatch");
    if (d_F.rows() != static_cast<Eigen::Index>(tape.corners.size()))
        throw UsageError("feature gradient row count mismatch");
    for (std::size_t i = 0; i < tape.corners.size(); ++i)
        for (const FeatureSampleTape::Corner& c : tape.corners[i]) {
            FeatureMap& g = grads[static_cast<std::size_t>(c.map)];
            const int off = offsets[static_cast<std::size_t>(c.map)];
            for (int ch = 0; ch < g.c; ++ch)
                g.at(c.y, c.x, ch) += c.weight * d_F(static_cast<Eigen::Index>(i), off + ch);
        }
    return grads;
}

// --- principal eigenvector ---------------------------------------------------

EigenEval principal_eigenvector_eval(const Matrix& F) {
    if (F.rows() < 2) throw UsageError("need at least two feature rows");
    EigenEval ev;
    const Vector mean = F.colwise().mean();
    ev.centered = F.rowwise() - mean.transpose();
    ev.gram = ev.centered.transpose() * ev.centered;
    const Eigen::Index d = ev.gram.rows();
    if (ev.gram.trace() < 1e-20) throw NumericError("degenerate covariance");

    Eigen::Index init = 0;
    ev.gram.diagonal().maxCoeff(&init);
    Vector v = Vector::Zero(d);
    v[init] = 1.0;
    ev.iterates.reserve(kPowerIterations + 1);
    ev.norms.reserve(kPowerIterations);
    ev.iterates.push_back(v);
    for (int t = 0; t < kPowerIterations; ++t) {
        Vector w = ev.gram * v;
        const double n = w.norm();
        if (!(n > 0.0)) throw NumericError("degenerate covariance");
        v = w / n;
        ev.norms.push_back(n);
        ev.iterates.push_back(v);
    }
    Eigen::Index top = 0;
    v.cwiseAbs().maxCoeff(&top);
    ev.sign = v[top] < 0.0 ? -1.0 : 1.0;
    ev.v = ev.sign * v;
    return ev;
}

Vector principal_eigenvector(const Matrix& F) { return principal_eigenvector_eval(F).v; }

Matrix principal_eigenvector_backward(const EigenEval& ev, const Vector& d_v) {
    const Eigen::Index d = ev.gram.rows();
    Matrix d_gram = Matrix::Zero(d, d);
    Vector g = ev.sign * d_v;
    for (int t = kPowerIterations - 1; t >= 0; --t) {
        const Vector& vt = ev.iterates[static_cast<std::size_t>(t) + 1];
        const Vector& prev = ev.iterates[static_cast<std::size_t>(t)];
        const Vector d_w = (g - vt * vt.dot(g)) / ev.norms[static_cast<std::size_t>(t)];
        d_gram.noalias() += d_w * prev.transpose();
        g = ev.gram * d_w;
    }
    Matrix d_centered = ev.centered * (d_gram + d_gram.transpose());
    const Vector col_mean = d_centered.colwise().mean();
    d_centered.rowwise() -= col_mean.transpose();
    return d_centered;
}

// --- feature consistency -----------------------------------------------------

double feature_consistency_loss(const std::vector<Vector>& vs) {
    if (vs.size() < 2) {
        warn();
        return 0.0;
    }
    const std::size_t n = vs.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) sum += (vs[i] - vs[j]).cwiseAbs().sum();
    return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::vector<Vector> feature_consistency_grad(const std::vector<Vector>& vs) {
    std::vector<Vector> grads;
    grads.reserve(vs.size());
    for (const Vector& v : vs) grads.push_back(Vector::Zero(v.size()));
    if (vs.size() < 2) return grads;
    const std::size_t n = vs.size();
    const double scale = 1.0 / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (Eigen::Index k = 0; k < vs[i].size(); ++k) {
                const double s = sign_of(vs[i][k] - vs[j][k]) * scale;
                grads[i][k] += s;
                grads[j][k] -= s;
            }
    return grads;
}

// --- albedo constancy --------------------------------------------------------

namespace {

constexpr int kNeighborOff[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

bool constancy_center(const ImageGray& M, int x, int y) {
    if (x < 1 || y < 1 || x + 1 >= M.width || y + 1 >= M.height) return false;
    if (!fg(M, x, y)) return false;
    for (const auto& off : kNeighborOff)
        if (!fg(M, x + off[0], y + off[1])) return false;
    return true;
}

Vec3 chromaticity(const ImageRGB& I, int x, int y) {
    const Vec3 v = {I.at(x, y, 0), I.at(x, y, 1), I.at(x, y, 2)};
    const double n = std::max(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]), 1e-6);
    return {v[0] / n, v[1] / n, v[2] / n};
}

template <typename Fn>
void for_constancy_pairs(const ImageRGB& I, const ImageGray& M, Fn&& fn) {
    for (int y = 0; y < M.height; ++y)
        for (int x = 0; x < M.width; ++x) {
            if (!constancy_center(M, x, y)) continue;
            for (const auto& off : kNeighborOff) fn(x, y, x + off[0], y + off[1]);
        }
}

} // namespace

double albedo_constancy_loss(const ImageRGB& A, const ImageRGB& I, const ImageGray& M,
                             double alpha, double p) {
    check_same_shape(A, I, M);
    double sum = 0.0;
    std::size_t pairs = 0;
    for_constancy_pairs(I, M, [&](int x, int y, int nx, int ny) {
        ++pairs;
        const Vec3 cj = chromaticity(I, x, y);
        const Vec3 ct = chromaticity(I, nx, ny);
        const double dc = std::sqrt((cj[0] - ct[0]) * (cj[0] - ct[0]) +
                                    (cj[1] - ct[1]) * (cj[1] - ct[1]) +
                                    (cj[2] - ct[2]) * (cj[2] - ct[2]));
        double ssq = 1e-12;
        for (int c = 0; c < 3; ++c) {
            const double d = A.at(x, y, c) - A.at(nx, ny, c);
            ssq += d * d;
        }
        sum += std::exp(-alpha * dc) * std::pow(ssq, 0.5 * p);
    });
    if (pairs == 0) {
        warn();
        return 0.0;
    }
    return sum / static_cast<double>(pairs);
}

ImageRGB albedo_constancy_grad(const ImageRGB& A, const ImageRGB& I, const ImageGray& M,
                               double alpha, double p) {
    check_same_shape(A, I, M);
    ImageRGB g = ImageRGB::zeros(A.width, A.height);
    std::size_t pairs = 0;
    for_constancy_pairs(I, M, [&](int, int, int, int) { ++pairs; });
    if (pairs == 0) {
        warn();
        return g;
    }
    const double scale = 1.0 / static_cast<double>(pairs);
    for_constancy_pairs(I, M, [&](int x, int y, int nx, int ny) {
        const Vec3 cj = chromaticity(I, x, y);
        const Vec3 ct = chromaticity(I, nx, ny);
        const double dc = std::sqrt((cj[0] - ct[0]) * (cj[0] - ct[0]) +
                                    (cj[1] - ct[1]) * (cj[1] - ct[1]) +
                                    (cj[2] - ct[2]) * (cj[2] - ct[2]));
        const double omega = std::exp(-alpha * dc);
        double ssq = 1e-12;
        for (int c = 0; c < 3; ++c) {
            const double d = A.at(x, y, c) - A.at(nx, ny, c);
            ssq += d * d;
        }
        const double factor = scale * omega * p * std::pow(ssq, 0.5 * p - 1.0);
        for (int c = 0; c < 3; ++c) {
            const double d = A.at(x, y, c) - A.at(nx, ny, c);
            g.at(x, y, c) += factor * d;
            g.at(nx, ny, c) -= factor * d;
        }
    });
    return g;
}

// --- white shading -----------------------------------------------------------

double white_shading_loss(const std::vector<Vec3>& shading, double target) {
    if (shading.empty()) {
        warn();
        return 0.0;
    }
    double loss = 0.0;
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (const Vec3& s : shading) mean += s[c];
        mean /= static_cast<double>(shading.size());
        loss += std::abs(mean - target);
    }
    return loss;
}

std::vector<Vec3> white_shading_grad(const std::vector<Vec3>& shading, double target) {
    std::vector<Vec3> grads(shading.size(), Vec3{0.0, 0.0, 0.0});
    if (shading.empty()) return grads;
    const double m = static_cast<double>(shading.size());
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (const Vec3& s : shading) mean += s[c];
        mean /= m;
        const double s = sign_of(mean - target) / m;
        for (Vec3& g : grads) g[c] = s;
    }
    return grads;
}

// --- totals ------------------------------------------------------------------

LossBreakdown total_self_supervised_loss(const SelfSupervisedTerms& terms, const LossWeights& w) {
    w.validate();
    LossBreakdown b;
    b.img = terms.img;
    b.sil = terms.sil;
    b.fea = terms.fea;
    b.alb = terms.alb;
    b.bws = terms.bws;
    b.total = terms.img + w.lambda1 * terms.sil + w.lambda2 * terms.fea +
              w.lambda3 * (terms.alb + terms.bws);
    return b;
}

std::string loss_csv_header() { return "step,total,img,sil,fea,alb,bws"; }

std::string loss_csv_row(std::uint64_t step, const LossBreakdown& b) {
    std::ostringstream out;
    out.precision(17);
    out << step << ',' << b.total << ',' << b.img << ',' << b.sil << ',' << b.fea << ',' << b.alb
        << ',' << b.bws;
    return out.str();
}

// --- decoder pretraining -----------------------------------------------------

void Classifier::validate() const {
    if (W.rows() <= 0 || W.cols() <= 0) throw UsageError("classifier must have classes and inputs");
    if (b.size() != W.rows()) throw UsageError("classifier bias size mismatch");
}

Classifier Classifier::make(int classes, int l_C, Rng& rng) {
    if (classes <= 0 || l_C <= 0) throw UsageError("classifier dims must be positive");
    Classifier c;
    c.W.resize(classes, l_C);
    const double bound = std::sqrt(6.0 / (classes + l_C));
    for (Eigen::Index r = 0; r < c.W.rows(); ++r)
        for (Eigen::Index k = 0; k < c.W.cols(); ++k) c.W(r, k) = rng.uniform(-bound, bound);
    c.b = Vector::Zero(classes);
    return c;
}

void Classifier::to_store(TensorStore& store, const std::string& prefix) const {
    store.put(Tensor::from_matrix(prefix + ".weight", W));
    store.put(Tensor::from_vector(prefix + ".bias", b));
}

Classifier Classifier::from_store(const TensorStore& store, const std::string& prefix) {
    Classifier c;
    c.W = store.get(prefix + ".weight").as_matrix();
    c.b = store.get(prefix + ".bias").as_vector();
    c.validate();
    return c;
}

std::vector<ParamView> param_views(Classifier& c, const std::string& prefix) {
    return {{prefix + ".weight", c.W.data(), static_cast<std::size_t>(c.W.size())},
            {prefix + ".bias", c.b.data(), static_cast<std::size_t>(c.b.size())}};
}

std::vector<GradView> grad_views(const ClassifierGrads& grads) {
    return {{grads.d_W.data(), static_cast<std::size_t>(grads.d_W.size())},
            {grads.d_b.data(), static_cast<std::size_t>(grads.d_b.size())}};
}

DecoderPretrainEval decoder_pretrain_loss(const JofParams& params, const LatentCodes& codes,
                                          const std::vector<Vec3>& x, const std::vector<double>& o,
                                          const std::vector<Vec3>& rgb, int label,
                                          const Classifier& classifier, bool want_param_grads) {
    params.validate();
    codes.validate();
    classifier.validate();
    if (x.empty() || x.size() != o.size() || x.size() != rgb.size())
        throw UsageError("pretraining sample arrays must agree and be non-empty");
    if (label < 0 || label >= classifier.W.rows()) throw UsageError("class label out of range");

    DecoderPretrainEval out;
    out.d_fC = Vector::Zero(params.l_C);
    out.d_fS = Vector::Zero(params.l_S);
    out.d_fA = Vector::Zero(params.l_A);

    ShapeBatchEval sev = shape_forward_batch(params, codes, x);
    std::vector<double> d_o(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double err = sev.o[j] - o[j];
        out.loss_S += err * err;
        d_o[j] = 2.0 * err;
    }

    std::vector<Vec3> interior_x;
    std::vector<int> interior_idx;
    std::vector<std::size_t> interior_src;
    for (std::size_t j = 0; j < x.size(); ++j)
        if (o[j] > 0.5) {
            interior_x.push_back(x[j]);
            interior_idx.push_back(sev.idx[j]);
            interior_src.push_back(j);
        }

    ShapeBatchGrad sgrad = shape_backward_batch(params, sev, d_o, want_param_grads);
    out.d_fC += sgrad.d_fC;
    out.d_fS += sgrad.d_fS;
    if (want_param_grads) out.d_shape = std::move(sgrad.params);

    if (interior_x.empty()) {
        warn();
        if (want_param_grads) out.d_albedo = NetGrads::zeros_like(params.albedo_net);
    } else {
        AlbedoBatchEval aev = albedo_forward_batch(params, codes, interior_x, interior_idx);
        std::vector<Vec3> d_rgb(interior_x.size());
        for (std::size_t j = 0; j < interior_x.size(); ++j) {
            const Vec3& target = rgb[interior_src[j]];
            for (int c = 0; c < 3; ++c) {
                const double err = aev.rgb[j][c] - target[c];
                out.loss_A += err * err;
                d_rgb[j][c] = 2.0 * err;
            }
        }
        AlbedoBatchGrad agrad = albedo_backward_batch(params, aev, d_rgb, want_param_grads);
        out.d_fC += agrad.d_fC;
        out.d_fS += agrad.d_fS;
        out.d_fA += agrad.d_fA;
        if (want_param_grads) out.d_albedo = std::move(agrad.params);
    }

    // class head: stable softmax cross-entropy on f_C
    Vector z = classifier.W * codes.f_C + classifier.b;
    const double zmax = z.maxCoeff();
    Vector ez = (z.array() - zmax).exp();
    const double zsum = ez.sum();
    Vector prob = ez / zsum;
    out.loss_C = -std::log(std::max(prob[label], 1e-300));
    Vector d_z = prob;
    d_z[label] -= 1.0;
    out.d_classifier.d_W = d_z * codes.f_C.transpose();
    out.d_classifier.d_b = d_z;
    out.d_fC += classifier.W.transpose() * d_z;

    out.loss = out.loss_S + out.loss_A + out.loss_C;
    return out;
}

// --- encoder pretraining -----------------------------------------------------

EncoderPretrainEval encoder_pretrain_loss(const LatentCodes& pred, const Vec3& pose_pred,
                                          const LatentCodes& target, const Vec3& pose_target,
                                          double img_loss, const LossWeights& w) {
    pred.validate();
    target.validate();
    if (pred.f_C.size() != target.f_C.size() || pred.f_S.size() != target.f_S.size() ||
        pred.f_A.size() != target.f_A.size())
        throw UsageError("code dimensions disagree");
    w.validate();

    EncoderPretrainEval out;
    const Vector dC = pred.f_C - target.f_C;
    const Vector dS = pred.f_S - target.f_S;
    const Vector dA = pred.f_A - target.f_A;
    out.loss_code =
        w.lambda_C * dC.squaredNorm() + w.lambda_S * dS.squaredNorm() + w.lambda_A * dA.squaredNorm();
    out.d_fC = 2.0 * w.lambda_C * dC;
    out.d_fS = 2.0 * w.lambda_S * dS;
    out.d_fA = 2.0 * w.lambda_A * dA;
    for (int k = 0; k < 3; ++k) {
        const double d = pose_pred[k] - pose_target[k];
        out.loss_pose += w.lambda_P * d * d;
        out.d_pose[k] = 2.0 * w.lambda_P * d;
    }
    out.loss_img = img_loss;
    out.loss = img_loss + out.loss_code + out.loss_pose;
    return out;
}

} // namespace jof
