#include <gmdkit/sim.hpp>

#include <gmdkit/gpca.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <gmdkit/io.hpp>

namespace gmdkit::sim {

Matrix symmetric_sqrt(const Matrix& m)
{
    if (m.rows() != m.cols()) fail(ErrorKind::dimension, "symmetric_sqrt: matrix is not square");
    if (m.size() == 0) return m;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
    if (es.info() != Eigen::Success) fail(ErrorKind::numerical, "symmetric_sqrt: eigensolver failed");
    const Vector& ev = es.eigenvalues();
    const double top = std::max(ev.maxCoeff(), 0.0);
    if (ev.minCoeff() < -1e-10 * std::max(1.0, top)) fail(ErrorKind::not_psd, "covariance is not positive semi-definite");
    Vector root = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

void SimulationSpec::finalize()
{
    if (n < 1 || p < 1) fail(ErrorKind::invalid_argument, "simulation: n and p must be positive");
    if (!(snr_target >= 0.0)) fail(ErrorKind::invalid_argument, "simulation: snr_target must be >= 0");
    for (const auto& f : factors) {
        if (f.u.size() != n || f.v.size() != p) fail(ErrorKind::dimension, "simulation: signal factor dimensions do not match (n, p)");
        if (!(f.amp_sd >= 0.0)) fail(ErrorKind::invalid_argument, "simulation: amplitude sd must be >= 0");
    }
    if (row_cov.size() == 0) row_cov = Matrix::Identity(n, n);
    if (col_cov.size() == 0) col_cov = Matrix::Identity(p, p);
    if (row_cov.rows() != n || row_cov.cols() != n) fail(ErrorKind::dimension, "simulation: row covariance must be n x n");
    if (col_cov.rows() != p || col_cov.cols() != p) fail(ErrorKind::dimension, "simulation: column covariance must be p x p");
    row_cov_half = symmetric_sqrt(row_cov);
    col_cov_half = symmetric_sqrt(col_cov);
}

double SimulationSpec::amplitude_scale() const
{
    double energy = 0.0;
    for (const auto& f : factors)
        energy += (f.amp_mean * f.amp_mean + f.amp_sd * f.amp_sd) * f.u.squaredNorm() * f.v.squaredNorm();
    if (energy <= 0.0) return 0.0;
    return std::sqrt(snr_target * row_cov.trace() * col_cov.trace() / energy);
}

SimulatedData generate_full(const SimulationSpec& spec, std::uint64_t replicate)
{
    if (spec.row_cov_half.rows() != spec.n || spec.col_cov_half.rows() != spec.p)
        fail(ErrorKind::invalid_argument, "simulation: spec is not finalized");
    Rng rng(derive_seed(spec.seed, replicate));
    std::normal_distribution<double> normal(0.0, 1.0);
    SimulatedData out;
    const double c = spec.amplitude_scale();
    out.amplitudes = Vector::Zero(static_cast<Index>(spec.factors.size()));
    Matrix signal = Matrix::Zero(spec.n, spec.p);
    for (std::size_t k = 0; k < spec.factors.size(); ++k) {
        const auto& f = spec.factors[k];
        const double phi = f.amp_mean + f.amp_sd * normal(rng);
        out.amplitudes(static_cast<Index>(k)) = c * phi;
        signal.noalias() += (c * phi) * f.u * f.v.transpose();
    }
    Matrix z = standard_normal_matrix(rng, spec.n, spec.p);
    Matrix noise = spec.row_cov_half * z * spec.col_cov_half;
    Matrix x = signal + noise;
    if (spec.center) {
        out.x = DataMatrix(double_center(x), true);
        out.signal = double_center(signal);
    } else {
        out.x = DataMatrix(std::move(x), false);
        out.signal = std::move(signal);
    }
    out.noise = std::move(noise);
    return out;
}

DataMatrix generate(const SimulationSpec& spec, std::uint64_t replicate)
{
    return generate_full(spec, replicate).x;
}

const std::vector<std::vector<Roi>>& preset_rois()
{
    static const std::vector<std::vector<Roi>> rois{
        {{1, 1, 4, 4}, {10, 2, 4, 4}, {2, 10, 4, 4}},
        {{6, 6, 3, 4}, {11, 10, 4, 4}, {7, 0, 4, 2}},
    };
    return rois;
}

Vector roi_indicator(const std::vector<Roi>& rois)
{
    Vector u = Vector::Zero(grid_side * grid_side);
    for (const auto& roi : rois)
        for (Index r = roi.r0; r < roi.r0 + roi.h; ++r)
            for (Index c = roi.c0; c < roi.c0 + roi.w; ++c) {
                if (r < 0 || c < 0 || r >= grid_side || c >= grid_side) fail(ErrorKind::invalid_argument, "ROI outside the grid");
                u(r * grid_side + c) = 1.0;
            }
    return u;
}

SimulationSpec spatio_temporal_preset(double sigma2, std::uint64_t seed)
{
    if (!(sigma2 > 0.0)) fail(ErrorKind::invalid_argument, "spatio_temporal_preset: sigma2 must be > 0");
    SimulationSpec spec;
    spec.n = grid_side * grid_side;
    spec.p = time_points;
    spec.seed = seed;
    spec.snr_target = sigma2;
    const double sd = std::sqrt(sigma2);
    const double means[2] = {1.0, 0.5};
    for (int k = 0; k < 2; ++k) {
        SignalFactor f;
        f.u = roi_indicator(preset_rois()[static_cast<std::size_t>(k)]);
        f.v.resize(time_points);
        for (Index t = 0; t < time_points; ++t)
            f.v(t) = std::sin(2.0 * std::numbers::pi * (k + 1) * static_cast<double>(t) / static_cast<double>(time_points));
        f.amp_mean = means[k];
        f.amp_sd = sd;
        spec.factors.push_back(std::move(f));
    }
    const Index grid_dims[2] = {grid_side, grid_side};
    const Index time_dims[1] = {time_points};
    spec.row_cov = ar_covariance(grid_dims, 0.9, ArMode::grid_manhattan);
    spec.col_cov = ar_covariance(time_dims, 0.8, ArMode::chain);
    spec.finalize();
    return spec;
}

double msse(const Eigen::Ref<const Vector>& estimate, const Eigen::Ref<const Vector>& truth)
{
    if (estimate.size() != truth.size()) fail(ErrorKind::dimension, "msse: dimension mismatch");
    const double tn = truth.norm();
    if (tn == 0.0) fail(ErrorKind::invalid_argument, "msse: zero truth vector");
    const double en = estimate.norm();
    if (en == 0.0) return 1.0;
    const Vector a = estimate / en, b = truth / tn;
    return std::min((a - b).squaredNorm(), (a + b).squaredNorm());
}

double scaled_squared_error(const Eigen::Ref<const Vector>& estimate, const Eigen::Ref<const Vector>& truth)
{
    return truth.squaredNorm() * msse(estimate, truth);
}

SupportRates support_metrics(const Eigen::Ref<const Vector>& estimate, const std::vector<bool>& truth_support,
                             double threshold)
{
    if (static_cast<Index>(truth_support.size()) != estimate.size()) fail(ErrorKind::dimension, "support_metrics: dimension mismatch");
    Index pos = 0, neg = 0, tp = 0, fp = 0;
    for (Index i = 0; i < estimate.size(); ++i) {
        const bool on = std::abs(estimate(i)) > threshold;
        if (truth_support[static_cast<std::size_t>(i)]) {
            ++pos;
            tp += on;
        } else {
            ++neg;
            fp += on;
        }
    }
    if (pos == 0) fail(ErrorKind::invalid_argument, "support_metrics: empty true support");
    SupportRates s;
    s.tp = static_cast<double>(tp) / static_cast<double>(pos);
    s.fp = neg > 0 ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0;
    return s;
}

std::vector<bool> support_of(const Eigen::Ref<const Vector>& x, double threshold)
{
    std::vector<bool> s(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) s[static_cast<std::size_t>(i)] = std::abs(x(i)) > threshold;
    return s;
}

RecoveryMetrics roc_curve(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                          const QuadraticOperator& r, const std::vector<std::vector<bool>>& truth_supports,
                          const std::vector<double>& lambda_fractions, std::uint64_t seed)
{
    if (!std::is_sorted(lambda_fractions.begin(), lambda_fractions.end()))
        fail(ErrorKind::invalid_argument, "roc_curve: lambda grid must be ascending");
    if (lambda_fractions.empty()) fail(ErrorKind::invalid_argument, "roc_curve: empty lambda grid");
    const Index k = static_cast<Index>(truth_supports.size());
    GMDOptions go;
    go.seed = seed;
    GMDFactors g = gmd_power(x, q, r, k, go);
    RecoveryMetrics m;
    const PenaltySpec lasso = PenaltySpec::lasso(0.0);
    for (Index j = 0; j < k; ++j) {
        const Vector u = g.U.col(j), v = g.V.col(j);
        const Matrix resid = x - reconstruct(g, j);
        const Vector y = resid * r.apply(v);
        const double lmax = lambda_max(y, q, lasso);
        std::vector<std::pair<double, double>> pts;
        Vector warm;
        for (double frac : lambda_fractions) {
            PenalizedFit fit = penalized_regression(y, q, lasso.with_lambda(frac * lmax), warm.size() ? &warm : nullptr);
            SupportRates s = support_metrics(fit.coef, truth_supports[static_cast<std::size_t>(j)]);
            pts.emplace_back(s.fp, s.tp);
            warm = fit.coef;
        }
        std::reverse(pts.begin(), pts.end());
        m.roc_points.push_back(std::move(pts));
        m.var_explained.push_back(0.0);
        SupportRates full = support_metrics(u, truth_supports[static_cast<std::size_t>(j)]);
        m.tp.push_back(full.tp);
        m.fp.push_back(full.fp);
    }
    VarianceReport vr = variance_explained(g, x, q, r);
    for (Index j = 0; j < k; ++j) m.var_explained[static_cast<std::size_t>(j)] = vr.per_component(j);
    return m;
}

double roc_auc(std::vector<std::pair<double, double>> points)
{
    points.emplace_back(0.0, 0.0);
    points.emplace_back(1.0, 1.0);
    std::sort(points.begin(), points.end());
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += (points[i].first - points[i - 1].first) * 0.5 * (points[i].second + points[i - 1].second);
    return area;
}

Stat summarize(const std::vector<double>& values)
{
    Stat s;
    if (values.empty()) return s;
    const double nv = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / nv;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double x : values) ss += (x - s.mean) * (x - s.mean);
        s.stderr_ = std::sqrt(ss / (nv - 1.0) / nv);
    }
    return s;
}

const ReportRow& ExperimentReport::row(const std::string& setting, const std::string& method) const
{
    for (const auto& r : rows)
        if (r.setting == setting && r.method == method) return r;
    fail(ErrorKind::invalid_argument, "report has no row '" + setting + "' / '" + method + "'");
}

Stat ExperimentReport::value(const std::string& setting, const std::string& method, const std::string& column) const
{
    const auto it = std::find(columns.begin(), columns.end(), column);
    if (it == columns.end()) fail(ErrorKind::invalid_argument, "report has no column '" + column + "'");
    return row(setting, method).values.at(static_cast<std::size_t>(it - columns.begin()));
}

std::string report_csv(const ExperimentReport& rep)
{
    std::ostringstream os;
    os << "setting,method";
    for (const auto& c : rep.columns) os << ',' << c << ',' << c << " se";
    os << '\n';
    for (const auto& r : rep.rows) {
        os << r.setting << ',' << r.method;
        for (const auto& s : r.values) os << ',' << io::format_double(s.mean) << ',' << io::format_double(s.stderr_);
        os << '\n';
    }
    return os.str();
}

Matrix block_covariance(Index n, Index block, double rho)
{
    if (n < 1 || block < 1) fail(ErrorKind::invalid_argument, "block_covariance: sizes must be positive");
    Matrix c = Matrix::Zero(n, n);
    for (Index b = 0; b < n; b += block) {
        const Index len = std::min(block, n - b);
        c.block(b, b, len, len).setConstant(rho);
    }
    c.diagonal().setOnes();
    return c;
}

QuadraticOperator block_laplacian(Index n, Index block)
{
    if (n < 1 || block < 1) fail(ErrorKind::invalid_argument, "block_laplacian: sizes must be positive");
    std::vector<std::pair<Index, Index>> edges;
    for (Index b = 0; b < n; b += block) {
        const Index end = std::min(b + block, n);
        for (Index i = b; i < end; ++i)
            for (Index j = i + 1; j < end; ++j) edges.emplace_back(i, j);
    }
    return build_graph_laplacian(n, edges);
}

RandomGraph random_graph(Index n, double mean_degree, Rng& rng)
{
    if (n < 2) fail(ErrorKind::invalid_argument, "random_graph: need at least two vertices");
    std::poisson_distribution<int> degree(mean_degree);
    std::set<std::pair<Index, Index>> edge_set;
    std::vector<Index> others(static_cast<std::size_t>(n - 1));
    for (Index i = 0; i < n; ++i) {
        const Index want = std::min<Index>(degree(rng), n - 1);
        Index pos = 0;
        for (Index j = 0; j < n; ++j)
            if (j != i) others[static_cast<std::size_t>(pos++)] = j;
        // Partial Fisher-Yates draws `want` distinct neighbours.
        for (Index t = 0; t < want; ++t) {
            std::uniform_int_distribution<Index> pick(t, n - 2);
            std::swap(others[static_cast<std::size_t>(t)], others[static_cast<std::size_t>(pick(rng))]);
            const Index j = others[static_cast<std::size_t>(t)];
            edge_set.emplace(std::min(i, j), std::max(i, j));
        }
    }
    std::vector<std::pair<Index, Index>> edges(edge_set.begin(), edge_set.end());
    RandomGraph g{build_graph_laplacian(n, edges), Matrix()};
    Matrix l = g.laplacian.dense();
    for (Index i = 0; i < n; ++i) {
        const double off = l.row(i).cwiseAbs().sum() - std::abs(l(i, i));
        l(i, i) += std::max(0.0, off - l(i, i)) + 0.01;
    }
    g.covariance = l.llt().solve(Matrix::Identity(n, n));
    g.covariance = 0.5 * (g.covariance + g.covariance.transpose());
    return g;
}

// Protocols ------------------------------------------------------------------

namespace {

using Samples = std::vector<std::vector<double>>;

struct MethodSamples
{
    std::string setting;
    std::string method;
    Samples columns;
};

void add_rows(ExperimentReport& rep, const std::vector<std::vector<MethodSamples>>& per_rep)
{
    if (per_rep.empty()) return;
    for (std::size_t m = 0; m < per_rep.front().size(); ++m) {
        ReportRow row;
        row.setting = per_rep.front()[m].setting;
        row.method = per_rep.front()[m].method;
        for (std::size_t c = 0; c < rep.columns.size(); ++c) {
            std::vector<double> vals;
            for (const auto& r : per_rep) vals.push_back(r[m].columns.at(c).at(0));
            row.values.push_back(summarize(vals));
        }
        rep.rows.push_back(std::move(row));
    }
}

MethodSamples sample(std::string setting, std::string method, std::vector<double> cols)
{
    MethodSamples s{std::move(setting), std::move(method), {}};
    for (double c : cols) s.columns.push_back({c});
    return s;
}

std::string sigma_label(double s)
{
    return "sigma=" + io::format_double(s);
}

GMDOptions gmd_options(const ExperimentOptions& opts, std::uint64_t seed)
{
    GMDOptions o;
    o.tol = opts.tol;
    o.max_iter = opts.max_iter;
    o.seed = seed;
    return o;
}

ExperimentReport table1(int replicates, std::uint64_t seed, const ExperimentOptions& opts)
{
    ExperimentReport rep;
    rep.table = "table1";
    rep.columns = {"%Var k=1", "%Var k=2", "MSSE u1", "MSSE u2", "MSSE v1", "MSSE v2"};
    const double sigma2 = opts.sigmas.empty() ? 1.0 : opts.sigmas.front() * opts.sigmas.front();
    const SimulationSpec spec = spatio_temporal_preset(sigma2, seed);
    const Index grid_dims[2] = {grid_side, grid_side};
    const Index time_dims[1] = {time_points};
    const auto eye_n = QuadraticOperator::identity(spec.n);
    const auto eye_p = QuadraticOperator::identity(spec.p);
    const auto prec_n = build_ar_precision(grid_dims, 0.9, ArMode::grid_manhattan);
    const auto prec_p = build_ar_precision(time_dims, 0.8, ArMode::chain);
    const auto lap_n = build_grid_laplacian(grid_side, grid_side);
    const auto lap_p = build_chain_laplacian(time_points);
    const auto smooth_n = build_grid_kernel_smoother(grid_side, grid_side, 5);
    const auto smooth_p = build_kernel_smoother(time_points, 10);
    struct Pair
    {
        const char* name;
        const QuadraticOperator* q;
        const QuadraticOperator* r;
    };
    const std::vector<Pair> pairs{
        {"Q=I R=I", &eye_n, &eye_p},
        {"Q=Sigma^-1 R=Delta^-1", &prec_n, &prec_p},
        {"Q=L R=L", &lap_n, &lap_p},
        {"Q=L R=S", &lap_n, &smooth_p},
        {"Q=S R=L", &smooth_n, &lap_p},
        {"Q=S R=S", &smooth_n, &smooth_p},
    };
    auto per_rep = parallel_map<std::vector<MethodSamples>>(replicates, [&](int i) {
        SimulatedData d = generate_full(spec, static_cast<std::uint64_t>(i));
        std::vector<MethodSamples> out;
        for (const auto& pr : pairs) {
            GMDFactors f = gmd_power(d.x.values, *pr.q, *pr.r, 2, gmd_options(opts, derive_seed(seed, i, 1)));
            VarianceReport vr = variance_explained(f, d.x.values, *pr.q, *pr.r);
            out.push_back(sample(sigma_label(std::sqrt(sigma2)), pr.name,
                                 {100.0 * vr.per_component(0), 100.0 * vr.per_component(1),
                                  msse(f.U.col(0), spec.factors[0].u), msse(f.U.col(1), spec.factors[1].u),
                                  msse(f.V.col(0), spec.factors[0].v), msse(f.V.col(1), spec.factors[1].v)}));
        }
        return out;
    });
    add_rows(rep, per_rep);
    return rep;
}

ExperimentReport table2(int replicates, std::uint64_t seed, const ExperimentOptions& opts)
{
    ExperimentReport rep;
    rep.table = "table2";
    rep.columns = {"TP u1", "FP u1", "TP u2", "FP u2"};
    const std::vector<double> sigmas = opts.sigmas.empty() ? std::vector<double>{0.5, 1.5} : opts.sigmas;
    const auto eye_n = QuadraticOperator::identity(grid_side * grid_side);
    const auto eye_p = QuadraticOperator::identity(time_points);
    const auto lap_n = build_grid_laplacian(grid_side, grid_side);
    const auto smooth_p = build_kernel_smoother(time_points, 10);
    std::vector<std::vector<MethodSamples>> all(static_cast<std::size_t>(replicates));
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
        const double s = sigmas[si];
        const SimulationSpec spec = spatio_temporal_preset(s * s, derive_seed(seed, si));
        std::vector<std::vector<bool>> truth;
        for (const auto& f : spec.factors) truth.push_back(support_of(f.u));
        auto per_rep = parallel_map<std::vector<MethodSamples>>(replicates, [&](int i) {
            SimulatedData d = generate_full(spec, static_cast<std::uint64_t>(i));
            std::vector<MethodSamples> out;
            const std::pair<const char*, std::pair<const QuadraticOperator*, const QuadraticOperator*>> methods[2] = {
                {"Sparse PCA", {&eye_n, &eye_p}}, {"Sparse GPCA", {&lap_n, &smooth_p}}};
            for (const auto& [name, ops] : methods) {
                SideSelection su{PenaltySpec::lasso(0.0), true, {}};
                SideSelection sv{PenaltySpec::none(), false, {}};
                GPMFOptions go;
                go.seed = derive_seed(seed, si, i);
                go.init = gmd_options(opts, go.seed);
                SelectedGPMF res = gpmf_select(d.x.values, *ops.first, *ops.second, 2, su, sv, go);
                SupportRates a = support_metrics(res.result.factors.U.col(0), truth[0]);
                SupportRates b = support_metrics(res.result.factors.U.col(1), truth[1]);
                out.push_back(sample(sigma_label(s), name, {a.tp, a.fp, b.tp, b.fp}));
            }
            return out;
        });
        for (int i = 0; i < replicates; ++i)
            for (auto& m : per_rep[static_cast<std::size_t>(i)]) all[static_cast<std::size_t>(i)].push_back(std::move(m));
    }
    add_rows(rep, all);
    return rep;
}

Vector grid_points(Index count)
{
    Vector x(count);
    for (Index i = 0; i < count; ++i) x(i) = static_cast<double>(i) / static_cast<double>(count - 1);
    return x;
}

struct NoiseSetting
{
    std::string name;
    Matrix row_cov, col_cov;
    std::shared_ptr<const QuadraticOperator> q, r;
};

NoiseSetting make_noise(const std::string& kind, Index n, Index p, std::uint64_t seed)
{
    NoiseSetting ns;
    ns.name = kind;
    if (kind == "block") {
        ns.row_cov = block_covariance(n, 5, 0.99);
        ns.col_cov = block_covariance(p, 5, 0.99);
        ns.q = std::make_shared<const QuadraticOperator>(block_laplacian(n, 5));
        ns.r = std::make_shared<const QuadraticOperator>(block_laplacian(p, 5));
    } else if (kind == "graph") {
        Rng rng(seed);
        RandomGraph rows = random_graph(n, 3.0, rng);
        RandomGraph cols = random_graph(p, 1.0, rng);
        ns.row_cov = rows.covariance;
        ns.col_cov = cols.covariance;
        ns.q = std::make_shared<const QuadraticOperator>(rows.laplacian);
        ns.r = std::make_shared<const QuadraticOperator>(cols.laplacian);
    } else {
        fail(ErrorKind::invalid_argument, "unknown noise type '" + kind + "'");
    }
    return ns;
}

/// Block noise is the same for every replicate; random graphs are redrawn.
NoiseSetting noise_for_replicate(const NoiseSetting& fixed, Index n, Index p, std::uint64_t seed, int replicate)
{
    if (fixed.name != "graph") return fixed;
    return make_noise(fixed.name, n, p, derive_seed(seed, static_cast<std::uint64_t>(replicate)));
}

std::vector<std::string> noise_kinds(const ExperimentOptions& opts)
{
    if (opts.noise.empty()) return {"block", "graph"};
    return {opts.noise};
}

ExperimentReport table3(int replicates, std::uint64_t seed, const ExperimentOptions& opts)
{
    ExperimentReport rep;
    rep.table = "table3";
    rep.columns = {"Row Factor", "Column Factor", "Rank 1 Matrix"};
    const Index n = 100, p = 100;
    const std::vector<double> sigmas = opts.sigmas.empty() ? std::vector<double>{0.5, 1.0} : opts.sigmas;
    const Vector x = grid_points(n);
    SignalFactor f;
    f.u = (4.0 * std::numbers::pi * x).array().sin();
    f.v = -(2.0 * std::numbers::pi * x).array().sin();
    f.amp_mean = 0.0;
    const auto eye_n = QuadraticOperator::identity(n);
    const auto eye_p = QuadraticOperator::identity(p);
    auto omega_n = std::make_shared<const QuadraticOperator>(build_second_difference_gram(n));
    auto omega_p = std::make_shared<const QuadraticOperator>(build_second_difference_gram(p));
    const PenaltySpec pen_u = PenaltySpec::omega_norm(0.0, omega_n);
    const PenaltySpec pen_v = PenaltySpec::omega_norm(0.0, omega_p);
    std::vector<std::vector<MethodSamples>> all(static_cast<std::size_t>(replicates));
    const auto kinds = noise_kinds(opts);
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const NoiseSetting fixed = make_noise(kinds[ki], n, p, derive_seed(seed, 0x6e6f697365ULL, ki));
        for (std::size_t si = 0; si < sigmas.size(); ++si) {
            const double s = sigmas[si];
            SignalFactor fs = f;
            fs.amp_sd = s;
            const std::uint64_t base = derive_seed(seed, ki, si);
            const std::string setting = fixed.name + " " + sigma_label(s);
            auto per_rep = parallel_map<std::vector<MethodSamples>>(replicates, [&](int i) {
                const NoiseSetting ns = noise_for_replicate(fixed, n, p, derive_seed(base, 0x6e6f697365ULL), i);
                SimulationSpec spec;
                spec.n = n;
                spec.p = p;
                spec.seed = base;
                spec.snr_target = s * s;
                spec.factors = {fs};
                spec.row_cov = ns.row_cov;
                spec.col_cov = ns.col_cov;
                spec.finalize();
                SimulatedData d = generate_full(spec, static_cast<std::uint64_t>(i));
                const std::uint64_t rs = derive_seed(spec.seed, i);
                std::vector<MethodSamples> out;
                auto score = [&](const char* name, const Vector& u, double dd, const Vector& v) {
                    const double rank1 = (dd * u * v.transpose() - d.signal).squaredNorm();
                    out.push_back(sample(setting, name,
                                         {scaled_squared_error(u, fs.u), scaled_squared_error(v, fs.v), rank1}));
                };
                GMDFactors svd = gmd_power(d.x.values, eye_n, eye_p, 1, gmd_options(opts, rs));
                score("SVD", svd.U.col(0), svd.D(0), svd.V.col(0));
                GMDFactors g = gmd_power(d.x.values, *ns.q, *ns.r, 1, gmd_options(opts, rs));
                // Rank-1 fit in the data scale: project X onto the u, v directions.
                auto data_scale = [&](const Vector& u, const Vector& v) {
                    const double uu = u.squaredNorm(), vv = v.squaredNorm();
                    return uu > 0.0 && vv > 0.0 ? u.dot(d.x.values * v) / (uu * vv) : 0.0;
                };
                score("GMD", g.U.col(0), data_scale(g.U.col(0), g.V.col(0)), g.V.col(0));
                SideSelection su{pen_u, true, {}}, sv{pen_v, true, {}};
                GPMFOptions go;
                go.seed = rs;
                go.init = gmd_options(opts, rs);
                go.omega.solver = OmegaSolver::secular;
                SelectedGPMF fg = gpmf_select(d.x.values, *ns.q, *ns.r, 1, su, sv, go);
                const Vector fu = fg.result.factors.U.col(0), fv = fg.result.factors.V.col(0);
                score("Functional GPMF", fu, data_scale(fu, fv), fv);
                return out;
            });
            for (int i = 0; i < replicates; ++i)
                for (auto& m : per_rep[static_cast<std::size_t>(i)]) all[static_cast<std::size_t>(i)].push_back(std::move(m));
        }
    }
    add_rows(rep, all);
    return rep;
}

ExperimentReport table4(int replicates, std::uint64_t seed, const ExperimentOptions& opts)
{
    ExperimentReport rep;
    rep.table = "table4";
    rep.columns = {"TP Row", "FP Row", "TP Column", "FP Column"};
    const Index n = 100, p = 100, nnz = 25;
    const std::vector<double> sigmas = opts.sigmas.empty() ? std::vector<double>{0.5, 1.0} : opts.sigmas;
    const auto eye_n = QuadraticOperator::identity(n);
    const auto eye_p = QuadraticOperator::identity(p);
    std::vector<std::vector<MethodSamples>> all(static_cast<std::size_t>(replicates));
    const auto kinds = noise_kinds(opts);
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const NoiseSetting fixed = make_noise(kinds[ki], n, p, derive_seed(seed, 0x6e6f697365ULL, ki));
        for (std::size_t si = 0; si < sigmas.size(); ++si) {
            const double s = sigmas[si];
            const std::uint64_t base = derive_seed(seed, ki, si, 4);
            const std::string setting = fixed.name + " " + sigma_label(s);
            auto per_rep = parallel_map<std::vector<MethodSamples>>(replicates, [&](int i) {
                const NoiseSetting ns = noise_for_replicate(fixed, n, p, derive_seed(base, 0x6e6f697365ULL), i);
                // The sparse factors are redrawn per replicate.
                Rng rng(derive_seed(base, i, 0x75ULL));
                auto sparse_factor = [&](Index dim) {
                    std::vector<Index> idx(static_cast<std::size_t>(dim));
                    std::iota(idx.begin(), idx.end(), Index{0});
                    std::shuffle(idx.begin(), idx.end(), rng);
                    std::normal_distribution<double> normal(0.0, s);
                    Vector out = Vector::Zero(dim);
                    for (Index t = 0; t < nnz; ++t) out(idx[static_cast<std::size_t>(t)]) = normal(rng);
                    return out;
                };
                SimulationSpec spec;
                spec.n = n;
                spec.p = p;
                spec.seed = base;
                spec.snr_target = s * s;
                SignalFactor f;
                f.u = sparse_factor(n);
                f.v = sparse_factor(p);
                f.amp_mean = 1.0;
                spec.factors = {f};
                spec.row_cov = ns.row_cov;
                spec.col_cov = ns.col_cov;
                spec.finalize();
                SimulatedData d = generate_full(spec, static_cast<std::uint64_t>(i));
                const std::vector<bool> tu = support_of(f.u), tv = support_of(f.v);
                std::vector<MethodSamples> out;
                const std::pair<const char*, std::pair<const QuadraticOperator*, const QuadraticOperator*>> methods[2] = {
                    {"Sparse PMD", {&eye_n, &eye_p}}, {"Sparse GPMF", {ns.q.get(), ns.r.get()}}};
                for (const auto& [name, ops] : methods) {
                    SideSelection su{PenaltySpec::lasso(0.0), true, {}}, sv{PenaltySpec::lasso(0.0), true, {}};
                    GPMFOptions go;
                    go.seed = derive_seed(base, i);
                    go.init = gmd_options(opts, go.seed);
                    SelectedGPMF res = gpmf_select(d.x.values, *ops.first, *ops.second, 1, su, sv, go);
                    SupportRates a = support_metrics(res.result.factors.U.col(0), tu);
                    SupportRates b = support_metrics(res.result.factors.V.col(0), tv);
                    out.push_back(sample(setting, name, {a.tp, a.fp, b.tp, b.fp}));
                }
                return out;
            });
            for (int i = 0; i < replicates; ++i)
                for (auto& m : per_rep[static_cast<std::size_t>(i)]) all[static_cast<std::size_t>(i)].push_back(std::move(m));
        }
    }
    add_rows(rep, all);
    return rep;
}

} // namespace

ExperimentReport run_experiment(const std::string& name, int replicates, std::uint64_t seed,
                                const ExperimentOptions& opts)
{
    if (replicates < 1) fail(ErrorKind::invalid_argument, "run_experiment: replicates must be >= 1");
    ExperimentReport rep;
    if (name == "table1") rep = table1(replicates, seed, opts);
    else if (name == "table2") rep = table2(replicates, seed, opts);
    else if (name == "table3" || name == "functional") rep = table3(replicates, seed, opts);
    else if (name == "table4" || name == "sparse") rep = table4(replicates, seed, opts);
    else fail(ErrorKind::invalid_argument, "unknown experiment '" + name + "'");
    rep.name = name;
    rep.replicates = replicates;
    rep.seed = seed;
    return rep;
}

} // namespace gmdkit::sim
