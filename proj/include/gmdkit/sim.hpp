#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <gmdkit/model_select.hpp>
#include <gmdkit/random.hpp>

#include <algorithm>
#include <thread>

namespace gmdkit::sim {

struct SignalFactor
{
    Vector u;
    Vector v;
    double amp_mean = 1.0;
    double amp_sd = 0.0;
};

/// Matrix-variate normal model X = sum_k c phi_k u_k v_k^T + Sigma^{1/2} Z Delta^{1/2}.
///
/// The common amplitude scale c is set so that
///   E[sum_k (c phi_k)^2 |u_k|^2 |v_k|^2] / (tr Sigma tr Delta) = snr_target.
struct SimulationSpec
{
    Index n = 0;
    Index p = 0;
    std::vector<SignalFactor> factors;
    Matrix row_cov;
    Matrix col_cov;
    Matrix row_cov_half;
    Matrix col_cov_half;
    double snr_target = 1.0;
    std::uint64_t seed = 0;
    bool center = true;

    /// Fills the symmetric square roots and checks dimensions and PSD-ness.
    void finalize();
    double amplitude_scale() const;
};

/// Symmetric PSD square root; raises not_psd below -1e-10 * max eigenvalue.
Matrix symmetric_sqrt(const Matrix& m);

struct SimulatedData
{
    DataMatrix x;
    /// Signal part, centered like x when spec.center is set.
    Matrix signal;
    Matrix noise;
    /// Realized amplitudes c * phi_k.
    Vector amplitudes;
};

/// Draws one data set from the stream derived from (spec.seed, replicate).
SimulatedData generate_full(const SimulationSpec& spec, std::uint64_t replicate = 0);
DataMatrix generate(const SimulationSpec& spec, std::uint64_t replicate = 0);

// Spatio-temporal preset --------------------------------------------------------

inline constexpr Index grid_side = 16;
inline constexpr Index time_points = 200;

/// Rectangle on the 16 x 16 grid, rows [r0, r0 + h), cols [c0, c0 + w).
struct Roi
{
    Index r0, c0, h, w;
};

/// Three disjoint regions of interest per spatial factor; all six are disjoint.
const std::vector<std::vector<Roi>>& preset_rois();
Vector roi_indicator(const std::vector<Roi>& rois);

/// Two-factor spatio-temporal model: indicator ROIs on the 16 x 16 grid,
/// sinusoids with 1 and 2 cycles over 200 time points, phi_1 ~ N(1, sigma2),
/// phi_2 ~ N(0.5, sigma2), SNR = sigma2, Sigma = grid AR(0.9) with Manhattan
/// distance, Delta = chain AR(0.8).
SimulationSpec spatio_temporal_preset(double sigma2, std::uint64_t seed);

// Metrics -------------------------------------------------------------------

/// min_s || s est/|est| - truth/|truth| ||^2 over s = +-1; 1 for a zero estimate.
double msse(const Eigen::Ref<const Vector>& estimate, const Eigen::Ref<const Vector>& truth);

/// min_s || s |truth| est/|est| - truth ||^2, the squared error after matching
/// the estimate's sign and scale to the truth; |truth|^2 for a zero estimate.
double scaled_squared_error(const Eigen::Ref<const Vector>& estimate, const Eigen::Ref<const Vector>& truth);

struct SupportRates
{
    double tp = 0.0;
    double fp = 0.0;
};

SupportRates support_metrics(const Eigen::Ref<const Vector>& estimate, const std::vector<bool>& truth_support,
                             double threshold = 1e-12);

std::vector<bool> support_of(const Eigen::Ref<const Vector>& x, double threshold = 1e-12);

struct RecoveryMetrics
{
    std::vector<double> msse_u;
    std::vector<double> msse_v;
    std::vector<double> tp;
    std::vector<double> fp;
    std::vector<double> var_explained;
    /// Per factor, one (fp, tp) point per lambda.
    std::vector<std::vector<std::pair<double, double>>> roc_points;
};

/// Support recovery of the u factors along a lambda path. Grid values are
/// fractions of each factor's lambda_max and must be ascending. Factor k is the
/// unpenalized GMD factor of the residual after removing factors < k; its u is
/// re-estimated by the Q-norm lasso for every lambda with v and d held fixed.
RecoveryMetrics roc_curve(const Eigen::Ref<const Matrix>& x, const QuadraticOperator& q,
                          const QuadraticOperator& r, const std::vector<std::vector<bool>>& truth_supports,
                          const std::vector<double>& lambda_fractions, std::uint64_t seed = 0);

/// Area under a piecewise-linear ROC curve, closed with (0,0) and (1,1).
double roc_auc(std::vector<std::pair<double, double>> points);

// Experiments ---------------------------------------------------------------

struct Stat
{
    double mean = 0.0;
    double stderr_ = 0.0;
};

Stat summarize(const std::vector<double>& values);

struct ReportRow
{
    std::string setting;
    std::string method;
    std::vector<Stat> values;
};

struct ExperimentReport
{
    std::string name;
    std::string table;
    int replicates = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> columns;
    std::vector<ReportRow> rows;

    const ReportRow& row(const std::string& setting, const std::string& method) const;
    Stat value(const std::string& setting, const std::string& method, const std::string& column) const;
};

struct ExperimentOptions
{
    /// Noise levels; empty means the defaults of each protocol.
    std::vector<double> sigmas;
    /// Restrict table3/table4 to one noise type ("block", "graph"); empty runs both.
    std::string noise;
    double tol = 1e-9;
    int max_iter = 1000;
};

/// Names: "table1", "table2", "table3" (alias "functional"), "table4" (alias "sparse").
ExperimentReport run_experiment(const std::string& name, int replicates, std::uint64_t seed,
                                const ExperimentOptions& opts = {});

std::string report_csv(const ExperimentReport& rep);

/// Runs fn(i) for i in [0, count) on up to hardware_concurrency threads and
/// returns the results in index order.
template <class T>
std::vector<T> parallel_map(int count, const std::function<T(int)>& fn)
{
    std::vector<T> out(static_cast<std::size_t>(std::max(count, 0)));
    const int workers = std::max(1, std::min<int>(count, static_cast<int>(std::thread::hardware_concurrency())));
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = fn(i);
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < count; i += workers) out[static_cast<std::size_t>(i)] = fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// Noise structures for the functional and sparse protocols.

/// Compound-symmetric blocks of `block` variables with unit diagonal.
Matrix block_covariance(Index n, Index block, double rho);
/// Laplacian of the graph whose blocks are complete graphs.
QuadraticOperator block_laplacian(Index n, Index block);

struct RandomGraph
{
    QuadraticOperator laplacian;
    Matrix covariance;
};

/// Each vertex links to Poisson(mean_degree) distinct random others; the
/// covariance inverts the Laplacian made strictly diagonally dominant by
/// adding max(0, offdiag abs row sum - diag) + 0.01 to each diagonal entry.
RandomGraph random_graph(Index n, double mean_degree, Rng& rng);

} // namespace gmdkit::sim
