#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "fedirl/gridworld.hpp"
#include "fedirl/util.hpp"

namespace fedirl {

/// Squared ground-metric costs on the lattice, with the diameter D and the
/// minimum nonzero spacing delta of the underlying metric d.
struct CostMatrix {
    Matrix c;  // n x n, entries d(x,y)^2
    double diameter = 0.0;
    double min_spacing = 0.0;

    int n() const { return static_cast<int>(c.rows()); }
    std::size_t bytes() const { return sizeof(double) * static_cast<std::size_t>(c.size()); }
};

/// Probability vector on the lattice support.
struct SimplexMeasure {
    Vector p;

    void validate(double tol = 1e-10) const {
        if (p.size() == 0) throw InvalidInput("SimplexMeasure: empty");
        if (p.minCoeff() < -tol) throw InvalidInput("SimplexMeasure: negative entry");
        if (std::abs(p.sum() - 1.0) > tol) throw InvalidInput("SimplexMeasure: mass must be 1");
    }
};

struct TransportPlan {
    Matrix plan;   // n x n, nonnegative
    double cost = 0.0;  // sum_ij plan_ij * c_ij
};

using StateMetric = std::function<double(GridCell, GridCell)>;

inline double euclidean_cells(GridCell a, GridCell b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

/// d((s,a),(s',a')) = metric(cell s, cell s') + penalty * [a != a']; stores d^2.
inline CostMatrix build_cost_matrix(const StateActionLattice& lat, const StateMetric& metric,
                                    double action_penalty) {
    if (lat.n <= 0) throw InvalidInput("build_cost_matrix: empty lattice");
    CostMatrix cm;
    cm.c = Matrix::Zero(lat.n, lat.n);
    double dmax = 0.0;
    double dmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < lat.n; ++i) {
        const auto [si, ai] = lat.state_action(i);
        for (int j = i; j < lat.n; ++j) {
            const auto [sj, aj] = lat.state_action(j);
            double d = metric(lat.cell(si), lat.cell(sj));
            if (ai != aj) d += action_penalty;
            cm.c(i, j) = d * d;
            cm.c(j, i) = d * d;
            if (d > dmax) dmax = d;
            if (d > 0.0 && d < dmin) dmin = d;
        }
    }
    cm.diameter = dmax;
    cm.min_spacing = std::isfinite(dmin) ? dmin : 0.0;
    if (cm.min_spacing <= 0.0)
        throw InvalidInput("build_cost_matrix: ground metric has no nonzero spacing");
    return cm;
}

inline CostMatrix build_cost_matrix(const StateActionLattice& lat, double action_penalty = 1.0) {
    return build_cost_matrix(lat, euclidean_cells, action_penalty);
}

namespace detail {

/// Dense transportation simplex (MODI / u-v method with a spanning-tree
/// basis). Exact for the discrete OT linear program at small n.
class TransportSimplex {
public:
    TransportSimplex(const Vector& supply, const Vector& demand, const Matrix& cost)
        : a_(supply), b_(demand), c_(cost), rows_(static_cast<int>(supply.size())),
          cols_(static_cast<int>(demand.size())) {}

    TransportPlan solve() {
        northwest_corner();
        const double tol = 1e-11 * std::max(1.0, c_.cwiseAbs().maxCoeff());
        const long max_pivots = 200L * (rows_ + cols_) * (rows_ + cols_) + 1000;
        for (long pivot = 0; pivot < max_pivots; ++pivot) {
            compute_duals();
            int ei = -1, ej = -1;
            double best = -tol;
            for (int i = 0; i < rows_; ++i)
                for (int j = 0; j < cols_; ++j) {
                    if (basic_(i, j)) continue;
                    const double rc = c_(i, j) - u_[i] - v_[j];
                    if (rc < best) {
                        best = rc;
                        ei = i;
                        ej = j;
                    }
                }
            if (ei < 0) return finish();
            pivot_on(ei, ej);
        }
        throw ConvergenceError("exact_w2: transportation simplex exceeded pivot budget");
    }

private:
    void northwest_corner() {
        flow_ = Matrix::Zero(rows_, cols_);
        basic_ = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows_, cols_, false);
        Vector ra = a_, rb = b_;
        int i = 0, j = 0;
        while (true) {
            const double f = std::min(ra[i], rb[j]);
            flow_(i, j) = f;
            basic_(i, j) = true;
            ra[i] -= f;
            rb[j] -= f;
            if (i == rows_ - 1 && j == cols_ - 1) break;
            if (i < rows_ - 1 && (ra[i] <= rb[j] || j == cols_ - 1))
                ++i;
            else
                ++j;
        }
    }

    /// Duals from the basis tree: u_i + v_j = c_ij on basic cells.
    void compute_duals() {
        const int N = rows_ + cols_;
        std::vector<std::vector<int>> adj(N);  // node -> incident basic cells (i * cols_ + j)
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < cols_; ++j)
                if (basic_(i, j)) {
                    adj[i].push_back(i * cols_ + j);
                    adj[rows_ + j].push_back(i * cols_ + j);
                }
        u_.assign(rows_, 0.0);
        v_.assign(cols_, 0.0);
        parent_node_.assign(N, -1);
        parent_cell_.assign(N, -1);
        std::vector<char> seen(N, 0);
        std::deque<int> queue{0};
        seen[0] = 1;
        while (!queue.empty()) {
            const int node = queue.front();
            queue.pop_front();
            for (int cell : adj[node]) {
                const int i = cell / cols_, j = cell % cols_;
                const int other = (node < rows_) ? rows_ + j : i;
                if (seen[other]) continue;
                seen[other] = 1;
                parent_node_[other] = node;
                parent_cell_[other] = cell;
                if (other >= rows_)
                    v_[other - rows_] = c_(i, j) - u_[node];
                else
                    u_[other] = c_(i, j) - v_[node - rows_];
                queue.push_back(other);
            }
        }
    }

    void pivot_on(int ei, int ej) {
        // Tree path between the entering cell's endpoints closes the cycle.
        const int N = rows_ + cols_;
        std::vector<int> depth(N, -1);
        std::vector<int> order;
        depth[0] = 0;
        // parent_node_/parent_cell_ already hold a tree rooted at node 0.
        auto path_to_root = [&](int node) {
            std::vector<int> cells;
            while (parent_node_[node] >= 0) {
                cells.push_back(parent_cell_[node]);
                node = parent_node_[node];
            }
            return cells;
        };
        std::vector<int> pa = path_to_root(ei);
        std::vector<int> pb = path_to_root(rows_ + ej);
        // Drop the common suffix (path above the least common ancestor).
        while (!pa.empty() && !pb.empty() && pa.back() == pb.back()) {
            pa.pop_back();
            pb.pop_back();
        }
        std::vector<int> cycle;  // cells from ei up to LCA, then down to ej
        cycle.insert(cycle.end(), pa.begin(), pa.end());
        cycle.insert(cycle.end(), pb.rbegin(), pb.rend());

        // Walking from node ei, arcs alternate -,+,-,+,...; entering arc is +.
        double theta = std::numeric_limits<double>::infinity();
        int leave = -1;
        for (std::size_t k = 0; k < cycle.size(); k += 2) {
            const int cell = cycle[k];
            const double f = flow_(cell / cols_, cell % cols_);
            if (f < theta) {
                theta = f;
                leave = cell;
            }
        }
        for (std::size_t k = 0; k < cycle.size(); ++k) {
            const int cell = cycle[k];
            const double sign = (k % 2 == 0) ? -1.0 : 1.0;
            flow_(cell / cols_, cell % cols_) += sign * theta;
        }
        flow_(ei, ej) += theta;
        basic_(ei, ej) = true;
        if (leave >= 0) {
            flow_(leave / cols_, leave % cols_) = 0.0;
            basic_(leave / cols_, leave % cols_) = false;
        }
    }

    TransportPlan finish() const {
        TransportPlan out;
        out.plan = flow_.cwiseMax(0.0);
        out.cost = (out.plan.array() * c_.array()).sum();
        return out;
    }

    Vector a_, b_;
    const Matrix& c_;
    int rows_, cols_;
    Matrix flow_;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> basic_;
    std::vector<double> u_, v_;
    std::vector<int> parent_node_, parent_cell_;
};

}  // namespace detail

struct ExactW2Result {
    TransportPlan plan;
    double w2 = 0.0;  // sqrt of the optimal squared-cost objective
};

/// Exact W2 by linear programming; the small-n oracle every entropic result is
/// checked against.
inline ExactW2Result exact_w2(const SimplexMeasure& mu, const SimplexMeasure& nu,
                              const CostMatrix& cost) {
    mu.validate();
    nu.validate();
    const int n = cost.n();
    if (mu.p.size() != n || nu.p.size() != n) throw InvalidInput("exact_w2: dimension mismatch");
    if (n > 200) throw InvalidInput("exact_w2: LP oracle limited to n <= 200");
    detail::TransportSimplex simplex(mu.p, nu.p, cost.c);
    ExactW2Result res;
    res.plan = simplex.solve();
    res.w2 = std::sqrt(std::max(res.plan.cost, 0.0));
    return res;
}

struct SinkhornResult {
    TransportPlan plan;
    double sharp_cost = 0.0;          // <plan, c>, the unregularized readout
    int iterations = 0;
    double marginal_violation = 0.0;  // l1 row + column marginal error
};

namespace detail {

/// out_i = log sum_j exp(-c(i,j)/eps + g_j); max-shifted for stability.
inline Vector log_kernel_apply(const Matrix& c, double eps, const Vector& g) {
    const int n = static_cast<int>(c.rows());
    Vector out(n);
    for (int i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) m = std::max(m, -c(i, j) / eps + g[j]);
        if (!std::isfinite(m)) {
            out[i] = m;
            continue;
        }
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += std::exp(-c(i, j) / eps + g[j] - m);
        out[i] = m + std::log(acc);
    }
    return out;
}

inline Vector floor_and_renormalize(const Vector& p, double floor = 1e-12) {
    Vector q = p.cwiseMax(floor);
    return q / q.sum();
}

inline void require_finite_scaling(const Vector& f, const Vector& g, double eps, double c_max,
                                   const char* who) {
    if (f.allFinite() && g.allFinite()) return;
    const double suggested = c_max / 700.0;
    throw ConvergenceError(std::string(who) +
                           ": kernel underflow, epsilon too small for the cost diameter; "
                           "use epsilon >= " +
                           std::to_string(suggested));
}

}  // namespace detail

/// Log-domain Sinkhorn-Knopp between two measures. Zero entries are floored
/// at 1e-12 and renormalized; iteration stops once the l1 marginal violation
/// drops below `tol` or `max_iters` scaling rounds have run.
inline SinkhornResult sinkhorn_w2(const SimplexMeasure& mu, const SimplexMeasure& nu,
                                  const CostMatrix& cost, double epsilon, int max_iters,
                                  double tol = 1e-7) {
    mu.validate();
    nu.validate();
    if (epsilon <= 0.0) throw InvalidInput("sinkhorn_w2: epsilon must be positive");
    if (max_iters < 1) throw InvalidInput("sinkhorn_w2: need at least one iteration");
    const int n = cost.n();
    if (mu.p.size() != n || nu.p.size() != n) throw InvalidInput("sinkhorn_w2: dimension mismatch");

    const Vector log_mu = detail::floor_and_renormalize(mu.p).array().log();
    const Vector log_nu = detail::floor_and_renormalize(nu.p).array().log();
    const double c_max = cost.c.maxCoeff();

    Vector log_u = Vector::Zero(n), log_v = Vector::Zero(n);
    SinkhornResult res;
    for (int it = 0; it < max_iters; ++it) {
        log_u = log_mu - detail::log_kernel_apply(cost.c, epsilon, log_v);
        log_v = log_nu - detail::log_kernel_apply(cost.c, epsilon, log_u);
        detail::require_finite_scaling(log_u, log_v, epsilon, c_max, "sinkhorn_w2");
        res.iterations = it + 1;
        // Column marginals are exact after the v-update; measure the row error.
        const Vector row_marginal =
            (log_u.array() + detail::log_kernel_apply(cost.c, epsilon, log_v).array()).exp();
        res.marginal_violation = (row_marginal - mu.p).cwiseAbs().sum();
        if (res.marginal_violation <= tol) break;
    }

    res.plan.plan = Matrix(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            res.plan.plan(i, j) = std::exp(log_u[i] - cost.c(i, j) / epsilon + log_v[j]);
    res.plan.cost = (res.plan.plan.array() * cost.c.array()).sum();
    res.sharp_cost = res.plan.cost;
    return res;
}

/// Weights and solver knobs for the entropic barycenter. Defaults follow the
/// fusion hyperparameters used throughout the experiments.
struct BarycenterConfig {
    double epsilon = 0.5;
    int sinkhorn_iters = 10;
    int outer_iters = 50;
    double momentum = 0.5;  // log-space smoothing coefficient in [0,1)
    Vector weights;         // alpha in the simplex; empty means uniform

    void validate(int num_measures) const {
        if (epsilon <= 0.0) throw InvalidInput("BarycenterConfig: epsilon must be positive");
        if (sinkhorn_iters < 1 || outer_iters < 1)
            throw InvalidInput("BarycenterConfig: iteration counts must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw InvalidInput("BarycenterConfig: momentum must lie in [0,1)");
        if (weights.size() != 0) {
            if (static_cast<int>(weights.size()) != num_measures)
                throw InvalidInput("BarycenterConfig: weight count mismatch");
            if (weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-10)
                throw InvalidInput("BarycenterConfig: weights must lie in the simplex");
        }
    }
};

struct BarycenterDiagnostics {
    std::vector<double> marginal_violations;  // per outer iteration
    std::vector<double> objectives;           // optional sharp objectives
};

/// Entropic W2 barycenter on the fixed support via iterative Bregman
/// projections in the log domain. Each outer iteration runs `sinkhorn_iters`
/// projection cycles: every input is projected onto its own marginal, the
/// candidate barycenter is the alpha-weighted log-space geometric mean of the
/// resulting second marginals, and the inputs' scalings are re-projected onto
/// it. Momentum then smooths the log iterate once per outer iteration.
inline SimplexMeasure entropic_barycenter(const std::vector<SimplexMeasure>& measures,
                                          const CostMatrix& cost, const BarycenterConfig& config,
                                          BarycenterDiagnostics* diagnostics = nullptr) {
    const int K = static_cast<int>(measures.size());
    if (K < 1) throw InvalidInput("entropic_barycenter: need at least one measure");
    config.validate(K);
    const int n = cost.n();
    Vector alpha = config.weights.size() ? config.weights : Vector::Constant(K, 1.0 / K);

    std::vector<Vector> log_p(K);
    for (int i = 0; i < K; ++i) {
        measures[i].validate();
        if (measures[i].p.size() != n) throw InvalidInput("entropic_barycenter: dimension mismatch");
        log_p[i] = detail::floor_and_renormalize(measures[i].p).array().log();
    }

    // Initialize at the weighted geometric mean of the inputs.
    Vector log_b = Vector::Zero(n);
    for (int i = 0; i < K; ++i) log_b += alpha[i] * log_p[i];
    log_b.array() -= logsumexp(log_b);

    const double c_max = cost.c.maxCoeff();
    std::vector<Vector> log_u(K, Vector::Zero(n)), log_v(K, Vector::Zero(n));
    std::vector<Vector> log_m(K, Vector::Zero(n));
    for (int outer = 0; outer < config.outer_iters; ++outer) {
        Vector candidate = log_b;
        for (int cycle = 0; cycle < config.sinkhorn_iters; ++cycle) {
            candidate.setZero();
            for (int i = 0; i < K; ++i) {
                log_u[i] = log_p[i] - detail::log_kernel_apply(cost.c, config.epsilon, log_v[i]);
                log_m[i] =
                    log_v[i] + detail::log_kernel_apply(cost.c, config.epsilon, log_u[i]);
                candidate += alpha[i] * log_m[i];
            }
            for (int i = 0; i < K; ++i) log_v[i] += candidate - log_m[i];
        }
        log_b = config.momentum * log_b + (1.0 - config.momentum) * candidate;
        if (!log_b.allFinite())
            throw ConvergenceError(
                "entropic_barycenter: non-finite iterate; epsilon too small for the cost scale");
        log_b.array() -= logsumexp(log_b);
        // Keep the scalings coupled to the smoothed iterate.
        for (int i = 0; i < K; ++i) {
            log_v[i] += log_b - candidate;
            detail::require_finite_scaling(log_u[i], log_v[i], config.epsilon, c_max,
                                           "entropic_barycenter");
        }
        if (diagnostics) {
            double violation = 0.0;
            for (int i = 0; i < K; ++i)
                violation +=
                    ((log_m[i].array() - logsumexp(log_m[i])).exp() - log_b.array().exp())
                        .abs()
                        .sum();
            diagnostics->marginal_violations.push_back(violation);
        }
    }

    SimplexMeasure out{log_b.array().exp()};
    out.p /= out.p.sum();
    return out;
}

/// Sum_i alpha_i W2^2(candidate, mu_i), evaluated with the exact LP when the
/// support is small and Sinkhorn otherwise.
inline double w2_weighted_objective(const SimplexMeasure& candidate,
                                    const std::vector<SimplexMeasure>& measures,
                                    const Vector& weights, const CostMatrix& cost,
                                    double sinkhorn_epsilon = 0.02) {
    if (static_cast<int>(measures.size()) != weights.size())
        throw InvalidInput("w2_weighted_objective: weight count mismatch");
    double obj = 0.0;
    for (std::size_t i = 0; i < measures.size(); ++i) {
        if (weights[i] == 0.0) continue;
        double w2sq;
        if (cost.n() <= 200) {
            w2sq = exact_w2(candidate, measures[i], cost).plan.cost;
        } else {
            w2sq = sinkhorn_w2(candidate, measures[i], cost, sinkhorn_epsilon, 2000).sharp_cost;
        }
        obj += weights[i] * w2sq;
    }
    return obj;
}

}  // namespace fedirl
