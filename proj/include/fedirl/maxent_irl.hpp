#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "fedirl/gridworld.hpp"
#include "fedirl/util.hpp"

namespace fedirl {

struct IrlConfig {
    double learning_rate = 5e-2;
    double l2_lambda = 1e-3;
    int iterations = 200;
    double soft_vi_tolerance = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0.0) throw InvalidInput("IrlConfig: learning_rate must be positive");
        if (l2_lambda < 0.0) throw InvalidInput("IrlConfig: l2_lambda must be nonnegative");
        if (iterations < 1) throw InvalidInput("IrlConfig: iterations must be >= 1");
        if (soft_vi_tolerance <= 0.0)
            throw InvalidInput("IrlConfig: soft_vi_tolerance must be positive");
    }
};

/// Discounted feature counts, either averaged from demonstrations or induced
/// by a policy.
struct FeatureExpectation {
    Vector mu;
    enum class Source { empirical, policy } source = Source::empirical;
};

/// Soft-optimal policy and its state-action/state values.
struct SoftPolicy {
    Matrix prob;  // S x A, rows sum to 1
    Matrix q;     // S x A
    Vector v;     // S
};

inline FeatureExpectation empirical_feature_expectation(const std::vector<Trajectory>& demos,
                                                        const FeatureMatrix& features,
                                                        const StateActionLattice& lat,
                                                        double gamma) {
    if (demos.empty()) throw InvalidInput("empirical_feature_expectation: no demonstrations");
    Vector mu = Vector::Zero(features.d);
    for (const auto& traj : demos) {
        double discount = 1.0;
        for (const auto& [s, a] : traj.steps) {
            mu += discount * features.phi.row(lat.index_of(s, a)).transpose();
            discount *= gamma;
        }
    }
    mu /= static_cast<double>(demos.size());
    return {mu, FeatureExpectation::Source::empirical};
}

/// Fixed point of Q = r + gamma P V with V = logsumexp_a Q; the induced
/// stochastic policy is pi(a|s) = exp(Q(s,a) - V(s)).
inline SoftPolicy soft_value_iteration(const TransitionKernel& kernel,
                                       const StateActionLattice& lat, const RewardField& reward,
                                       double gamma, double tolerance = 1e-8,
                                       const Vector* warm_start = nullptr) {
    if (reward.r.size() != lat.n) throw InvalidInput("soft_value_iteration: reward size mismatch");
    if (gamma < 0.0 || gamma >= 1.0)
        throw InvalidInput("soft_value_iteration: gamma must lie in [0,1)");
    const int S = lat.num_states();
    const int A = lat.num_actions();

    int cap = 64;
    if (gamma > 0.0)
        cap = std::max(cap, 10 * static_cast<int>(std::ceil(std::log(tolerance) / std::log(gamma))));

    SoftPolicy sp;
    sp.v = warm_start ? *warm_start : Vector::Zero(S);
    sp.q = Matrix::Zero(S, A);
    for (int it = 0; it < cap; ++it) {
        Vector v_next(S);
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                const int row = lat.index_of(s, a);
                sp.q(s, a) = reward.r[row] + gamma * kernel.p.row(row).head(S).dot(sp.v);
            }
            v_next[s] = logsumexp(sp.q.row(s).transpose());
        }
        const double residual = (v_next - sp.v).cwiseAbs().maxCoeff();
        sp.v = v_next;
        if (residual < tolerance) {
            sp.prob = (sp.q.colwise() - sp.v).array().exp();
            return sp;
        }
    }
    throw ConvergenceError("soft_value_iteration: iteration cap exceeded");
}

/// Discounted feature counts of a stochastic policy from a start distribution.
/// horizon >= 0 propagates t = 0..horizon inclusive; horizon < 0 solves the
/// discounted occupancy linear system (infinite horizon).
inline FeatureExpectation policy_feature_expectation(const TransitionKernel& kernel,
                                                     const StateActionLattice& lat,
                                                     const SoftPolicy& policy,
                                                     const FeatureMatrix& features, double gamma,
                                                     const Vector& start_distribution,
                                                     int horizon) {
    const int S = lat.num_states();
    const int A = lat.num_actions();
    if (start_distribution.size() != S)
        throw InvalidInput("policy_feature_expectation: start distribution size mismatch");

    // phi_pi(s) = sum_a pi(a|s) phi(s,a); M(s,s') = sum_a pi(a|s) P(s'|s,a).
    Matrix phi_pi = Matrix::Zero(S, features.d);
    Matrix m = Matrix::Zero(S, S);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            const int row = lat.index_of(s, a);
            phi_pi.row(s) += policy.prob(s, a) * features.phi.row(row);
            m.row(s) += policy.prob(s, a) * kernel.p.row(row).head(S);
        }

    Vector mu = Vector::Zero(features.d);
    if (horizon >= 0) {
        Vector d = start_distribution;
        double discount = 1.0;
        for (int t = 0; t <= horizon; ++t) {
            mu += discount * (phi_pi.transpose() * d);
            if (t < horizon) d = m.transpose() * d;
            discount *= gamma;
        }
    } else {
        Matrix a = Matrix::Identity(S, S) - gamma * m.transpose();
        Vector d = a.partialPivLu().solve(start_distribution);
        mu = phi_pi.transpose() * d;
    }
    return {mu, FeatureExpectation::Source::policy};
}

/// Gradient of the regularized MaxEnt objective: mu_E - mu_pi - lambda theta.
inline Vector maxent_gradient(const FeatureExpectation& mu_expert,
                              const FeatureExpectation& mu_policy, const Vector& theta,
                              double l2_lambda) {
    if (mu_expert.mu.size() != mu_policy.mu.size() || mu_expert.mu.size() != theta.size())
        throw InvalidInput("maxent_gradient: dimension mismatch");
    return mu_expert.mu - mu_policy.mu - l2_lambda * theta;
}

/// Regularized MaxEnt objective with the log-partition evaluated through soft
/// value iteration: L = <theta, mu_E> - E_{s0~p0}[V_theta(s0)] - lambda/2 |theta|^2.
/// Its exact gradient is mu_E - mu_pi(infinite horizon) - lambda theta.
inline double maxent_objective(const TransitionKernel& kernel, const StateActionLattice& lat,
                               const FeatureMatrix& features, const Vector& mu_expert,
                               const Vector& theta, double gamma, double l2_lambda,
                               const Vector& start_distribution, double vi_tolerance = 1e-10) {
    const RewardField r{features.phi * theta};
    const SoftPolicy sp = soft_value_iteration(kernel, lat, r, gamma, vi_tolerance);
    return theta.dot(mu_expert) - start_distribution.dot(sp.v) -
           0.5 * l2_lambda * theta.squaredNorm();
}

struct IrlResult {
    Vector theta_hat;
    RewardField reward_hat;
    std::vector<double> objective_trace;
    std::vector<double> grad_norm_trace;
};

/// Client-side MaxEnt IRL: plain gradient ascent with a constant step from
/// theta = 0, exactly config.iterations updates. The kernel should be the
/// episodic one so the model matches how demonstrations are truncated.
inline IrlResult run_maxent_irl(const TransitionKernel& kernel, const StateActionLattice& lat,
                                const FeatureMatrix& features,
                                const std::vector<Trajectory>& demos,
                                const Vector& start_distribution, double gamma, int horizon,
                                const IrlConfig& config) {
    config.validate();
    if (demos.empty()) throw InvalidInput("run_maxent_irl: no demonstrations");

    const Vector mu_e = empirical_feature_expectation(demos, features, lat, gamma).mu;
    IrlResult result;
    result.theta_hat = Vector::Zero(features.d);
    Vector v_warm = Vector::Zero(lat.num_states());
    for (int it = 0; it < config.iterations; ++it) {
        const RewardField r{features.phi * result.theta_hat};
        const SoftPolicy sp =
            soft_value_iteration(kernel, lat, r, gamma, config.soft_vi_tolerance, &v_warm);
        v_warm = sp.v;
        // Demonstrations record at most `horizon` steps (t = 0..horizon-1).
        const FeatureExpectation mu_pi = policy_feature_expectation(
            kernel, lat, sp, features, gamma, start_distribution, horizon - 1);
        const double objective = result.theta_hat.dot(mu_e) - start_distribution.dot(sp.v) -
                                 0.5 * config.l2_lambda * result.theta_hat.squaredNorm();
        const Vector grad = mu_e - mu_pi.mu - config.l2_lambda * result.theta_hat;
        if (!std::isfinite(objective) || !grad.allFinite())
            throw ConvergenceError(
                "run_maxent_irl: objective is not finite; learning_rate is too large");
        result.objective_trace.push_back(objective);
        result.grad_norm_trace.push_back(grad.norm());
        result.theta_hat += config.learning_rate * grad;
    }
    result.reward_hat = RewardField{features.phi * result.theta_hat};
    return result;
}

}  // namespace fedirl
