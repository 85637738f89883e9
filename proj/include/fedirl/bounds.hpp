#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "fedirl/federation.hpp"
#include "fedirl/fusion.hpp"
#include "fedirl/gridworld.hpp"
#include "fedirl/maxent_irl.hpp"
#include "fedirl/ot.hpp"
#include "fedirl/parallel.hpp"
#include "fedirl/util.hpp"

namespace fedirl {

/// Normalized gamma-discounted occupancy over the lattice plus the terminal
/// bookkeeping entry, so the vector always sums to one.
struct OccupancyMeasure {
    Vector rho;  // n + 1 entries; last is the terminal share

    double terminal_mass() const { return rho[rho.size() - 1]; }
};

inline Matrix deterministic_policy_matrix(const std::vector<int>& policy, int num_actions) {
    Matrix prob = Matrix::Zero(static_cast<int>(policy.size()), num_actions);
    for (std::size_t s = 0; s < policy.size(); ++s) prob(static_cast<int>(s), policy[s]) = 1.0;
    return prob;
}

/// Exact solve of the discounted occupancy system rho = (1-gamma) sum_t
/// gamma^t P((s_t,a_t) = x), with the terminal modeled as an absorbing state.
inline OccupancyMeasure occupancy(const TransitionKernel& kernel, const StateActionLattice& lat,
                                  const Matrix& policy, double gamma, const Vector& start) {
    const int S = lat.num_states();
    const int A = lat.num_actions();
    if (policy.rows() != S || policy.cols() != A) throw InvalidInput("occupancy: policy shape");
    if (start.size() != S) throw InvalidInput("occupancy: start distribution size");
    if (gamma <= 0.0 || gamma >= 1.0) throw InvalidInput("occupancy: gamma must lie in (0,1)");

    // State chain over S+1 states; the terminal self-loops.
    Matrix m = Matrix::Zero(S + 1, S + 1);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) m.row(s) += policy(s, a) * kernel.p.row(lat.index_of(s, a));
    m(S, S) = 1.0;

    Vector p0 = Vector::Zero(S + 1);
    p0.head(S) = start;
    const Matrix system = Matrix::Identity(S + 1, S + 1) - gamma * m.transpose();
    const Vector d = (1.0 - gamma) * system.partialPivLu().solve(p0);

    OccupancyMeasure occ;
    occ.rho = Vector::Zero(lat.n + 1);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) occ.rho[lat.index_of(s, a)] = d[s] * policy(s, a);
    occ.rho[lat.n] = d[S];
    return occ;
}

inline OccupancyMeasure occupancy(const TransitionKernel& kernel, const StateActionLattice& lat,
                                  const std::vector<int>& policy, double gamma,
                                  const Vector& start) {
    return occupancy(kernel, lat, deterministic_policy_matrix(policy, lat.num_actions()), gamma,
                     start);
}

/// J(pi; r) = <rho, r> / (1 - gamma); the terminal carries zero reward.
inline double discounted_return(const OccupancyMeasure& occ, const RewardField& reward,
                                double gamma) {
    if (occ.rho.size() != reward.r.size() + 1)
        throw InvalidInput("discounted_return: occupancy/reward size mismatch");
    return occ.rho.head(reward.r.size()).dot(reward.r) / (1.0 - gamma);
}

/// Exact evaluation of a deterministic policy: solves (I - gamma P_pi) v = r_pi.
inline Vector evaluate_policy_exact(const TransitionKernel& kernel, const StateActionLattice& lat,
                                    const RewardField& reward, double gamma,
                                    const std::vector<int>& policy) {
    const int S = lat.num_states();
    Matrix p_pi(S, S);
    Vector r_pi(S);
    for (int s = 0; s < S; ++s) {
        const int row = lat.index_of(s, policy[s]);
        p_pi.row(s) = kernel.p.row(row).head(S);
        r_pi[s] = reward.r[row];
    }
    const Matrix system = Matrix::Identity(S, S) - gamma * p_pi;
    return system.partialPivLu().solve(r_pi);
}

/// Howard policy iteration on top of a value-iteration start. Terminates at a
/// greedily stable policy, so the returned policy is optimal up to linear
/// solver roundoff; used whenever a theorem needs an exactly optimal policy.
inline std::vector<int> optimal_policy_exact(const TransitionKernel& kernel,
                                             const StateActionLattice& lat,
                                             const RewardField& reward, double gamma) {
    const int S = lat.num_states();
    const int A = lat.num_actions();
    std::vector<int> policy = value_iteration(kernel, lat, reward, gamma, 1e-10).policy;
    const double tol = 1e-12 * std::max(1.0, reward.r.cwiseAbs().maxCoeff() / (1.0 - gamma));
    for (int sweep = 0; sweep < 500; ++sweep) {
        const Vector v = evaluate_policy_exact(kernel, lat, reward, gamma, policy);
        bool changed = false;
        for (int s = 0; s < S; ++s) {
            double best = reward.r[lat.index_of(s, policy[s])] +
                          gamma * kernel.p.row(lat.index_of(s, policy[s])).head(S).dot(v);
            int best_a = policy[s];
            for (int a = 0; a < A; ++a) {
                const int row = lat.index_of(s, a);
                const double q = reward.r[row] + gamma * kernel.p.row(row).head(S).dot(v);
                if (q > best + tol) {  // strict improvement; avoids roundoff cycling
                    best = q;
                    best_a = a;
                    changed = true;
                }
            }
            policy[s] = best_a;
        }
        if (!changed) return policy;
    }
    throw ConvergenceError("optimal_policy_exact: policy iteration did not stabilize");
}

/// Eq. 10-12 evaluation on one instance with oracle access to r_star. The
/// computed barycenter is the epsilon-regularized one, so every inequality is
/// checked against RHS + slack(epsilon), where slack is the measured l1 gap
/// to a much sharper barycenter, converted to the inequality's own metric.
struct Theorem1Check {
    double sigma = 0.0;
    double z_star = 0.0;
    double z_min = 0.0;
    double diameter = 0.0;
    double delta = 0.0;
    double kappa = 0.0;
    std::vector<double> eps;
    double sum_alpha_eps = 0.0;
    double slack_l1 = 0.0;

    // Eq. 10: W2(p_bar, p_star); Eq. 11: ||r_bar - r_star||_2; Eq. 12: ||theta_hat - theta_star||_2.
    double lhs[3] = {0, 0, 0};
    double rhs[3] = {0, 0, 0};
    double slack[3] = {0, 0, 0};

    SimplexMeasure p_star;
    std::vector<SimplexMeasure> p_clients;
    SimplexMeasure p_bar;
    RewardField r_bar;  // back-mapped with the oracle Z(r_star)
    Vector theta_hat;
    Vector theta_star;

    // Proof-step quantities on the same instance.
    double contraction_lhs = 0.0;  // W2(p_bar, p_star)
    double contraction_rhs = 0.0;  // sqrt(4 sum alpha_i W2^2(p_i, p_star)) + W2-slack
    double l2delta_lhs = 0.0;      // ||p_bar - p_star||_2
    double l2delta_rhs = 0.0;      // sqrt(2) W2(p_bar, p_star) / delta

    bool inequality_pass(int k, double tol = 1e-9) const {
        return lhs[k] <= rhs[k] + slack[k] + tol;
    }
    bool pass(double tol = 1e-9) const {
        return inequality_pass(0, tol) && inequality_pass(1, tol) && inequality_pass(2, tol) &&
               contraction_lhs <= contraction_rhs + tol && l2delta_lhs <= l2delta_rhs + tol;
    }
};

inline Theorem1Check check_theorem1(const FeatureMatrix& features, const CostMatrix& cost,
                                    const RewardField& r_star,
                                    const std::vector<RewardField>& client_rewards,
                                    const Vector& alpha, const BarycenterConfig& bary_config,
                                    double sigma_margin = 1.0, double sharp_epsilon = 0.02) {
    if (client_rewards.empty()) throw InvalidInput("check_theorem1: no client rewards");
    Theorem1Check check;
    check.diameter = cost.diameter;
    check.delta = cost.min_spacing;
    check.kappa = features.kappa;

    std::vector<RewardField> all = client_rewards;
    all.push_back(r_star);
    check.sigma = choose_sigma(all, sigma_margin);

    const auto star = shift_normalize(r_star, check.sigma);
    check.p_star = star.measure;
    check.z_star = star.z;
    check.z_min = star.z;
    for (const auto& r : client_rewards) {
        const auto sn = shift_normalize(r, check.sigma);
        check.p_clients.push_back(sn.measure);
        check.z_min = std::min(check.z_min, sn.z);
        check.eps.push_back((r.r - r_star.r).cwiseAbs().sum());
    }
    for (std::size_t i = 0; i < check.eps.size(); ++i)
        check.sum_alpha_eps += alpha[static_cast<int>(i)] * check.eps[i];

    BarycenterConfig working = bary_config;
    working.weights = alpha;
    check.p_bar = entropic_barycenter(check.p_clients, cost, working);
    BarycenterConfig sharp = working;
    sharp.epsilon = sharp_epsilon;
    const SimplexMeasure p_sharp = entropic_barycenter(check.p_clients, cost, sharp);
    check.slack_l1 = (check.p_bar.p - p_sharp.p).cwiseAbs().sum();

    const double root = std::sqrt(check.sum_alpha_eps);
    const double w2 = exact_w2(check.p_bar, check.p_star, cost).w2;
    const double slack_w2 = check.diameter * std::sqrt(check.slack_l1 / 2.0);

    check.lhs[0] = w2;
    check.rhs[0] = 2.0 * check.diameter / std::sqrt(check.z_min) * root;
    check.slack[0] = slack_w2;

    check.r_bar = back_map(check.p_bar, check.z_star, check.sigma);
    check.lhs[1] = (check.r_bar.r - r_star.r).norm();
    check.rhs[1] = 2.0 * std::sqrt(2.0) * check.diameter * check.z_star /
                   (check.delta * std::sqrt(check.z_min)) * root;
    check.slack[1] = check.z_star * check.slack_l1;

    check.theta_hat = recover_parameters(check.r_bar, features);
    check.theta_star = recover_parameters(r_star, features);
    check.lhs[2] = (check.theta_hat - check.theta_star).norm();
    check.rhs[2] = check.kappa * check.rhs[1];
    check.slack[2] = check.kappa * check.slack[1];

    double contraction_sum = 0.0;
    for (std::size_t i = 0; i < check.p_clients.size(); ++i) {
        const double w2i = exact_w2(check.p_clients[i], check.p_star, cost).w2;
        contraction_sum += alpha[static_cast<int>(i)] * w2i * w2i;
    }
    check.contraction_lhs = w2;
    check.contraction_rhs = std::sqrt(4.0 * contraction_sum) + slack_w2;
    check.l2delta_lhs = (check.p_bar.p - check.p_star.p).norm();
    check.l2delta_rhs = std::sqrt(2.0) * w2 / check.delta;
    return check;
}

/// Eq. 13-15 evaluation for one client: exact optimal policies via policy
/// iteration and exact occupancy solves, so a violation would indicate a
/// genuine bound failure rather than solver error.
struct Theorem2ClientCheck {
    double j_star = 0.0;   // J_i(pi_{r_star}; r_star)
    double j_fused = 0.0;  // J_i(pi_{r_bar}; r_star)
    double gap = 0.0;
    double rhs_inf = 0.0;   // Eq. 13
    double rhs_l2 = 0.0;    // Eq. 14
    double rhs_full = 0.0;  // Eq. 15 with the entropic slack carried through

    bool pass(double tol = 1e-9) const {
        return gap >= -tol && gap <= rhs_inf + tol && rhs_inf <= rhs_l2 + tol &&
               gap <= rhs_full + tol;
    }
};

inline Theorem2ClientCheck check_theorem2_client(const TransitionKernel& kernel,
                                                 const StateActionLattice& lat,
                                                 const RewardField& r_star,
                                                 const Theorem1Check& t1, double gamma,
                                                 const Vector& start) {
    Theorem2ClientCheck check;
    const auto pi_star = optimal_policy_exact(kernel, lat, r_star, gamma);
    const auto pi_fused = optimal_policy_exact(kernel, lat, t1.r_bar, gamma);
    const auto rho_star = occupancy(kernel, lat, pi_star, gamma, start);
    const auto rho_fused = occupancy(kernel, lat, pi_fused, gamma, start);
    check.j_star = discounted_return(rho_star, r_star, gamma);
    check.j_fused = discounted_return(rho_fused, r_star, gamma);
    check.gap = check.j_star - check.j_fused;

    const Vector diff = r_star.r - t1.r_bar.r;
    check.rhs_inf = 2.0 / (1.0 - gamma) * diff.cwiseAbs().maxCoeff();
    check.rhs_l2 = 2.0 / (1.0 - gamma) * diff.norm();
    check.rhs_full = 4.0 * std::sqrt(2.0) * t1.diameter * t1.z_star /
                         ((1.0 - gamma) * t1.delta * std::sqrt(t1.z_min)) *
                         std::sqrt(t1.sum_alpha_eps) +
                     2.0 / (1.0 - gamma) * t1.slack[1];
    return check;
}

/// Proof step 1: ||T_sigma(r) - T_sigma(s)||_1 <= (2 / Z_min) ||r - s||_1.
struct LipschitzCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    bool pass(double tol = 1e-12) const { return lhs <= rhs + tol; }
};

inline LipschitzCheck lipschitz_t_sigma_check(const RewardField& r, const RewardField& s,
                                              double sigma) {
    const auto pr = shift_normalize(r, sigma);
    const auto ps = shift_normalize(s, sigma);
    LipschitzCheck check;
    check.lhs = (pr.measure.p - ps.measure.p).cwiseAbs().sum();
    check.rhs = 2.0 / std::min(pr.z, ps.z) * (r.r - s.r).cwiseAbs().sum();
    return check;
}

/// Proof step 2: W2^2(mu, nu) <= D^2 TV(mu, nu) = (D^2 / 2) ||mu - nu||_1.
struct TvW2Check {
    double lhs = 0.0;
    double rhs = 0.0;
    bool pass(double tol = 1e-9) const { return lhs <= rhs + tol; }
};

inline TvW2Check tv_w2_check(const SimplexMeasure& mu, const SimplexMeasure& nu,
                             const CostMatrix& cost) {
    TvW2Check check;
    check.lhs = exact_w2(mu, nu, cost).plan.cost;
    check.rhs = cost.diameter * cost.diameter / 2.0 * (mu.p - nu.p).cwiseAbs().sum();
    return check;
}

struct CampaignConfig {
    int theorem_trials = 100;
    int proof_step_trials = 500;
    std::uint64_t seed = 7;
    int threads = 0;
    BarycenterConfig barycenter;  // working solver; weights filled per instance
    double sharp_epsilon = 0.02;
    double sigma_margin = 1.0;
};

struct TheoremTrialRecord {
    int trial = 0;
    std::vector<double> lhs, rhs, slack;  // Eq. 10-12
    std::vector<double> gaps, gap_rhs;    // per client, Eq. 13/15
    double sum_alpha_eps = 0.0;
    bool t1_pass = false;
    bool t2_pass = false;
};

struct CampaignResult {
    int t1_pass = 0, t1_total = 0;
    int t2_pass = 0, t2_total = 0;
    int lipschitz_pass = 0, lipschitz_total = 0;
    int tv_pass = 0, tv_total = 0;
    int contraction_pass = 0, contraction_total = 0;
    int l2delta_pass = 0, l2delta_total = 0;
    std::vector<TheoremTrialRecord> trials;

    bool all_pass() const {
        return t1_pass == t1_total && t2_pass == t2_total && lipschitz_pass == lipschitz_total &&
               tv_pass == tv_total && contraction_pass == contraction_total &&
               l2delta_pass == l2delta_total;
    }
};

namespace detail {

inline SimplexMeasure random_simplex(int n, Rng& rng) {
    Vector p(n);
    for (int i = 0; i < n; ++i) p[i] = -std::log(1.0 - rng.uniform());
    return SimplexMeasure{p / p.sum()};
}

inline CostMatrix random_grid_cost(Rng& rng, StateActionLattice* lattice_out = nullptr) {
    for (int attempt = 0;; ++attempt) {
        GridSpec spec;
        spec.width = 2 + rng.uniform_int(4);
        spec.height = 2 + rng.uniform_int(4);
        spec.goal = {spec.width - 1, spec.height - 1};
        const int max_obstacles = std::max(0, spec.width * spec.height - 3);
        const int want = rng.uniform_int(std::min(4, max_obstacles + 1));
        while (static_cast<int>(spec.obstacles.size()) < want) {
            GridCell c{rng.uniform_int(spec.width), rng.uniform_int(spec.height)};
            if (c == spec.goal || c == GridCell{0, 0}) continue;
            spec.obstacles.insert(c);
        }
        try {
            const StateActionLattice lat = build_lattice(spec);
            if (lattice_out) *lattice_out = lat;
            return build_cost_matrix(lat, 0.5 + rng.uniform());
        } catch (const InvalidInput&) {
            if (attempt > 200) throw;
        }
    }
}

}  // namespace detail

/// Randomized verification: genuine MaxEnt IRL fleets for Theorems 1-2 and
/// synthetic instances for the four proof-step inequalities.
inline CampaignResult run_verification_campaign(const CampaignConfig& config) {
    CampaignResult result;
    result.t1_total = config.theorem_trials;
    result.t2_total = config.theorem_trials;
    result.trials.resize(config.theorem_trials);

    parallel_for(
        config.theorem_trials,
        [&](int t) {
            FleetConfig fc;
            fc.num_clients = 3;
            fc.width = 5;
            fc.height = 5;
            fc.obstacle_count = 3;
            fc.master_seed = derive_seed(config.seed, "theorem-trial", t);
            fc.demos_per_client = 40;
            const Fleet fleet = build_fleet(fc);

            Rng rng(derive_seed(config.seed, "trial-irl", t));
            std::vector<RewardField> rewards;
            for (const auto& env : fleet.clients) {
                IrlConfig irl;
                irl.iterations = 20 + rng.uniform_int(130);
                const auto expert =
                    expert_policy(env.kernel, fleet.lattice, fleet.r_star, fc.gamma);
                const auto demos = sample_demonstrations(env.spec, fleet.lattice, env.kernel,
                                                         expert, fc.demos_per_client,
                                                         env.demo_seed);
                rewards.push_back(run_maxent_irl(env.irl_kernel, fleet.lattice, fleet.features,
                                                 demos, env.start_dist, fc.gamma, fc.horizon, irl)
                                      .reward_hat);
            }
            const Vector alpha = Vector::Constant(3, 1.0 / 3.0);
            const Theorem1Check t1 =
                check_theorem1(fleet.features, fleet.cost, fleet.r_star, rewards, alpha,
                               config.barycenter, config.sigma_margin, config.sharp_epsilon);

            TheoremTrialRecord rec;
            rec.trial = t;
            rec.lhs = {t1.lhs[0], t1.lhs[1], t1.lhs[2]};
            rec.rhs = {t1.rhs[0], t1.rhs[1], t1.rhs[2]};
            rec.slack = {t1.slack[0], t1.slack[1], t1.slack[2]};
            rec.sum_alpha_eps = t1.sum_alpha_eps;
            rec.t1_pass = t1.pass();
            rec.t2_pass = true;
            for (const auto& env : fleet.clients) {
                const auto t2 = check_theorem2_client(env.kernel, fleet.lattice, fleet.r_star, t1,
                                                      fc.gamma, env.start_dist);
                rec.gaps.push_back(t2.gap);
                rec.gap_rhs.push_back(t2.rhs_full);
                rec.t2_pass = rec.t2_pass && t2.pass();
            }
            result.trials[t] = std::move(rec);
        },
        config.threads);
    for (const auto& rec : result.trials) {
        result.t1_pass += rec.t1_pass ? 1 : 0;
        result.t2_pass += rec.t2_pass ? 1 : 0;
    }

    // Proof-step campaigns on synthetic instances.
    result.lipschitz_total = config.proof_step_trials;
    result.tv_total = config.proof_step_trials;
    result.contraction_total = config.proof_step_trials;
    result.l2delta_total = config.proof_step_trials;

    std::vector<char> lip_ok(config.proof_step_trials, 0), tv_ok(config.proof_step_trials, 0);
    std::vector<char> contr_ok(config.proof_step_trials, 0), l2_ok(config.proof_step_trials, 0);
    parallel_for(
        config.proof_step_trials,
        [&](int t) {
            Rng rng(derive_seed(config.seed, "proof-step", t));

            const int n = 4 + rng.uniform_int(85);
            RewardField r{Vector::Zero(n)}, s{Vector::Zero(n)};
            for (int i = 0; i < n; ++i) {
                r.r[i] = rng.uniform(-2.0, 2.0);
                s.r[i] = rng.uniform(-2.0, 2.0);
            }
            const double sigma = choose_sigma({r, s}, config.sigma_margin);
            lip_ok[t] = lipschitz_t_sigma_check(r, s, sigma).pass() ? 1 : 0;

            const CostMatrix cost = detail::random_grid_cost(rng);
            const auto mu = detail::random_simplex(cost.n(), rng);
            const auto nu = detail::random_simplex(cost.n(), rng);
            tv_ok[t] = tv_w2_check(mu, nu, cost).pass() ? 1 : 0;

            // Contraction and l2/delta on a random barycenter instance.
            const int k = 2 + rng.uniform_int(3);
            std::vector<SimplexMeasure> inputs;
            for (int i = 0; i < k; ++i) inputs.push_back(detail::random_simplex(cost.n(), rng));
            const SimplexMeasure target = detail::random_simplex(cost.n(), rng);
            Vector alpha(k);
            for (int i = 0; i < k; ++i) alpha[i] = rng.uniform(0.2, 1.0);
            alpha /= alpha.sum();

            BarycenterConfig working = config.barycenter;
            working.weights = alpha;
            const SimplexMeasure bary = entropic_barycenter(inputs, cost, working);
            BarycenterConfig sharp = working;
            sharp.epsilon = config.sharp_epsilon;
            const SimplexMeasure bary_sharp = entropic_barycenter(inputs, cost, sharp);
            const double slack_w2 =
                cost.diameter * std::sqrt((bary.p - bary_sharp.p).cwiseAbs().sum() / 2.0);

            const double w2 = exact_w2(bary, target, cost).w2;
            double sum = 0.0;
            for (int i = 0; i < k; ++i) {
                const double w2i = exact_w2(inputs[i], target, cost).w2;
                sum += alpha[i] * w2i * w2i;
            }
            contr_ok[t] = w2 <= std::sqrt(4.0 * sum) + slack_w2 + 1e-9 ? 1 : 0;
            l2_ok[t] = (bary.p - target.p).norm() <=
                               std::sqrt(2.0) * w2 / cost.min_spacing + 1e-9
                           ? 1
                           : 0;
        },
        config.threads);
    for (int t = 0; t < config.proof_step_trials; ++t) {
        result.lipschitz_pass += lip_ok[t];
        result.tv_pass += tv_ok[t];
        result.contraction_pass += contr_ok[t];
        result.l2delta_pass += l2_ok[t];
    }
    return result;
}

}  // namespace fedirl
