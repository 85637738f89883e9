#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "fedirl/util.hpp"

namespace fedirl {

struct GridCell {
    int x = 0;
    int y = 0;

    friend bool operator==(const GridCell& a, const GridCell& b) { return a.x == b.x && a.y == b.y; }
    friend bool operator<(const GridCell& a, const GridCell& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    }
};

/// Client-side grid-world description: geometry, deadly obstacle cells,
/// slip probability and episode parameters.
struct GridSpec {
    int width = 5;
    int height = 5;
    GridCell goal{4, 4};
    std::set<GridCell> obstacles;
    double slip = 0.0;       // in [0, 0.10]
    double gamma = 0.95;     // in (0, 1)
    int horizon = 40;

    bool in_grid(GridCell c) const {
        return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height;
    }
    bool is_obstacle(GridCell c) const { return obstacles.count(c) > 0; }

    void validate() const {
        if (width < 1 || height < 1) throw InvalidInput("GridSpec: width/height must be positive");
        if (!in_grid(goal)) throw InvalidInput("GridSpec: goal outside grid");
        if (is_obstacle(goal)) throw InvalidInput("GridSpec: goal must not be an obstacle");
        for (const auto& o : obstacles)
            if (!in_grid(o)) throw InvalidInput("GridSpec: obstacle outside grid");
        if (slip < 0.0 || slip > 0.10)
            throw InvalidInput("GridSpec: slip must lie in [0, 0.10]");
        if (gamma <= 0.0 || gamma >= 1.0) throw InvalidInput("GridSpec: gamma must lie in (0,1)");
        if (horizon < 1) throw InvalidInput("GridSpec: horizon must be positive");
    }
};

/// Action order is fixed so every client indexes the lattice identically.
enum class Action : int { up = 0, down = 1, left = 2, right = 3 };
inline constexpr int kNumActions = 4;

inline GridCell action_delta(int a) {
    switch (a) {
        case 0: return {0, -1};
        case 1: return {0, 1};
        case 2: return {-1, 0};
        default: return {1, 0};
    }
}

/// Perpendicular action pair used for slip outcomes.
inline std::pair<int, int> perpendicular(int a) {
    return (a <= 1) ? std::pair<int, int>{2, 3} : std::pair<int, int>{0, 1};
}

/// Shared state-action support X: row-major non-obstacle cells x fixed action
/// order. All measures, rewards and cost matrices live on this index set.
struct StateActionLattice {
    int width = 0;
    int height = 0;
    std::vector<GridCell> states;    // row-major order
    std::vector<int> cell_to_state;  // width*height entries, -1 for obstacle cells
    int n = 0;                       // |states| * kNumActions

    int num_states() const { return static_cast<int>(states.size()); }
    int num_actions() const { return kNumActions; }

    int cell_id(GridCell c) const { return c.y * width + c.x; }
    int state_of(GridCell c) const { return cell_to_state[cell_id(c)]; }
    int index_of(int state, int action) const { return state * kNumActions + action; }
    std::pair<int, int> state_action(int index) const {
        return {index / kNumActions, index % kNumActions};
    }
    GridCell cell(int state) const { return states[state]; }

    /// Bookkeeping index for the shared absorbing terminal (not part of X).
    int terminal_state() const { return num_states(); }
};

namespace detail {

inline std::vector<char> reachable_from(const GridSpec& spec, GridCell origin) {
    std::vector<char> seen(static_cast<std::size_t>(spec.width) * spec.height, 0);
    auto id = [&](GridCell c) { return c.y * spec.width + c.x; };
    std::deque<GridCell> queue{origin};
    seen[id(origin)] = 1;
    while (!queue.empty()) {
        GridCell c = queue.front();
        queue.pop_front();
        for (int a = 0; a < kNumActions; ++a) {
            GridCell d = {c.x + action_delta(a).x, c.y + action_delta(a).y};
            if (!spec.in_grid(d) || spec.is_obstacle(d) || seen[id(d)]) continue;
            seen[id(d)] = 1;
            queue.push_back(d);
        }
    }
    return seen;
}

}  // namespace detail

/// Builds the shared lattice for a spec. Rejects degenerate worlds where no
/// start cell can reach the goal.
inline StateActionLattice build_lattice(const GridSpec& spec) {
    spec.validate();
    StateActionLattice lat;
    lat.width = spec.width;
    lat.height = spec.height;
    lat.cell_to_state.assign(static_cast<std::size_t>(spec.width) * spec.height, -1);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            GridCell c{x, y};
            if (spec.is_obstacle(c)) continue;
            lat.cell_to_state[lat.cell_id(c)] = static_cast<int>(lat.states.size());
            lat.states.push_back(c);
        }
    lat.n = lat.num_states() * kNumActions;

    const auto reach = detail::reachable_from(spec, spec.goal);
    bool any_start_reaches = false;
    for (const auto& c : lat.states) {
        if (c == spec.goal) continue;
        if (reach[lat.cell_id(c)]) {
            any_start_reaches = true;
            break;
        }
    }
    if (!any_start_reaches)
        throw InvalidInput("build_lattice: goal is unreachable from every start state");
    return lat;
}

/// Row-stochastic transition kernel over the lattice plus one absorbing
/// terminal column. Rows are state-action pairs of X.
struct TransitionKernel {
    Matrix p;  // n x (num_states + 1); last column is the terminal
    int num_states = 0;

    int terminal() const { return num_states; }
};

/// Client dynamics: the intended move succeeds with probability 1-slip and
/// deviates to each perpendicular neighbour with probability slip/2. Grid
/// boundaries and non-state cells block (the agent stays in place); moves
/// into one of the spec's obstacle cells absorb into the terminal.
///
/// The lattice may come from a different (probe) spec, so a client's deadly
/// obstacle cells can be ordinary lattice states of the shared support.
inline TransitionKernel transition_kernel(const GridSpec& spec, const StateActionLattice& lat) {
    spec.validate();
    if (lat.width != spec.width || lat.height != spec.height)
        throw InvalidInput("transition_kernel: lattice geometry does not match spec");
    const int S = lat.num_states();
    TransitionKernel k;
    k.num_states = S;
    k.p = Matrix::Zero(lat.n, S + 1);

    auto add_outcome = [&](int row, GridCell from, GridCell target, double prob) {
        if (prob <= 0.0) return;
        if (!spec.in_grid(target)) target = from;  // grid boundary: stay in place
        if (spec.is_obstacle(target)) {
            k.p(row, S) += prob;  // collision ends the episode
            return;
        }
        int s = lat.state_of(target);
        if (s < 0) s = lat.state_of(from);  // blocked cell outside the support
        if (s < 0) throw InvalidInput("transition_kernel: state outside the lattice");
        k.p(row, s) += prob;
    };

    for (int s = 0; s < S; ++s) {
        const GridCell c = lat.cell(s);
        for (int a = 0; a < kNumActions; ++a) {
            const int row = lat.index_of(s, a);
            const GridCell intent{c.x + action_delta(a).x, c.y + action_delta(a).y};
            add_outcome(row, c, intent, 1.0 - spec.slip);
            const auto [pa, pb] = perpendicular(a);
            const GridCell da{c.x + action_delta(pa).x, c.y + action_delta(pa).y};
            const GridCell db{c.x + action_delta(pb).x, c.y + action_delta(pb).y};
            add_outcome(row, c, da, spec.slip / 2.0);
            add_outcome(row, c, db, spec.slip / 2.0);
        }
    }
    return k;
}

/// Copy of a kernel in which any transition into the goal state absorbs into
/// the terminal instead. Demonstrations stop on goal entry (the goal pair is
/// never recorded), so local IRL models the same stopped process to keep
/// empirical and policy feature counts comparable.
inline TransitionKernel episodic_kernel(const TransitionKernel& kernel,
                                        const StateActionLattice& lat, GridCell goal) {
    TransitionKernel k = kernel;
    const int gs = lat.state_of(goal);
    if (gs < 0) throw InvalidInput("episodic_kernel: goal cell is not a lattice state");
    for (int row = 0; row < k.p.rows(); ++row) {
        k.p(row, k.terminal()) += k.p(row, gs);
        k.p(row, gs) = 0.0;
    }
    return k;
}

/// Shared feature basis over X. Column 0 is the negated goal distance of the
/// successor-intent cell, column 1 the obstacle clearance of the current cell,
/// column 2 a constant bias. Distances are scaled by the grid diagonal.
struct FeatureMatrix {
    Matrix phi;        // n x d
    int d = 0;
    double sigma_min = 0.0;
    double kappa = 0.0;  // 1 / sigma_min
};

inline FeatureMatrix feature_map(const GridSpec& spec, const StateActionLattice& lat) {
    const double diag =
        std::sqrt(double(spec.width - 1) * (spec.width - 1) + double(spec.height - 1) * (spec.height - 1));
    const double scale = diag > 0.0 ? diag : 1.0;
    auto dist = [](GridCell a, GridCell b) {
        const double dx = a.x - b.x, dy = a.y - b.y;
        return std::sqrt(dx * dx + dy * dy);
    };

    FeatureMatrix f;
    f.d = 3;
    f.phi = Matrix::Zero(lat.n, 3);
    for (int s = 0; s < lat.num_states(); ++s) {
        const GridCell c = lat.cell(s);
        double clearance = 0.0;  // convention: 0 when the spec has no obstacles
        if (!spec.obstacles.empty()) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& o : spec.obstacles) best = std::min(best, dist(c, o));
            clearance = best / scale;
        }
        for (int a = 0; a < kNumActions; ++a) {
            GridCell intent{c.x + action_delta(a).x, c.y + action_delta(a).y};
            if (!spec.in_grid(intent)) intent = c;
            const int row = lat.index_of(s, a);
            f.phi(row, 0) = -dist(intent, spec.goal) / scale;
            f.phi(row, 1) = clearance;
            f.phi(row, 2) = 1.0;
        }
    }
    Eigen::JacobiSVD<Matrix> svd(f.phi);
    f.sigma_min = svd.singularValues().tail(1)(0);
    f.kappa = f.sigma_min > 0.0 ? 1.0 / f.sigma_min : std::numeric_limits<double>::infinity();
    return f;
}

/// Reward vector over the lattice.
struct RewardField {
    Vector r;
};

inline RewardField true_reward(const FeatureMatrix& features, const Vector& theta_star) {
    if (theta_star.size() != features.d)
        throw InvalidInput("true_reward: parameter dimension does not match feature basis");
    return RewardField{features.phi * theta_star};
}

/// Greedy value iteration result; `policy[s]` is the lowest-index argmax action.
struct ValueIterationResult {
    Vector v;                      // per state
    std::vector<int> policy;       // per state
    std::vector<double> residuals; // sup-norm change per sweep
};

inline ValueIterationResult value_iteration(const TransitionKernel& kernel,
                                            const StateActionLattice& lat,
                                            const RewardField& reward, double gamma,
                                            double tol = 1e-9, int max_iters = 0) {
    if (reward.r.size() != lat.n) throw InvalidInput("value_iteration: reward size mismatch");
    if (gamma <= 0.0 || gamma >= 1.0) throw InvalidInput("value_iteration: gamma must lie in (0,1)");
    const int S = lat.num_states();
    if (max_iters <= 0) {
        max_iters = 10 * static_cast<int>(std::ceil(std::log(tol) / std::log(gamma))) + 100;
    }
    ValueIterationResult res;
    res.v = Vector::Zero(S);
    res.policy.assign(S, 0);
    Vector v_next(S);
    for (int it = 0; it < max_iters; ++it) {
        for (int s = 0; s < S; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            int best_a = 0;
            for (int a = 0; a < kNumActions; ++a) {
                const int row = lat.index_of(s, a);
                const double q = reward.r[row] + gamma * kernel.p.row(row).head(S).dot(res.v);
                if (q > best) {
                    best = q;
                    best_a = a;
                }
            }
            v_next[s] = best;
            res.policy[s] = best_a;
        }
        const double resid = (v_next - res.v).cwiseAbs().maxCoeff();
        res.residuals.push_back(resid);
        res.v = v_next;
        if (resid < tol) return res;
    }
    throw ConvergenceError("value_iteration: residual did not reach tolerance; check gamma");
}

/// Deterministic optimal policy for a reward under client dynamics.
inline std::vector<int> expert_policy(const TransitionKernel& kernel, const StateActionLattice& lat,
                                      const RewardField& reward, double gamma, double tol = 1e-9) {
    return value_iteration(kernel, lat, reward, gamma, tol).policy;
}

enum class Termination { goal, obstacle, horizon };

/// Expert trajectory: (state, action) pairs up to the step that ended the
/// episode; the goal/terminal state itself is not recorded.
struct Trajectory {
    std::vector<std::pair<int, int>> steps;
    Termination terminated = Termination::horizon;
};

/// Uniform distribution over valid starts: lattice states that are neither
/// the goal nor deadly for this client.
inline Vector start_distribution(const GridSpec& spec, const StateActionLattice& lat) {
    Vector p0 = Vector::Zero(lat.num_states());
    for (int s = 0; s < lat.num_states(); ++s) {
        const GridCell c = lat.cell(s);
        if (c == spec.goal || spec.is_obstacle(c)) continue;
        p0[s] = 1.0;
    }
    const double total = p0.sum();
    if (total <= 0.0) throw InvalidInput("start_distribution: no valid start states");
    return p0 / total;
}

inline std::vector<Trajectory> sample_demonstrations(const GridSpec& spec,
                                                     const StateActionLattice& lat,
                                                     const TransitionKernel& kernel,
                                                     const std::vector<int>& policy, int count,
                                                     std::uint64_t seed) {
    if (count < 1) throw InvalidInput("sample_demonstrations: count must be >= 1");
    const Vector p0 = start_distribution(spec, lat);
    const int goal_state = lat.state_of(spec.goal);
    Rng rng(seed);
    std::vector<Trajectory> demos;
    demos.reserve(count);
    for (int episode = 0; episode < count; ++episode) {
        Trajectory traj;
        int s = sample_categorical(p0, rng);
        for (int t = 0; t < spec.horizon; ++t) {
            const int a = policy[s];
            traj.steps.emplace_back(s, a);
            const int row = lat.index_of(s, a);
            const int next = sample_categorical(kernel.p.row(row).transpose(), rng);
            if (next == kernel.terminal()) {
                traj.terminated = Termination::obstacle;
                break;
            }
            if (next == goal_state) {
                traj.terminated = Termination::goal;
                break;
            }
            s = next;
        }
        demos.push_back(std::move(traj));
    }
    return demos;
}

}  // namespace fedirl
