#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "fedirl/gridworld.hpp"
#include "fedirl/maxent_irl.hpp"

using namespace fedirl;

namespace {

GridSpec spec_5x5(std::set<GridCell> obstacles = {{1, 1}, {3, 2}, {2, 4}}) {
    GridSpec spec;
    spec.width = 5;
    spec.height = 5;
    spec.goal = {4, 4};
    spec.obstacles = std::move(obstacles);
    spec.gamma = 0.9;
    spec.horizon = 40;
    return spec;
}

}  // namespace

TEST_CASE("lattice counts states times actions") {
    const GridSpec spec = spec_5x5();
    const auto lat = build_lattice(spec);
    REQUIRE(lat.num_states() == 22);
    REQUIRE(lat.n == 88);
}

TEST_CASE("2x1 lattice indexing is a bijection") {
    GridSpec spec;
    spec.width = 2;
    spec.height = 1;
    spec.goal = {1, 0};
    const auto lat = build_lattice(spec);
    REQUIRE(lat.n == 8);
    std::set<int> seen;
    for (int s = 0; s < lat.num_states(); ++s)
        for (int a = 0; a < lat.num_actions(); ++a) {
            const int idx = lat.index_of(s, a);
            REQUIRE(idx >= 0);
            REQUIRE(idx < lat.n);
            REQUIRE(lat.state_action(idx) == std::pair<int, int>{s, a});
            seen.insert(idx);
        }
    REQUIRE(static_cast<int>(seen.size()) == lat.n);
}

TEST_CASE("walled-off goal is rejected") {
    GridSpec spec;
    spec.width = 3;
    spec.height = 3;
    spec.goal = {2, 2};
    spec.obstacles = {{1, 2}, {2, 1}, {1, 1}};
    REQUIRE_THROWS_AS(build_lattice(spec), InvalidInput);
}

TEST_CASE("lattice indexing does not depend on slip or client obstacles") {
    // Two clients share the probe support; their own layouts only enter the
    // kernel, so the lattice must be byte-identical.
    const GridSpec probe = spec_5x5();
    const auto lat_a = build_lattice(probe);
    GridSpec probe_again = probe;
    probe_again.slip = 0.07;
    const auto lat_b = build_lattice(probe_again);
    REQUIRE(lat_a.states.size() == lat_b.states.size());
    for (std::size_t i = 0; i < lat_a.states.size(); ++i)
        REQUIRE(lat_a.states[i] == lat_b.states[i]);
}

TEST_CASE("deterministic kernel has one nonzero per row") {
    GridSpec spec = spec_5x5();
    spec.slip = 0.0;
    const auto lat = build_lattice(spec);
    const auto kernel = transition_kernel(spec, lat);
    for (int row = 0; row < lat.n; ++row) {
        int nonzero = 0;
        for (int col = 0; col <= lat.num_states(); ++col)
            if (kernel.p(row, col) != 0.0) ++nonzero;
        REQUIRE(nonzero == 1);
    }
}

TEST_CASE("slip splits into perpendicular outcomes") {
    GridSpec spec;
    spec.width = 5;
    spec.height = 5;
    spec.goal = {4, 4};
    spec.slip = 0.10;
    const auto lat = build_lattice(spec);
    const auto kernel = transition_kernel(spec, lat);
    // Interior cell (2,2), action up: intended (2,1), perpendicular (1,2), (3,2).
    const int s = lat.state_of({2, 2});
    const int row = lat.index_of(s, 0);
    REQUIRE(kernel.p(row, lat.state_of({2, 1})) == Catch::Approx(0.9));
    REQUIRE(kernel.p(row, lat.state_of({1, 2})) == Catch::Approx(0.05));
    REQUIRE(kernel.p(row, lat.state_of({3, 2})) == Catch::Approx(0.05));
}

TEST_CASE("kernel rows are stochastic within 1e-12") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        GridSpec spec;
        spec.width = 3 + rng.uniform_int(3);
        spec.height = 3 + rng.uniform_int(3);
        spec.goal = {spec.width - 1, spec.height - 1};
        spec.slip = rng.uniform(0.0, 0.10);
        while (static_cast<int>(spec.obstacles.size()) < 2) {
            GridCell c{rng.uniform_int(spec.width), rng.uniform_int(spec.height)};
            if (c == spec.goal || c == GridCell{0, 0}) continue;
            spec.obstacles.insert(c);
        }
        StateActionLattice lat;
        try {
            lat = build_lattice(spec);
        } catch (const InvalidInput&) {
            continue;
        }
        const auto kernel = transition_kernel(spec, lat);
        for (int row = 0; row < lat.n; ++row)
            REQUIRE(kernel.p.row(row).sum() == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("goal-distance feature is zero at the goal") {
    const GridSpec spec = spec_5x5();
    const auto lat = build_lattice(spec);
    const auto features = feature_map(spec, lat);
    const int goal_state = lat.state_of(spec.goal);
    // Actions pointing off-grid from the corner goal clamp back onto it.
    REQUIRE(features.phi(lat.index_of(goal_state, 1), 0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(features.phi(lat.index_of(goal_state, 3), 0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("no obstacles means zero clearance column") {
    GridSpec spec;
    spec.width = 4;
    spec.height = 4;
    spec.goal = {3, 3};
    const auto lat = build_lattice(spec);
    const auto features = feature_map(spec, lat);
    REQUIRE(features.phi.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("corner-to-corner goal distance normalizes to one") {
    GridSpec spec;
    spec.width = 5;
    spec.height = 5;
    spec.goal = {4, 4};
    const auto lat = build_lattice(spec);
    const auto features = feature_map(spec, lat);
    // From (0,0), action up is clamped back to (0,0): raw distance sqrt(32).
    const int row = lat.index_of(lat.state_of({0, 0}), 0);
    REQUIRE(features.phi(row, 0) == Catch::Approx(-1.0));
}

TEST_CASE("feature matrix has full column rank on experiment grids") {
    const GridSpec spec = spec_5x5();
    const auto lat = build_lattice(spec);
    const auto features = feature_map(spec, lat);
    REQUIRE(features.d == 3);
    REQUIRE(features.sigma_min > 1e-8);
    REQUIRE(features.kappa == Catch::Approx(1.0 / features.sigma_min));
}

TEST_CASE("true reward is the feature image of theta") {
    const GridSpec spec = spec_5x5();
    const auto lat = build_lattice(spec);
    const auto features = feature_map(spec, lat);

    SECTION("zero parameters give zero reward") {
        const auto r = true_reward(features, Vector::Zero(3));
        REQUIRE(r.r.cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("bias-only parameters give a constant field") {
        Vector theta(3);
        theta << 0.0, 0.0, 2.5;
        const auto r = true_reward(features, theta);
        REQUIRE(r.r.minCoeff() == Catch::Approx(2.5));
        REQUIRE(r.r.maxCoeff() == Catch::Approx(2.5));
    }
    SECTION("entrywise matrix multiply oracle") {
        Vector theta(3);
        theta << 1.0, 0.5, 0.0;
        const auto r = true_reward(features, theta);
        for (int i = 0; i < lat.n; ++i)
            REQUIRE(r.r[i] == Catch::Approx(features.phi.row(i).dot(theta)).margin(1e-14));
    }
    SECTION("dimension mismatch is rejected") {
        REQUIRE_THROWS_AS(true_reward(features, Vector::Zero(4)), InvalidInput);
    }
}

TEST_CASE("expert policy heads for the goal in a 1x2 world") {
    GridSpec spec;
    spec.width = 2;
    spec.height = 1;
    spec.goal = {1, 0};
    spec.gamma = 0.9;
    const auto lat = build_lattice(spec);
    const auto kernel = transition_kernel(spec, lat);
    Vector theta(3);
    theta << 1.0, 0.0, 0.0;
    const auto reward = true_reward(feature_map(spec, lat), theta);
    const auto policy = expert_policy(kernel, lat, reward, spec.gamma);
    REQUIRE(policy[lat.state_of({0, 0})] == static_cast<int>(Action::right));
}

TEST_CASE("constant reward resolves ties to the lowest action index") {
    GridSpec spec;
    spec.width = 4;
    spec.height = 4;
    spec.goal = {3, 3};
    const auto lat = build_lattice(spec);
    const auto kernel = transition_kernel(spec, lat);
    const RewardField constant{Vector::Constant(lat.n, 1.0)};
    const auto policy = expert_policy(kernel, lat, constant, 0.9);
    for (int s = 0; s < lat.num_states(); ++s) REQUIRE(policy[s] == 0);
}

TEST_CASE("expert reaches the goal from every start on an open grid") {
    GridSpec spec;
    spec.width = 5;
    spec.height = 5;
    spec.goal = {4, 4};
    spec.slip = 0.0;
    spec.gamma = 0.95;
    spec.horizon = 40;
    const auto lat = build_lattice(spec);
    const auto kernel = transition_kernel(spec, lat);
    Vector theta(3);
    theta << 1.0, 0.5, 1.0;
    const auto reward = true_reward(feature_map(spec, lat), theta);
    const auto policy = expert_policy(kernel, lat, reward, spec.gamma);

    // Exhaustive deterministic rollout from every start state.
    for (int s0 = 0; s0 < lat.num_states(); ++s0) {
        if (lat.cell(s0) == spec.goal) continue;
        int s = s0;
        bool reached = false;
        for (int t = 0; t < spec.horizon; ++t) {
            const int row = lat.index_of(s, policy[s]);
            int next = -1;
            kernel.p.row(row).maxCoeff(&next);
            if (next == lat.num_states()) break;
            s = next;
            if (lat.cell(s) == spec.goal) {
                reached = true;
                break;
            }
        }
        REQUIRE(reached);
    }
}

TEST_CASE("value iteration residuals decrease and contract at rate gamma") {
    const GridSpec spec = spec_5x5();
    const auto lat = build_lattice(spec);
    const auto kernel = transition_kernel(spec, lat);
    Vector theta(3);
    theta << 1.0, 0.5, 1.0;
    const auto reward = true_reward(feature_map(spec, lat), theta);
    const auto vi = value_iteration(kernel, lat, reward, spec.gamma);
    for (std::size_t k = 1; k + 1 < vi.residuals.size(); ++k) {
        REQUIRE(vi.residuals[k + 1] <= vi.residuals[k] + 1e-12);
        REQUIRE(vi.residuals[k + 1] <= spec.gamma * vi.residuals[k] + 1e-12);
    }
}

TEST_CASE("demonstrations") {
    GridSpec spec = spec_5x5();
    spec.slip = 0.0;
    const auto lat = build_lattice(spec);
    const auto kernel = transition_kernel(spec, lat);
    const auto features = feature_map(spec, lat);
    Vector theta(3);
    theta << 1.0, 0.5, 1.0;
    const auto reward = true_reward(features, theta);
    const auto policy = expert_policy(kernel, lat, reward, spec.gamma);

    SECTION("deterministic world varies only through the start state") {
        const auto demos = sample_demonstrations(spec, lat, kernel, policy, 60, 7);
        std::map<int, std::vector<std::pair<int, int>>> by_start;
        for (const auto& d : demos) {
            REQUIRE(!d.steps.empty());
            REQUIRE(d.terminated == Termination::goal);
            const auto [it, inserted] = by_start.try_emplace(d.steps.front().first, d.steps);
            if (!inserted) REQUIRE(it->second == d.steps);
        }
    }

    SECTION("fixed seed reproduces trajectories bitwise") {
        const auto a = sample_demonstrations(spec, lat, kernel, policy, 25, 99);
        const auto b = sample_demonstrations(spec, lat, kernel, policy, 25, 99);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].terminated == b[i].terminated);
            REQUIRE(a[i].steps == b[i].steps);
        }
    }

    SECTION("empirical feature expectation matches the exact occupancy solve") {
        // Oracle: discounted feature expectation of the expert under the
        // goal-stopped chain, computed by an exact linear solve conditioned on
        // the realized start frequencies (start sampling is covered above).
        spec.slip = 0.02;
        spec.gamma = 0.5;
        const auto noisy_kernel = transition_kernel(spec, lat);
        const auto stopped = episodic_kernel(noisy_kernel, lat, spec.goal);
        const auto noisy_policy = expert_policy(noisy_kernel, lat, reward, spec.gamma);
        const auto demos = sample_demonstrations(spec, lat, noisy_kernel, noisy_policy, 50, 2024);

        SoftPolicy as_stochastic;
        as_stochastic.prob = Matrix::Zero(lat.num_states(), lat.num_actions());
        for (int s = 0; s < lat.num_states(); ++s) as_stochastic.prob(s, noisy_policy[s]) = 1.0;
        Vector starts = Vector::Zero(lat.num_states());
        for (const auto& d : demos) starts[d.steps.front().first] += 1.0;
        starts /= starts.sum();
        const auto exact = policy_feature_expectation(stopped, lat, as_stochastic, features,
                                                      spec.gamma, starts, -1);
        const auto empirical = empirical_feature_expectation(demos, features, lat, spec.gamma);
        REQUIRE((empirical.mu - exact.mu).cwiseAbs().maxCoeff() < 0.05);
    }
}
