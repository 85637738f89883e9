#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedirl/fusion.hpp"
#include "fedirl/gridworld.hpp"
#include "fedirl/maxent_irl.hpp"
#include "fedirl/ot.hpp"
#include "fedirl/parallel.hpp"
#include "fedirl/util.hpp"

namespace fedirl {

enum class WeightScheme { uniform, by_demo_count };

/// Generator settings for one experiment fleet. The probe layout drawn from
/// the master seed defines the shared lattice and the server's feature basis;
/// each client gets an independent uniformly drawn obstacle layout and its
/// own slip probability.
struct FleetConfig {
    int num_clients = 3;
    int width = 5;
    int height = 5;
    int obstacle_count = 3;
    double weak_fraction = 0.0;
    double weak_scale_min = 0.1;
    double weak_scale_max = 0.5;
    WeightScheme weights = WeightScheme::uniform;
    std::uint64_t master_seed = 1;
    int demos_per_client = 50;
    double gamma = 0.95;
    int horizon = 40;
    std::vector<double> theta_star = {1.0, 0.5, 1.0};
    double action_penalty = 1.0;

    void validate() const {
        if (num_clients < 1) throw InvalidInput("FleetConfig: num_clients must be >= 1");
        if (width < 1 || height < 1) throw InvalidInput("FleetConfig: grid must be nonempty");
        if (obstacle_count < 1 || obstacle_count >= width * height - 1)
            throw InvalidInput("FleetConfig: obstacle_count leaves no room for start and goal");
        if (weak_fraction < 0.0 || weak_fraction > 1.0)
            throw InvalidInput("FleetConfig: weak_fraction must lie in [0,1]");
        if (weak_scale_min <= 0.0 || weak_scale_max < weak_scale_min || weak_scale_max > 1.0)
            throw InvalidInput("FleetConfig: weak iteration scale must satisfy 0 < min <= max <= 1");
        if (demos_per_client < 1) throw InvalidInput("FleetConfig: demos_per_client must be >= 1");
        if (gamma <= 0.0 || gamma >= 1.0) throw InvalidInput("FleetConfig: gamma must lie in (0,1)");
        if (horizon < 1) throw InvalidInput("FleetConfig: horizon must be >= 1");
        if (theta_star.size() != 3) throw InvalidInput("FleetConfig: theta_star must have 3 entries");
        if (action_penalty <= 0.0)
            throw InvalidInput("FleetConfig: action_penalty must be positive");
    }
};

/// One client's environment: shared geometry and lattice, its own deadly
/// obstacle layout, slip probability, and the feature map of its own world.
/// Rewards parameterized by theta are evaluated through `features` inside the
/// environment and through the server's probe features on the common support.
struct ClientEnv {
    int index = 0;
    GridSpec spec;
    TransitionKernel kernel;      // evaluation dynamics
    TransitionKernel irl_kernel;  // goal-stopped model used by local IRL
    FeatureMatrix features;       // distances within this client's own layout
    RewardField true_local_reward;  // theta_star through this env's features
    Vector start_dist;
    std::uint64_t demo_seed = 0;
};

struct Fleet {
    FleetConfig config;
    GridSpec probe_spec;  // population layout; defines lattice, features, r_star
    StateActionLattice lattice;
    FeatureMatrix features;
    CostMatrix cost;
    Vector theta_star;
    RewardField r_star;
    std::vector<ClientEnv> clients;
};

namespace detail {

inline GridSpec draw_probe_spec(const FleetConfig& config, std::uint64_t seed) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng rng(derive_seed(seed, "probe-layout", attempt));
        GridSpec spec;
        spec.width = config.width;
        spec.height = config.height;
        spec.goal = {config.width - 1, config.height - 1};
        spec.slip = 0.0;
        spec.gamma = config.gamma;
        spec.horizon = config.horizon;
        while (static_cast<int>(spec.obstacles.size()) < config.obstacle_count) {
            GridCell c{rng.uniform_int(config.width), rng.uniform_int(config.height)};
            if (c == spec.goal || c == GridCell{0, 0}) continue;
            spec.obstacles.insert(c);
        }
        try {
            const StateActionLattice lat = build_lattice(spec);
            if (feature_map(spec, lat).sigma_min < 1e-8) continue;
            return spec;
        } catch (const InvalidInput&) {
            continue;
        }
    }
    throw ConvergenceError("build_fleet: no valid probe layout after 100 attempts");
}

/// Client layouts are uniform samples over lattice cells (never the goal or
/// the corner start), with the same count as the probe layout. The layout is
/// redrawn until the goal stays reachable along safe cells.
inline GridSpec draw_client_spec(const GridSpec& probe, const StateActionLattice& lat,
                                 const FleetConfig& config, std::uint64_t seed) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng rng(derive_seed(seed, "client-layout", attempt));
        GridSpec spec = probe;
        spec.obstacles.clear();
        spec.slip = rng.uniform(0.0, 0.10);
        while (static_cast<int>(spec.obstacles.size()) < config.obstacle_count) {
            const GridCell c = lat.cell(rng.uniform_int(lat.num_states()));
            if (c == spec.goal || c == GridCell{0, 0}) continue;
            spec.obstacles.insert(c);
        }
        // Keep at least one start with a safe path to the goal.
        const auto reach = reachable_from(spec, spec.goal);
        bool ok = false;
        for (int y = 0; y < spec.height && !ok; ++y)
            for (int x = 0; x < spec.width && !ok; ++x) {
                GridCell c{x, y};
                if (c == spec.goal || spec.is_obstacle(c) || lat.state_of(c) < 0) continue;
                if (reach[y * spec.width + x]) ok = true;
            }
        if (ok && feature_map(spec, lat).sigma_min >= 1e-8) return spec;
    }
    throw ConvergenceError("build_fleet: no viable client layout after 100 attempts");
}

}  // namespace detail

/// Fresh environment from the same generator family as the fleet's clients;
/// used for held-out evaluation with seeds disjoint from the fleet's.
inline ClientEnv generate_environment(const Fleet& fleet, std::uint64_t seed, int index) {
    ClientEnv env;
    env.index = index;
    env.spec = detail::draw_client_spec(fleet.probe_spec, fleet.lattice, fleet.config, seed);
    env.kernel = transition_kernel(env.spec, fleet.lattice);
    env.irl_kernel = episodic_kernel(env.kernel, fleet.lattice, env.spec.goal);
    env.features = feature_map(env.spec, fleet.lattice);
    env.true_local_reward = true_reward(env.features, fleet.theta_star);
    env.start_dist = start_distribution(env.spec, fleet.lattice);
    env.demo_seed = derive_seed(seed, "demos");
    return env;
}

inline Fleet build_fleet(const FleetConfig& config) {
    config.validate();
    Fleet fleet;
    fleet.config = config;
    fleet.theta_star = Eigen::Map<const Vector>(config.theta_star.data(), 3);
    fleet.probe_spec = detail::draw_probe_spec(config, config.master_seed);
    fleet.lattice = build_lattice(fleet.probe_spec);
    fleet.features = feature_map(fleet.probe_spec, fleet.lattice);
    if (fleet.features.sigma_min < 1e-8)
        throw ConvergenceError("build_fleet: feature basis is rank deficient");
    fleet.cost = build_cost_matrix(fleet.lattice, config.action_penalty);
    fleet.r_star = true_reward(fleet.features, fleet.theta_star);
    for (int i = 0; i < config.num_clients; ++i) {
        fleet.clients.push_back(
            generate_environment(fleet, derive_seed(config.master_seed, "client", i), i));
    }
    return fleet;
}

/// The only client-to-server payload: parameters, optimizer traces and the
/// demonstration count used for weighting. No trajectories, no dynamics.
struct ParameterUpload {
    Vector theta;
    std::vector<double> objective_trace;
    std::vector<double> grad_norm_trace;
    int demo_count = 0;
};

inline std::string serialize_upload(const IrlResult& result, int demo_count) {
    nlohmann::json j;
    j["theta"] = std::vector<double>(result.theta_hat.begin(), result.theta_hat.end());
    j["objective_trace"] = result.objective_trace;
    j["grad_norm_trace"] = result.grad_norm_trace;
    j["demo_count"] = demo_count;
    return j.dump();
}

inline ParameterUpload parse_upload(const std::string& payload) {
    const nlohmann::json j = nlohmann::json::parse(payload);
    ParameterUpload up;
    const auto theta = j.at("theta").get<std::vector<double>>();
    up.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    up.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    up.grad_norm_trace = j.at("grad_norm_trace").get<std::vector<double>>();
    up.demo_count = j.at("demo_count").get<int>();
    return up;
}

inline Vector weight_scheme(const std::vector<ParameterUpload>& uploads, WeightScheme scheme) {
    const int k = static_cast<int>(uploads.size());
    if (k < 1) throw InvalidInput("weight_scheme: no uploads");
    Vector alpha(k);
    if (scheme == WeightScheme::uniform) {
        alpha.setConstant(1.0 / k);
    } else {
        double total = 0.0;
        for (int i = 0; i < k; ++i) {
            alpha[i] = uploads[i].demo_count;
            total += alpha[i];
        }
        if (total <= 0.0) throw InvalidInput("weight_scheme: demo counts sum to zero");
        alpha /= total;
    }
    return alpha;
}

struct ServerFusion {
    Vector weights;
    FusedReward barycenter;
    Vector theta_mean;
    RewardField reward_mean;
};

/// Server-side aggregation. Consumes serialized uploads and the server's own
/// probe set (lattice features and cost); evaluates each client reward on the
/// shared support and produces both fusions.
inline ServerFusion server_aggregate(const std::vector<std::string>& uploads,
                                     const FeatureMatrix& features, const CostMatrix& cost,
                                     const BarycenterConfig& bary_config, WeightScheme scheme,
                                     double sigma_margin = 1.0,
                                     BarycenterDiagnostics* diagnostics = nullptr) {
    if (uploads.empty()) throw InvalidInput("server_aggregate: no uploads");
    std::vector<ParameterUpload> parsed;
    parsed.reserve(uploads.size());
    for (const auto& payload : uploads) parsed.push_back(parse_upload(payload));

    ServerFusion fusion;
    fusion.weights = weight_scheme(parsed, scheme);
    std::vector<RewardField> rewards;
    std::vector<Vector> thetas;
    for (const auto& up : parsed) {
        rewards.push_back(RewardField{features.phi * up.theta});
        thetas.push_back(up.theta);
    }
    fusion.barycenter = fuse_barycenter(rewards, fusion.weights, cost, features, bary_config,
                                        sigma_margin, diagnostics);
    fusion.theta_mean = fuse_mean(thetas, fusion.weights);
    fusion.reward_mean = RewardField{features.phi * fusion.theta_mean};
    return fusion;
}

/// Harness-side record of one client's round: environment, local result and
/// its oracle error. Only `upload` ever crosses to the server.
struct ClientRecord {
    int index = 0;
    GridSpec spec;
    int demo_count = 0;
    bool is_weak = false;
    int iterations_used = 0;
    IrlResult irl;
    std::string upload;
    double epsilon = 0.0;  // ||r_hat_i - r_star||_1 on the shared lattice
};

struct RoundResult {
    std::vector<ClientRecord> records;
    ServerFusion fusion;
    double weighted_epsilon = 0.0;  // sum_i alpha_i eps_i
};

/// Picks which clients run with a truncated iteration budget.
inline std::vector<int> select_weak_clients(const FleetConfig& config) {
    const int weak_count =
        static_cast<int>(std::llround(config.weak_fraction * config.num_clients));
    std::vector<int> order(config.num_clients);
    for (int i = 0; i < config.num_clients; ++i) order[i] = i;
    Rng rng(derive_seed(config.master_seed, "weak-selection"));
    for (int i = config.num_clients - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(i + 1)]);
    order.resize(weak_count);
    std::sort(order.begin(), order.end());
    return order;
}

/// One federated round: local MaxEnt IRL per client (weak clients truncated),
/// parameter upload, and a single server aggregation step.
inline RoundResult run_round(const Fleet& fleet, const IrlConfig& irl_config,
                             const BarycenterConfig& bary_config, double sigma_margin = 1.0,
                             int threads = 0) {
    const auto weak = select_weak_clients(fleet.config);
    const int k = static_cast<int>(fleet.clients.size());

    RoundResult round;
    round.records.resize(k);
    parallel_for(
        k,
        [&](int i) {
            const ClientEnv& env = fleet.clients[i];
            ClientRecord rec;
            rec.index = i;
            rec.spec = env.spec;
            rec.demo_count = fleet.config.demos_per_client;
            rec.is_weak = std::binary_search(weak.begin(), weak.end(), i);

            IrlConfig local = irl_config;
            if (rec.is_weak) {
                Rng rng(derive_seed(fleet.config.master_seed, "weak-scale", i));
                const double factor =
                    rng.uniform(fleet.config.weak_scale_min, fleet.config.weak_scale_max);
                local.iterations = std::max(1, static_cast<int>(std::llround(
                                                   factor * irl_config.iterations)));
            }
            rec.iterations_used = local.iterations;

            // The expert is optimal for theta_star in this client's own world.
            const auto expert = expert_policy(env.kernel, fleet.lattice, env.true_local_reward,
                                              fleet.config.gamma);
            const auto demos = sample_demonstrations(env.spec, fleet.lattice, env.kernel, expert,
                                                     rec.demo_count, env.demo_seed);
            rec.irl = run_maxent_irl(env.irl_kernel, fleet.lattice, env.features, demos,
                                     env.start_dist, fleet.config.gamma, fleet.config.horizon,
                                     local);
            // Oracle error on the common support: the uploaded parameters
            // evaluated through the probe features against r_star.
            rec.epsilon =
                (fleet.features.phi * rec.irl.theta_hat - fleet.r_star.r).cwiseAbs().sum();
            rec.upload = serialize_upload(rec.irl, rec.demo_count);
            round.records[i] = std::move(rec);
        },
        threads);

    std::vector<std::string> uploads;
    uploads.reserve(k);
    for (const auto& rec : round.records) uploads.push_back(rec.upload);
    round.fusion = server_aggregate(uploads, fleet.features, fleet.cost, bary_config,
                                    fleet.config.weights, sigma_margin);
    for (int i = 0; i < k; ++i)
        round.weighted_epsilon += round.fusion.weights[i] * round.records[i].epsilon;
    return round;
}

}  // namespace fedirl
