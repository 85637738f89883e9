#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedirl/bounds.hpp"
#include "fedirl/federation.hpp"
#include "fedirl/fusion.hpp"
#include "fedirl/gridworld.hpp"
#include "fedirl/maxent_irl.hpp"
#include "fedirl/ot.hpp"

namespace fedirl {

using nlohmann::json;

inline std::vector<double> to_std(const Vector& v) {
    return std::vector<double>(v.begin(), v.end());
}

inline Vector to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// --- grid specs -------------------------------------------------------------

inline void to_json(json& j, const GridSpec& spec) {
    json obstacles = json::array();
    for (const auto& o : spec.obstacles) obstacles.push_back({o.x, o.y});
    j = json{{"width", spec.width},   {"height", spec.height},
             {"goal", {spec.goal.x, spec.goal.y}}, {"obstacles", obstacles},
             {"slip", spec.slip},     {"gamma", spec.gamma},
             {"horizon", spec.horizon}};
}

inline void from_json(const json& j, GridSpec& spec) {
    spec.width = j.at("width").get<int>();
    spec.height = j.at("height").get<int>();
    spec.goal = {j.at("goal").at(0).get<int>(), j.at("goal").at(1).get<int>()};
    spec.obstacles.clear();
    for (const auto& o : j.at("obstacles"))
        spec.obstacles.insert({o.at(0).get<int>(), o.at(1).get<int>()});
    spec.slip = j.at("slip").get<double>();
    spec.gamma = j.at("gamma").get<double>();
    spec.horizon = j.at("horizon").get<int>();
    spec.validate();
}

// --- solver configs ----------------------------------------------------------

inline void to_json(json& j, const IrlConfig& c) {
    j = json{{"learning_rate", c.learning_rate},
             {"l2_lambda", c.l2_lambda},
             {"iterations", c.iterations},
             {"soft_vi_tolerance", c.soft_vi_tolerance},
             {"seed", c.seed}};
}

inline void from_json(const json& j, IrlConfig& c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.l2_lambda = j.value("l2_lambda", c.l2_lambda);
    c.iterations = j.value("iterations", c.iterations);
    c.soft_vi_tolerance = j.value("soft_vi_tolerance", c.soft_vi_tolerance);
    c.seed = j.value("seed", c.seed);
    c.validate();
}

inline void to_json(json& j, const BarycenterConfig& c) {
    j = json{{"epsilon", c.epsilon},
             {"sinkhorn_iters", c.sinkhorn_iters},
             {"outer_iters", c.outer_iters},
             {"momentum", c.momentum}};
    if (c.weights.size()) j["weights"] = to_std(c.weights);
}

inline void from_json(const json& j, BarycenterConfig& c) {
    c.epsilon = j.value("epsilon", c.epsilon);
    c.sinkhorn_iters = j.value("sinkhorn_iters", c.sinkhorn_iters);
    c.outer_iters = j.value("outer_iters", c.outer_iters);
    c.momentum = j.value("momentum", c.momentum);
    if (j.contains("weights")) c.weights = to_eigen(j.at("weights").get<std::vector<double>>());
}

inline void to_json(json& j, const FleetConfig& c) {
    j = json{{"num_clients", c.num_clients},
             {"width", c.width},
             {"height", c.height},
             {"obstacle_count", c.obstacle_count},
             {"weak_fraction", c.weak_fraction},
             {"weak_scale_min", c.weak_scale_min},
             {"weak_scale_max", c.weak_scale_max},
             {"weights", c.weights == WeightScheme::uniform ? "uniform" : "by_demo_count"},
             {"master_seed", c.master_seed},
             {"demos_per_client", c.demos_per_client},
             {"gamma", c.gamma},
             {"horizon", c.horizon},
             {"theta_star", c.theta_star},
             {"action_penalty", c.action_penalty}};
}

inline void from_json(const json& j, FleetConfig& c) {
    c.num_clients = j.value("num_clients", c.num_clients);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.obstacle_count = j.value("obstacle_count", c.obstacle_count);
    c.weak_fraction = j.value("weak_fraction", c.weak_fraction);
    c.weak_scale_min = j.value("weak_scale_min", c.weak_scale_min);
    c.weak_scale_max = j.value("weak_scale_max", c.weak_scale_max);
    if (j.contains("weights")) {
        const auto scheme = j.at("weights").get<std::string>();
        if (scheme == "uniform")
            c.weights = WeightScheme::uniform;
        else if (scheme == "by_demo_count")
            c.weights = WeightScheme::by_demo_count;
        else
            throw InvalidInput("FleetConfig: unknown weight scheme '" + scheme + "'");
    }
    c.master_seed = j.value("master_seed", c.master_seed);
    c.demos_per_client = j.value("demos_per_client", c.demos_per_client);
    c.gamma = j.value("gamma", c.gamma);
    c.horizon = j.value("horizon", c.horizon);
    c.theta_star = j.value("theta_star", c.theta_star);
    c.action_penalty = j.value("action_penalty", c.action_penalty);
    c.validate();
}

/// Everything a manifest needs to drive an experiment end to end.
struct ExperimentConfig {
    FleetConfig fleet;
    IrlConfig irl;
    BarycenterConfig barycenter;
    double sigma_margin = 1.0;
    int eval_episodes = 200;
    int heldout_count = 5;
    std::vector<std::uint64_t> seeds = {1};
    std::vector<double> ablation_fractions = {0.0, 0.25, 0.5};

    void validate() const {
        fleet.validate();
        irl.validate();
        if (sigma_margin <= 0.0) throw InvalidInput("ExperimentConfig: sigma_margin must be > 0");
        if (eval_episodes < 1) throw InvalidInput("ExperimentConfig: eval_episodes must be >= 1");
        if (heldout_count < 0) throw InvalidInput("ExperimentConfig: heldout_count must be >= 0");
        if (seeds.empty()) throw InvalidInput("ExperimentConfig: seeds must be nonempty");
    }
};

inline void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"fleet", c.fleet},
             {"irl", c.irl},
             {"barycenter", c.barycenter},
             {"sigma_margin", c.sigma_margin},
             {"eval", json{{"episodes", c.eval_episodes}, {"heldout_count", c.heldout_count}}},
             {"seeds", c.seeds},
             {"ablation_fractions", c.ablation_fractions}};
}

inline void from_json(const json& j, ExperimentConfig& c) {
    if (j.contains("fleet")) c.fleet = j.at("fleet").get<FleetConfig>();
    if (j.contains("irl")) c.irl = j.at("irl").get<IrlConfig>();
    if (j.contains("barycenter")) c.barycenter = j.at("barycenter").get<BarycenterConfig>();
    c.sigma_margin = j.value("sigma_margin", c.sigma_margin);
    if (j.contains("eval")) {
        c.eval_episodes = j.at("eval").value("episodes", c.eval_episodes);
        c.heldout_count = j.at("eval").value("heldout_count", c.heldout_count);
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("ablation_fractions"))
        c.ablation_fractions = j.at("ablation_fractions").get<std::vector<double>>();
    c.validate();
}

// --- results -----------------------------------------------------------------

inline void to_json(json& j, const FusedReward& f) {
    j = json{{"p_bar", to_std(f.barycenter.p)},
             {"sigma", f.sigma},
             {"z_back", f.z_back},
             {"z_values", f.z_values},
             {"r_bar", to_std(f.reward.r)},
             {"theta", to_std(f.theta)}};
}

inline void from_json(const json& j, FusedReward& f) {
    f.barycenter.p = to_eigen(j.at("p_bar").get<std::vector<double>>());
    f.sigma = j.at("sigma").get<double>();
    f.z_back = j.at("z_back").get<double>();
    f.z_values = j.at("z_values").get<std::vector<double>>();
    f.reward.r = to_eigen(j.at("r_bar").get<std::vector<double>>());
    f.theta = to_eigen(j.at("theta").get<std::vector<double>>());
}

inline void to_json(json& j, const ClientRecord& rec) {
    j = json{{"index", rec.index},
             {"spec", rec.spec},
             {"demo_count", rec.demo_count},
             {"is_weak", rec.is_weak},
             {"iterations_used", rec.iterations_used},
             {"epsilon", rec.epsilon},
             {"upload", json::parse(rec.upload)}};
}

inline void to_json(json& j, const TheoremTrialRecord& rec) {
    j = json{{"trial", rec.trial},       {"lhs", rec.lhs},
             {"rhs", rec.rhs},           {"slack", rec.slack},
             {"gaps", rec.gaps},         {"gap_rhs", rec.gap_rhs},
             {"sum_alpha_eps", rec.sum_alpha_eps},
             {"t1_pass", rec.t1_pass},   {"t2_pass", rec.t2_pass}};
}

inline void to_json(json& j, const CampaignResult& res) {
    j = json{{"theorem1", json{{"pass", res.t1_pass}, {"total", res.t1_total}}},
             {"theorem2", json{{"pass", res.t2_pass}, {"total", res.t2_total}}},
             {"lipschitz", json{{"pass", res.lipschitz_pass}, {"total", res.lipschitz_total}}},
             {"tv_w2", json{{"pass", res.tv_pass}, {"total", res.tv_total}}},
             {"contraction",
              json{{"pass", res.contraction_pass}, {"total", res.contraction_total}}},
             {"l2_delta", json{{"pass", res.l2delta_pass}, {"total", res.l2delta_total}}},
             {"trials", res.trials}};
}

}  // namespace fedirl
