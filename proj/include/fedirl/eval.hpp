#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedirl/federation.hpp"
#include "fedirl/gridworld.hpp"
#include "fedirl/parallel.hpp"
#include "fedirl/util.hpp"

namespace fedirl {

/// Greedy policy for a reward under the evaluation environment's dynamics.
/// The reward is range-normalized to [0,1] first, which makes the induced
/// policy exactly invariant under positive affine reward transforms and keeps
/// episode-ending collisions from looking attractive for all-negative fields.
inline std::vector<int> induce_policy(const TransitionKernel& kernel,
                                      const StateActionLattice& lat, const RewardField& reward,
                                      double gamma) {
    const double lo = reward.r.minCoeff();
    const double hi = reward.r.maxCoeff();
    RewardField shaped{Vector::Zero(reward.r.size())};
    if (hi > lo) shaped.r = (reward.r.array() - lo) / (hi - lo);
    return expert_policy(kernel, lat, shaped, gamma);
}

/// Percentage of rollouts that reach the goal within the horizon; obstacle
/// collisions and timeouts count as failures.
inline double success_rate(const GridSpec& spec, const StateActionLattice& lat,
                           const TransitionKernel& kernel, const std::vector<int>& policy,
                           int episodes, std::uint64_t seed) {
    if (episodes < 1) throw InvalidInput("success_rate: episodes must be >= 1");
    const auto rollouts = sample_demonstrations(spec, lat, kernel, policy, episodes, seed);
    int successes = 0;
    for (const auto& traj : rollouts)
        if (traj.terminated == Termination::goal) ++successes;
    return 100.0 * successes / episodes;
}

/// One measured success rate: a (condition, split) cell of the report.
struct ConditionSample {
    std::string condition;  // local | mean | barycenter
    std::string split;      // in_distribution | held_out
    int env_index = 0;
    std::uint64_t seed = 0;
    double rate = 0.0;
};

struct EvalRow {
    std::string condition;
    std::string split;
    double mean = 0.0;
    double stddev = 0.0;
    int n_samples = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<ConditionSample> samples;
};

/// Evaluates one replication. A reward parameter vector is deployed on an
/// environment by evaluating it through that environment's own feature map:
/// local parameters run on their own clients only, fused parameters run on
/// every client and on freshly generated held-out environments.
inline std::vector<ConditionSample> evaluate_conditions(
    const Fleet& fleet, const std::vector<Vector>& local_thetas, const Vector& theta_barycenter,
    const Vector& theta_mean, int heldout_count, int episodes, std::uint64_t seed,
    int threads = 0) {
    if (local_thetas.size() != fleet.clients.size())
        throw InvalidInput("evaluate_conditions: one local parameter vector per client required");
    const double gamma = fleet.config.gamma;

    std::vector<ClientEnv> heldout;
    for (int j = 0; j < heldout_count; ++j)
        heldout.push_back(
            generate_environment(fleet, derive_seed(seed, "heldout-env", j), j));

    struct Task {
        std::string condition;
        std::string split;
        const ClientEnv* env;
        const Vector* theta;
        int env_index;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < fleet.clients.size(); ++i) {
        tasks.push_back({"local", "in_distribution", &fleet.clients[i], &local_thetas[i],
                         static_cast<int>(i)});
        tasks.push_back({"mean", "in_distribution", &fleet.clients[i], &theta_mean,
                         static_cast<int>(i)});
        tasks.push_back({"barycenter", "in_distribution", &fleet.clients[i], &theta_barycenter,
                         static_cast<int>(i)});
    }
    for (int j = 0; j < heldout_count; ++j) {
        tasks.push_back({"mean", "held_out", &heldout[j], &theta_mean, j});
        tasks.push_back({"barycenter", "held_out", &heldout[j], &theta_barycenter, j});
    }

    std::vector<ConditionSample> samples(tasks.size());
    parallel_for(
        static_cast<int>(tasks.size()),
        [&](int t) {
            const Task& task = tasks[t];
            const RewardField reward{task.env->features.phi * *task.theta};
            const auto policy = induce_policy(task.env->kernel, fleet.lattice, reward, gamma);
            // Common random numbers: the rollout stream depends only on the
            // environment, so conditions differ exactly when policies differ.
            const std::uint64_t rollout_seed =
                derive_seed(seed, "rollouts", fnv1a(task.split), task.env_index);
            ConditionSample s;
            s.condition = task.condition;
            s.split = task.split;
            s.env_index = task.env_index;
            s.seed = seed;
            s.rate = success_rate(task.env->spec, fleet.lattice, task.env->kernel, policy,
                                  episodes, rollout_seed);
            samples[t] = std::move(s);
        },
        threads);
    return samples;
}

/// Pools samples (across environments and replications) into mean +- sample
/// standard deviation per (condition, split).
inline EvalReport aggregate_samples(std::vector<ConditionSample> samples) {
    if (samples.empty()) throw InvalidInput("aggregate_samples: no samples");
    EvalReport report;
    report.samples = std::move(samples);
    std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
    for (const auto& s : report.samples) cells[{s.condition, s.split}].push_back(s.rate);

    const std::vector<std::pair<std::string, std::string>> order = {
        {"local", "in_distribution"}, {"mean", "in_distribution"},
        {"barycenter", "in_distribution"}, {"mean", "held_out"}, {"barycenter", "held_out"}};
    for (const auto& key : order) {
        const auto it = cells.find(key);
        if (it == cells.end()) continue;
        const auto& xs = it->second;
        EvalRow row;
        row.condition = key.first;
        row.split = key.second;
        row.n_samples = static_cast<int>(xs.size());
        for (double x : xs) row.mean += x;
        row.mean /= row.n_samples;
        if (row.n_samples > 1) {
            double ss = 0.0;
            for (double x : xs) ss += (x - row.mean) * (x - row.mean);
            row.stddev = std::sqrt(ss / (row.n_samples - 1));
        }
        report.rows.push_back(row);
    }
    return report;
}

inline double report_mean(const EvalReport& report, const std::string& condition,
                          const std::string& split) {
    for (const auto& row : report.rows)
        if (row.condition == condition && row.split == split) return row.mean;
    throw InvalidInput("report_mean: no such condition/split row");
}

/// Writes report.csv (fixed column order) and report.json (full detail).
inline void emit_report(const EvalReport& report, const std::filesystem::path& directory) {
    if (report.rows.empty()) throw InvalidInput("emit_report: report has no rows");
    std::filesystem::create_directories(directory);

    const auto csv_path = directory / "report.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("emit_report: cannot write " + csv_path.string());
    csv << "condition,split,mean,std,n_seeds\n";
    for (const auto& row : report.rows)
        csv << row.condition << ',' << row.split << ',' << row.mean << ',' << row.stddev << ','
            << row.n_samples << '\n';

    nlohmann::json j;
    for (const auto& row : report.rows)
        j["rows"].push_back({{"condition", row.condition},
                             {"split", row.split},
                             {"mean", row.mean},
                             {"std", row.stddev},
                             {"n_seeds", row.n_samples}});
    for (const auto& s : report.samples)
        j["samples"].push_back({{"condition", s.condition},
                                {"split", s.split},
                                {"env_index", s.env_index},
                                {"seed", s.seed},
                                {"rate", s.rate}});
    const auto json_path = directory / "report.json";
    std::ofstream js(json_path);
    if (!js) throw std::runtime_error("emit_report: cannot write " + json_path.string());
    js << j.dump(2) << '\n';
}

inline EvalReport parse_report(const nlohmann::json& j) {
    EvalReport report;
    for (const auto& row : j.at("rows"))
        report.rows.push_back({row.at("condition").get<std::string>(),
                               row.at("split").get<std::string>(), row.at("mean").get<double>(),
                               row.at("std").get<double>(), row.at("n_seeds").get<int>()});
    if (j.contains("samples"))
        for (const auto& s : j.at("samples"))
            report.samples.push_back({s.at("condition").get<std::string>(),
                                      s.at("split").get<std::string>(),
                                      s.at("env_index").get<int>(),
                                      s.at("seed").get<std::uint64_t>(),
                                      s.at("rate").get<double>()});
    return report;
}

}  // namespace fedirl
