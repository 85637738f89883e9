#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "fedirl/gridworld.hpp"
#include "fedirl/ot.hpp"
#include "fedirl/util.hpp"

namespace fedirl {

/// Shift-and-normalize T_sigma(r) = (r + sigma 1) / Z with Z = sum(r) + n sigma.
struct ShiftNormalizeResult {
    SimplexMeasure measure;
    double z = 0.0;
};

inline ShiftNormalizeResult shift_normalize(const RewardField& reward, double sigma) {
    const int n = static_cast<int>(reward.r.size());
    if (n == 0) throw InvalidInput("shift_normalize: empty reward");
    int worst_index = 0;
    reward.r.minCoeff(&worst_index);
    const double shifted_min = reward.r[worst_index] + sigma;
    if (shifted_min <= 0.0)
        throw InvalidInput("shift_normalize: entry " + std::to_string(worst_index) +
                           " is nonpositive after the shift; requires sigma > " +
                           std::to_string(-reward.r[worst_index]));
    const double z = reward.r.sum() + n * sigma;
    return {SimplexMeasure{(reward.r.array() + sigma) / z}, z};
}

/// Smallest shift that makes every entry of every input strictly positive,
/// plus a safety margin keeping Z_min away from zero.
inline double choose_sigma(const std::vector<RewardField>& rewards, double margin = 1.0) {
    if (rewards.empty()) throw InvalidInput("choose_sigma: no rewards");
    double global_min = std::numeric_limits<double>::infinity();
    for (const auto& r : rewards) global_min = std::min(global_min, r.r.minCoeff());
    return std::max(0.0, -global_min) + margin;
}

/// Inverse of shift_normalize for a chosen scale Z: r = Z p - sigma 1.
inline RewardField back_map(const SimplexMeasure& p_bar, double z_back, double sigma) {
    if (z_back <= 0.0) throw InvalidInput("back_map: Z must be positive");
    return RewardField{z_back * p_bar.p.array() - sigma};
}

/// Least-squares parameter recovery via column-pivoted QR; the residual is
/// orthogonal to the span of the feature basis.
inline Vector recover_parameters(const RewardField& r_bar, const FeatureMatrix& features) {
    if (r_bar.r.size() != features.phi.rows())
        throw InvalidInput("recover_parameters: reward length does not match feature rows");
    if (features.sigma_min < 1e-8)
        throw InvalidInput("recover_parameters: feature basis is rank deficient");
    return features.phi.colPivHouseholderQr().solve(r_bar.r);
}

/// Weighted parameter averaging (the FedAvg baseline).
inline Vector fuse_mean(const std::vector<Vector>& thetas, const Vector& weights) {
    if (thetas.empty()) throw InvalidInput("fuse_mean: no parameters");
    if (static_cast<int>(thetas.size()) != weights.size())
        throw InvalidInput("fuse_mean: weight count mismatch");
    Vector out = Vector::Zero(thetas.front().size());
    for (std::size_t i = 0; i < thetas.size(); ++i) {
        if (thetas[i].size() != out.size()) throw InvalidInput("fuse_mean: dimension mismatch");
        out += weights[i] * thetas[i];
    }
    return out;
}

/// Server-side fusion product: the barycentric measure, its back-mapped
/// reward field and the recovered parameters.
struct FusedReward {
    SimplexMeasure barycenter;
    double sigma = 0.0;
    double z_back = 0.0;
    std::vector<double> z_values;  // per-input normalizers Z(r_i)
    RewardField reward;
    Vector theta;
};

/// Full pipeline of the barycentric aggregation: choose a shift, normalize
/// each client reward onto the simplex, compute the entropic barycenter, map
/// back with the weighted mean of the client normalizers, and recover the
/// parameters in the shared basis.
inline FusedReward fuse_barycenter(const std::vector<RewardField>& rewards, const Vector& weights,
                                   const CostMatrix& cost, const FeatureMatrix& features,
                                   const BarycenterConfig& bary_config, double sigma_margin = 1.0,
                                   BarycenterDiagnostics* diagnostics = nullptr) {
    if (rewards.empty()) throw InvalidInput("fuse_barycenter: no rewards");
    if (static_cast<int>(rewards.size()) != weights.size())
        throw InvalidInput("fuse_barycenter: weight count mismatch");

    FusedReward fused;
    fused.sigma = choose_sigma(rewards, sigma_margin);
    std::vector<SimplexMeasure> measures;
    measures.reserve(rewards.size());
    double z_mean = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        auto sn = shift_normalize(rewards[i], fused.sigma);
        fused.z_values.push_back(sn.z);
        z_mean += weights[i] * sn.z;
        measures.push_back(std::move(sn.measure));
    }

    BarycenterConfig config = bary_config;
    config.weights = weights;
    fused.barycenter = entropic_barycenter(measures, cost, config, diagnostics);
    fused.z_back = z_mean;
    fused.reward = back_map(fused.barycenter, fused.z_back, fused.sigma);
    fused.theta = recover_parameters(fused.reward, features);
    return fused;
}

}  // namespace fedirl
