#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "isac/channel.hpp"
#include "isac/complex_matrix.hpp"

namespace isac {

struct CellConfig {
    std::size_t n_t = 8;
    std::size_t n_r = 8;
    std::size_t users = 1;
    double rho = 0.5;

    friend bool operator==(const CellConfig&, const CellConfig&) = default;
};

/// Static description of a multi-cell ISAC deployment.
struct Scenario {
    std::vector<CellConfig> cells;
    double sigma_c_sq = 0.01;
    double sigma_s_sq = 0.01;
    double p_t = 1.0;
    double alpha_s = 1.0;
    double rician_k = 3.0;
    /// Mean power of inter-cell channels relative to direct ones.
    double cross_power_ratio = 0.1;
    double element_spacing = 0.5;

    std::size_t num_cells() const { return cells.size(); }
    std::size_t max_users() const;
    SteeringConfig tx_steering(std::size_t m) const { return {cells.at(m).n_t, element_spacing}; }
    SteeringConfig rx_steering(std::size_t m) const { return {cells.at(m).n_r, element_spacing}; }

    /// Throws ConfigError on violated invariants.
    void validate() const;

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// All channels observed by one BS in one snapshot.
///
/// comm_cross[i][k] is h_{i,m,k} (BS i to user k of this cell, N_T(i) x 1);
/// radar_cross[n] is G_{n,m} (N_R(m) x N_T(n)). Entries at index m are empty.
struct ChannelSample {
    std::vector<ComplexMatrix> comm_direct;
    std::vector<std::vector<ComplexMatrix>> comm_cross;
    double target_theta = 0.0;
    cplx target_beta{0.0, 0.0};
    std::vector<ComplexMatrix> radar_cross;

    friend bool operator==(const ChannelSample&, const ChannelSample&) = default;
};

/// W_m (N_T x K_m) for every BS.
using BeamformerSet = std::vector<ComplexMatrix>;

/// One joint snapshot: snapshot[m] is BS m's ChannelSample.
using Snapshot = std::span<const ChannelSample>;

void check_sample(const Scenario& scn, const ChannelSample& s, std::size_t m);

double comm_sinr(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m,
                 std::size_t k);
double comm_sum_rate(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m);

/// v = a(theta) / ||a(theta)||.
ComplexMatrix mrc_combiner(double theta, const SteeringConfig& cfg);

double radar_sinr(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m);
double radar_rate(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m);

double bs_utility(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m);

struct SystemUtility {
    double total = 0.0;
    std::vector<double> per_bs;
};
SystemUtility system_utility(const Scenario& scn, Snapshot samples, const BeamformerSet& w);

// ---------------------------------------------------------------------------
// Single-BS view used by training: peers' beamformers are frozen, so their
// contribution collapses into fixed interference powers.

/// Interference seen by BS m from every other BS, plus noise.
struct Interference {
    std::vector<double> comm;  ///< per user k: sum_{i!=m} sum_j |h_{i,m,k}^H w_{i,j}|^2 + sigma_c^2
    double radar = 0.0;        ///< sum_{n!=m} sum_j |v^H G_{n,m} w_{n,j}|^2 + sigma_s^2
};

/// peers[m] is ignored and may be empty.
Interference external_interference(const Scenario& scn, const ChannelSample& sample,
                                   const BeamformerSet& peers, std::size_t m);

struct BsEvaluation {
    double comm_rate = 0.0;
    double radar_rate = 0.0;
    double utility = 0.0;
};

/// Precomputed quantities of one sample that do not depend on W_m.
struct BsChannelView {
    std::span<const ComplexMatrix> users;  ///< h_{m,m,k}
    ComplexMatrix radar_dir;               ///< u = G_m^H v, so v^H G_m w = u^H w
    double array_gain = 1.0;               ///< N_R
};

BsChannelView make_channel_view(const Scenario& scn, const ChannelSample& sample, std::size_t m);

BsEvaluation evaluate_bs(const Scenario& scn, const BsChannelView& view, const Interference& ext,
                         const ComplexMatrix& w_m, double rho);

/// Utility of BS m and its gradient with respect to W_m.
///
/// The gradient is returned as dU/dRe(w) + j dU/dIm(w) entrywise, the
/// real-pair convention used by the network's backward pass.
BsEvaluation utility_and_grad(const Scenario& scn, const BsChannelView& view,
                              const Interference& ext, const ComplexMatrix& w_m, double rho,
                              ComplexMatrix& grad_w);

}  // namespace isac
