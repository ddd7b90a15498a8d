#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "isac/datagen.hpp"
#include "isac/metrics.hpp"
#include "isac/nn.hpp"

namespace isac {

struct EmConfig {
    double kappa = 1.0;
    std::size_t eval_batch = 64;
    /// Upper bound on the held-out samples used to score global vs local models.
    std::size_t eval_subset = 1024;

    void validate() const;
};

/// Posterior that the global model explains the data better than the local one:
/// exp(-k l_g) / (exp(-k l_g) + exp(-k l_l)), evaluated as sigmoid(k (l_l - l_g)).
double e_step(double loss_global, double loss_local, const EmConfig& em);

/// Mean of the per-batch posteriors.
double m_step(std::span<const double> lambdas);

/// (1 - pi) local + pi global.
ModelParams mix_models(const ModelParams& local, const ModelParams& global, double pi);

/// Weighted mean; weights are normalized internally.
ModelParams fedavg_aggregate(std::span<const ModelParams> clients, std::span<const double> weights);

// ---------------------------------------------------------------------------

/// Everything about one BS's dataset that stays fixed for a whole run.
struct LocalData {
    std::size_t bs = 0;
    std::span<const ChannelSample> samples;
    std::size_t n_train = 0;
    FeatureMatrix features;
    std::vector<BsChannelView> views;

    std::size_t size() const { return samples.size(); }
    std::size_t n_eval() const { return samples.size() - n_train; }
};

LocalData prepare_local_data(const Scenario& scn, const NetConfig& cfg, const Dataset& data, std::size_t m);

struct ClientState {
    std::size_t bs = 0;
    ModelParams params;
    AdamState adam;
    double pi = 0.0;
    double rho = 0.5;
    const LocalData* data = nullptr;
};

/// Shared, read-only context of one BS during one round.
struct RoundContext {
    const Scenario* scn = nullptr;
    const NetConfig* net = nullptr;
    /// Interference from frozen peers, one entry per sample of the client's dataset.
    std::span<const Interference> ext;
};

/// Mean loss of `params` over the given sample indices (no gradient).
double subset_loss(const ModelParams& params, const ClientState& client, const RoundContext& ctx,
                   std::span<const std::size_t> indices, double* max_power = nullptr);

/// Scores the global model against the client's current model on shuffled
/// mini-batches of the held-out slice, then averages the posteriors.
double compute_pi(const ClientState& client, const ModelParams& global, const EmConfig& em,
                  const RoundContext& ctx, const RngStream& rng, double* max_power = nullptr);

struct LocalTrainOptions {
    /// Adds (lambda/2) ||w - center||^2 to the loss when lambda > 0.
    double prox_lambda = 0.0;
    const ModelParams* prox_center = nullptr;
    std::size_t steps_per_batch = 1;
};

struct LocalTrainStats {
    double last_epoch_loss = 0.0;
    double max_power = 0.0;
};

/// `epochs` shuffled passes over the training split with Adam.
LocalTrainStats local_train(ClientState& client, std::size_t epochs, std::size_t batch_size,
                            const RoundContext& ctx, const RngStream& rng, const LocalTrainOptions& opts = {});

// ---------------------------------------------------------------------------

enum class Strategy { em_pfl, fixed_pfl, fedavg, fedper, pfedme, local_only };

std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);
const std::vector<Strategy>& all_strategies();

struct StrategyConfig {
    Strategy kind = Strategy::em_pfl;
    EmConfig em;
    double pi_fixed = 0.5;
    /// Number of top layers FedPer keeps local; 0 shares everything.
    std::size_t fedper_local_layers = 1;
    double pfedme_lambda = 15.0;
    std::size_t pfedme_inner_steps = 5;
};

struct SimulationConfig {
    NetConfig net;
    StrategyConfig strategy;
    std::size_t local_epochs = 5;
    std::size_t batch_size = 64;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    /// Clients trained concurrently; results do not depend on this.
    std::size_t threads = 1;

    void validate() const;
};

struct BsRoundMetrics {
    double pi = 0.0;
    double loss = 0.0;
    double comm_rate = 0.0;
    double radar_rate = 0.0;
    double utility = 0.0;
};

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<BsRoundMetrics> bs;
    double system_utility = 0.0;
    double seconds = 0.0;
    /// Largest ||W_m||_F^2 of any beamformer produced during the round.
    double max_power = 0.0;
};

/// NetConfig sized for a scenario: n_t from the cells, k_max = max_m K_m.
NetConfig net_config_for(const Scenario& scn, std::size_t hidden = 256);

/// In-process federation of all BSs of one dataset.
class Simulation {
public:
    Simulation(const Dataset& data, SimulationConfig cfg);

    RoundMetrics run_round();

    std::size_t rounds_completed() const { return round_; }
    const ModelParams& global_params() const { return global_; }
    const std::vector<ClientState>& clients() const { return clients_; }
    const SimulationConfig& config() const { return cfg_; }

    /// The model BS m actually serves with under the configured strategy.
    ModelParams deployed_params(std::size_t m) const;

    void save_checkpoint(const std::filesystem::path& dir) const;
    void load_checkpoint(const std::filesystem::path& dir);

private:
    std::vector<std::vector<ComplexMatrix>> beamformers(std::span<const std::size_t> indices, double& max_power) const;
    std::vector<std::vector<Interference>> interference_from(const std::vector<std::vector<ComplexMatrix>>& w,
                                                             std::span<const std::size_t> indices) const;
    double pi_for(const ClientState& c, const RoundContext& ctx, const RngStream& rng, double& max_power) const;
    bool layer_shared(std::size_t layer) const;
    void overwrite_shared(ModelParams& target, const ModelParams& source) const;

    const Dataset* data_;
    SimulationConfig cfg_;
    std::vector<LocalData> local_;
    std::vector<ClientState> clients_;
    ModelParams global_;
    std::size_t round_ = 0;
};

}  // namespace isac
