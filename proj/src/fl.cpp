#include "isac/fl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "binary_io.hpp"
#include "isac/error.hpp"
#include "parallel.hpp"

namespace isac {

using json = nlohmann::json;

void EmConfig::validate() const {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw ConfigError("kappa must be positive");
    if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
    if (eval_subset < eval_batch) throw ConfigError("eval_subset must be >= eval_batch");
}

double e_step(double loss_global, double loss_local, const EmConfig& em) {
    if (std::isnan(loss_global) || std::isnan(loss_local)) throw NumericalError("e_step: NaN loss");
    const double x = em.kappa * (loss_local - loss_global);
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double m_step(std::span<const double> lambdas) {
    if (lambdas.empty()) throw std::invalid_argument("m_step: no posteriors");
    double sum = 0.0;
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) throw std::domain_error("m_step: posterior outside [0, 1]");
        sum += l;
    }
    return sum / static_cast<double>(lambdas.size());
}

ModelParams mix_models(const ModelParams& local, const ModelParams& global, double pi) {
    if (!(local.layout == global.layout)) throw std::invalid_argument("mix_models: layouts differ");
    if (!(pi >= 0.0 && pi <= 1.0)) throw std::domain_error("mix_models: pi outside [0, 1]");
    ModelParams out = local;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] += pi * (global.values[i] - local.values[i]);
    if (pi == 1.0) out.values = global.values;
    return out;
}

ModelParams fedavg_aggregate(std::span<const ModelParams> clients, std::span<const double> weights) {
    if (clients.empty() || clients.size() != weights.size())
        throw std::invalid_argument("fedavg_aggregate: need one weight per client");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::domain_error("fedavg_aggregate: negative weight");
        total += w;
    }
    if (!(total > 0.0)) throw std::domain_error("fedavg_aggregate: weights sum to zero");
    for (const auto& c : clients)
        if (!(c.layout == clients[0].layout)) throw std::invalid_argument("fedavg_aggregate: layouts differ");
    // Running mean: identical clients reproduce themselves exactly.
    ModelParams out;
    double seen = 0.0;
    for (std::size_t c = 0; c < clients.size(); ++c) {
        if (weights[c] == 0.0) continue;
        if (seen == 0.0) {
            out = clients[c];
            seen = weights[c];
            continue;
        }
        seen += weights[c];
        const double w = weights[c] / seen;
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += w * (clients[c].values[i] - out.values[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------

LocalData prepare_local_data(const Scenario& scn, const NetConfig& cfg, const Dataset& data, std::size_t m) {
    LocalData d;
    d.bs = m;
    d.samples = data.per_bs.at(m);
    d.n_train = data.n_train;
    for (const auto& s : d.samples) check_sample(scn, s, m);
    d.features = build_features(cfg, d.samples);
    d.views.reserve(d.samples.size());
    for (const auto& s : d.samples) d.views.push_back(make_channel_view(scn, s, m));
    return d;
}

namespace {

FeatureMatrix gather(const FeatureMatrix& f, std::span<const std::size_t> idx) {
    FeatureMatrix out{Eigen::MatrixXd(f.comm.rows(), static_cast<Eigen::Index>(idx.size())),
                      Eigen::MatrixXd(f.sens.rows(), static_cast<Eigen::Index>(idx.size()))};
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        out.comm.col(c) = f.comm.col(static_cast<Eigen::Index>(idx[j]));
        out.sens.col(c) = f.sens.col(static_cast<Eigen::Index>(idx[j]));
    }
    return out;
}

std::vector<SampleTerms> gather_terms(const ClientState& client, const RoundContext& ctx,
                                      std::span<const std::size_t> idx) {
    std::vector<SampleTerms> t(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) t[j] = {&client.data->views[idx[j]], &ctx.ext[idx[j]]};
    return t;
}

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v(end - begin);
    std::iota(v.begin(), v.end(), begin);
    return v;
}

}  // namespace

double subset_loss(const ModelParams& params, const ClientState& client, const RoundContext& ctx,
                   std::span<const std::size_t> indices, double* max_power) {
    const auto features = gather(client.data->features, indices);
    const auto terms = gather_terms(client, ctx, indices);
    const auto r = batch_loss_and_grad(params, *ctx.net, *ctx.scn, client.bs, features, terms, false);
    if (max_power) *max_power = std::max(*max_power, r.max_power);
    return r.loss;
}

double compute_pi(const ClientState& client, const ModelParams& global, const EmConfig& em,
                  const RoundContext& ctx, const RngStream& rng, double* max_power) {
    em.validate();
    const auto& data = *client.data;
    const std::size_t n_eval = std::min(data.n_eval(), em.eval_subset);
    if (n_eval < em.eval_batch)
        throw DataError("compute_pi: BS " + std::to_string(client.bs) + " has " + std::to_string(data.n_eval()) +
                        " held-out samples, fewer than one evaluation batch");

    auto order = iota_range(data.n_train, data.n_train + n_eval);
    auto eng = rng.engine();
    std::shuffle(order.begin(), order.end(), eng);

    std::vector<double> lambdas;
    for (std::size_t start = 0; start < order.size(); start += em.eval_batch) {
        const std::span<const std::size_t> batch(order.data() + start, std::min(em.eval_batch, order.size() - start));
        const double l_global = subset_loss(global, client, ctx, batch, max_power);
        const double l_local = subset_loss(client.params, client, ctx, batch, max_power);
        lambdas.push_back(e_step(l_global, l_local, em));
    }
    return m_step(lambdas);
}

LocalTrainStats local_train(ClientState& client, std::size_t epochs, std::size_t batch_size,
                            const RoundContext& ctx, const RngStream& rng, const LocalTrainOptions& opts) {
    if (epochs < 1 || batch_size < 1 || opts.steps_per_batch < 1)
        throw std::invalid_argument("local_train: epochs, batch size and steps must be >= 1");
    const bool prox = opts.prox_lambda > 0.0;
    if (prox && (!opts.prox_center || !(opts.prox_center->layout == client.params.layout)))
        throw std::invalid_argument("local_train: proximal term needs a center with matching layout");

    LocalTrainStats stats;
    auto order = iota_range(0, client.data->n_train);
    for (std::size_t e = 0; e < epochs; ++e) {
        auto eng = rng.derive(e).engine();
        std::shuffle(order.begin(), order.end(), eng);
        double epoch_loss = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::span<const std::size_t> batch(order.data() + start, std::min(batch_size, order.size() - start));
            const auto features = gather(client.data->features, batch);
            const auto terms = gather_terms(client, ctx, batch);
            for (std::size_t inner = 0; inner < opts.steps_per_batch; ++inner) {
                auto r = batch_loss_and_grad(client.params, *ctx.net, *ctx.scn, client.bs, features, terms, true);
                if (prox) {
                    const auto& c = opts.prox_center->values;
                    double sq = 0.0;
                    for (std::size_t i = 0; i < r.grad.size(); ++i) {
                        const double d = client.params.values[i] - c[i];
                        r.grad[i] += opts.prox_lambda * d;
                        sq += d * d;
                    }
                    r.loss += 0.5 * opts.prox_lambda * sq;
                }
                if (!std::isfinite(r.loss)) throw NumericalError("local_train: non-finite loss at BS " +
                                                                 std::to_string(client.bs));
                stats.max_power = std::max(stats.max_power, r.max_power);
                adam_step(client.params, r.grad, client.adam);
                epoch_loss += r.loss;
                ++steps;
            }
        }
        stats.last_epoch_loss = epoch_loss / static_cast<double>(steps);
    }
    return stats;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::em_pfl: return "em_pfl";
        case Strategy::fixed_pfl: return "fixed_pfl";
        case Strategy::fedavg: return "fedavg";
        case Strategy::fedper: return "fedper";
        case Strategy::pfedme: return "pfedme";
        case Strategy::local_only: return "local_only";
    }
    return "unknown";
}

const std::vector<Strategy>& all_strategies() {
    static const std::vector<Strategy> v = {Strategy::em_pfl, Strategy::fixed_pfl, Strategy::fedavg,
                                            Strategy::fedper, Strategy::pfedme,    Strategy::local_only};
    return v;
}

std::optional<Strategy> parse_strategy(std::string_view name) {
    for (auto s : all_strategies())
        if (to_string(s) == name) return s;
    return std::nullopt;
}

void SimulationConfig::validate() const {
    net.validate();
    if (strategy.kind == Strategy::em_pfl) strategy.em.validate();
    if (!(strategy.pi_fixed >= 0.0 && strategy.pi_fixed <= 1.0)) throw ConfigError("pi_fixed must lie in [0, 1]");
    if (strategy.fedper_local_layers > 4) throw ConfigError("fedper keeps at most 4 layers local");
    if (!(strategy.pfedme_lambda >= 0.0)) throw ConfigError("pfedme lambda must be >= 0");
    if (strategy.pfedme_inner_steps < 1) throw ConfigError("pfedme inner steps must be >= 1");
    if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
}

NetConfig net_config_for(const Scenario& scn, std::size_t hidden) {
    NetConfig cfg;
    cfg.n_t = scn.cells.at(0).n_t;
    for (const auto& c : scn.cells)
        if (c.n_t != cfg.n_t) throw ConfigError("all BSs must share one transmit array size");
    cfg.k_max = scn.max_users();
    cfg.hidden = hidden;
    cfg.element_spacing = scn.element_spacing;
    return cfg;
}

namespace {

enum RngTag : std::uint64_t { kInitTag = 0x1, kRoundTag = 0x2, kPiTag = 0x10, kTrainTag = 0x11 };

}  // namespace

Simulation::Simulation(const Dataset& data, SimulationConfig cfg) : data_(&data), cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& scn = data.scenario;
    scn.validate();
    if (data.per_bs.size() != scn.num_cells()) throw DataError("dataset does not cover every BS");
    if (data.n_train < 1 || data.n_eval() < 1) throw DataError("dataset needs non-empty train and eval splits");
    if (cfg_.net.n_t != scn.cells[0].n_t || cfg_.net.k_max < scn.max_users())
        throw ConfigError("network config does not fit the scenario");

    local_.reserve(scn.num_cells());
    for (std::size_t m = 0; m < scn.num_cells(); ++m) local_.push_back(prepare_local_data(scn, cfg_.net, data, m));

    global_ = init_params(cfg_.net, RngStream(cfg_.seed).derive(kInitTag));
    for (std::size_t m = 0; m < scn.num_cells(); ++m)
        clients_.push_back({m, global_, AdamState::for_params(global_, cfg_.lr), 0.0, scn.cells[m].rho, &local_[m]});
}

bool Simulation::layer_shared(std::size_t layer) const {
    const std::size_t n_layers = global_.layout.layers.size();
    return layer + cfg_.strategy.fedper_local_layers < n_layers;
}

void Simulation::overwrite_shared(ModelParams& target, const ModelParams& source) const {
    for (std::size_t l = 0; l < target.layout.layers.size(); ++l) {
        if (!layer_shared(l)) continue;
        const auto& s = target.layout.layers[l];
        std::copy(source.values.begin() + static_cast<std::ptrdiff_t>(s.offset),
                  source.values.begin() + static_cast<std::ptrdiff_t>(s.end()),
                  target.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
}

ModelParams Simulation::deployed_params(std::size_t m) const {
    if (cfg_.strategy.kind == Strategy::fedavg) return global_;
    return clients_.at(m).params;
}

std::vector<std::vector<ComplexMatrix>> Simulation::beamformers(std::span<const std::size_t> indices,
                                                                double& max_power) const {
    const auto& scn = data_->scenario;
    std::vector<std::vector<ComplexMatrix>> w(scn.num_cells());
    std::vector<double> peak(scn.num_cells(), 0.0);
    detail::parallel_for(scn.num_cells(), cfg_.threads, [&](std::size_t m) {
        const auto params = deployed_params(m);
        const auto features = gather(local_[m].features, indices);
        w[m] = forward_batch(params, cfg_.net, features, scn.cells[m].users, scn.p_t);
        for (const auto& wm : w[m]) peak[m] = std::max(peak[m], wm.frobenius_sq());
    });
    for (double p : peak) max_power = std::max(max_power, p);
    return w;
}

std::vector<std::vector<Interference>> Simulation::interference_from(
    const std::vector<std::vector<ComplexMatrix>>& w, std::span<const std::size_t> indices) const {
    const auto& scn = data_->scenario;
    std::vector<std::vector<Interference>> ext(scn.num_cells());
    detail::parallel_for(scn.num_cells(), cfg_.threads, [&](std::size_t m) {
        ext[m].reserve(indices.size());
        BeamformerSet peers(scn.num_cells());
        for (std::size_t j = 0; j < indices.size(); ++j) {
            for (std::size_t i = 0; i < scn.num_cells(); ++i)
                if (i != m) peers[i] = w[i][j];
            ext[m].push_back(external_interference(scn, local_[m].samples[indices[j]], peers, m));
        }
    });
    return ext;
}

double Simulation::pi_for(const ClientState& c, const RoundContext& ctx, const RngStream& rng,
                          double& max_power) const {
    switch (cfg_.strategy.kind) {
        case Strategy::em_pfl: return compute_pi(c, global_, cfg_.strategy.em, ctx, rng, &max_power);
        case Strategy::fixed_pfl: return cfg_.strategy.pi_fixed;
        case Strategy::fedavg: return 1.0;
        case Strategy::local_only:
        case Strategy::pfedme: return 0.0;
        case Strategy::fedper: {
            std::size_t shared = 0;
            for (std::size_t l = 0; l < global_.layout.layers.size(); ++l)
                if (layer_shared(l)) shared += global_.layout.layers[l].param_count();
            return static_cast<double>(shared) / static_cast<double>(global_.layout.total);
        }
    }
    return 0.0;
}

RoundMetrics Simulation::run_round() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& scn = data_->scenario;
    const std::size_t n_cells = scn.num_cells();
    RoundMetrics rm;
    rm.round = round_;

    // Peers are frozen at the models deployed when the round starts.
    const auto all = iota_range(0, data_->n_samples);
    const auto peer_w = beamformers(all, rm.max_power);
    const auto ext = interference_from(peer_w, all);

    std::vector<double> pis(n_cells), losses(n_cells), peaks(n_cells, 0.0);
    const auto round_rng = RngStream(cfg_.seed).derive(kRoundTag, round_);
    detail::parallel_for(n_cells, cfg_.threads, [&](std::size_t m) {
        auto& c = clients_[m];
        const RoundContext ctx{&scn, &cfg_.net, ext[m]};
        const auto rng = round_rng.derive(m);
        const double pi = pi_for(c, ctx, rng.derive(kPiTag), peaks[m]);
        c.pi = pi;

        LocalTrainOptions opts;
        switch (cfg_.strategy.kind) {
            case Strategy::fedper: overwrite_shared(c.params, global_); break;
            case Strategy::pfedme:
                opts.prox_lambda = cfg_.strategy.pfedme_lambda;
                opts.prox_center = &global_;
                opts.steps_per_batch = cfg_.strategy.pfedme_inner_steps;
                break;
            default: c.params = mix_models(c.params, global_, pi); break;
        }
        const auto st = local_train(c, cfg_.local_epochs, cfg_.batch_size, ctx, rng.derive(kTrainTag), opts);
        pis[m] = pi;
        losses[m] = st.last_epoch_loss;
        peaks[m] = std::max(peaks[m], st.max_power);
    });
    for (double p : peaks) rm.max_power = std::max(rm.max_power, p);

    std::vector<ModelParams> trained;
    std::vector<double> weights;
    for (const auto& c : clients_) {
        trained.push_back(c.params);
        weights.push_back(static_cast<double>(c.data->n_train));
    }
    global_ = fedavg_aggregate(trained, weights);
    if (cfg_.strategy.kind == Strategy::fedper)
        for (auto& c : clients_) overwrite_shared(c.params, global_);

    // Joint evaluation of the deployed models on the held-out split.
    const auto eval_idx = iota_range(data_->n_train, data_->n_samples);
    const auto w = beamformers(eval_idx, rm.max_power);
    const auto eval_ext = interference_from(w, eval_idx);
    const double inv = 1.0 / static_cast<double>(eval_idx.size());
    rm.bs.resize(n_cells);
    for (std::size_t m = 0; m < n_cells; ++m) {
        auto& b = rm.bs[m];
        b.pi = pis[m];
        b.loss = losses[m];
        for (std::size_t j = 0; j < eval_idx.size(); ++j) {
            const auto e = evaluate_bs(scn, local_[m].views[eval_idx[j]], eval_ext[m][j], w[m][j], scn.cells[m].rho);
            b.comm_rate += inv * e.comm_rate;
            b.radar_rate += inv * e.radar_rate;
            b.utility += inv * e.utility;
        }
        rm.system_utility += b.utility;
        if (!std::isfinite(b.utility) || !std::isfinite(b.loss))
            throw NumericalError("non-finite metrics at BS " + std::to_string(m) + ", round " + std::to_string(round_));
    }
    ++round_;
    rm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rm;
}

void Simulation::save_checkpoint(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_params(dir / "global.bin", global_, cfg_.net);
    json pis = json::array();
    for (const auto& c : clients_) {
        write_params(dir / ("bs" + std::to_string(c.bs) + ".bin"), c.params, cfg_.net);
        write_adam(dir / ("bs" + std::to_string(c.bs) + ".adam.bin"), c.adam);
        pis.push_back(c.pi);
    }
    const json state = {{"rounds_completed", round_},
                        {"strategy", std::string(to_string(cfg_.strategy.kind))},
                        {"seed", cfg_.seed},
                        {"pi", pis}};
    detail::spit(dir / "state.json", state.dump(2) + "\n");
}

void Simulation::load_checkpoint(const std::filesystem::path& dir) {
    json state;
    try {
        state = json::parse(detail::slurp(dir / "state.json"));
    } catch (const json::exception& e) {
        throw FormatError((dir / "state.json").string() + ": " + e.what());
    }
    if (state.value("strategy", "") != to_string(cfg_.strategy.kind) || state.value("seed", std::uint64_t{0}) != cfg_.seed)
        throw ConfigError("checkpoint in " + dir.string() + " belongs to a different strategy or seed");
    NetConfig net;
    auto g = read_params(dir / "global.bin", &net);
    if (!(net == cfg_.net)) throw ConfigError("checkpoint network config differs from the run config");
    std::vector<ClientState> restored = clients_;
    for (auto& c : restored) {
        c.params = read_params(dir / ("bs" + std::to_string(c.bs) + ".bin"));
        c.adam = read_adam(dir / ("bs" + std::to_string(c.bs) + ".adam.bin"));
        c.pi = state.at("pi").at(c.bs);
        if (!(c.params.layout == global_.layout) || c.adam.m.size() != c.params.size())
            throw FormatError("checkpoint for BS " + std::to_string(c.bs) + " has the wrong size");
    }
    global_ = std::move(g);
    clients_ = std::move(restored);
    round_ = state.at("rounds_completed");
}

}  // namespace isac
