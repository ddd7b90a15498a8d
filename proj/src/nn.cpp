#include "isac/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "binary_io.hpp"
#include "isac/error.hpp"

namespace isac {

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

void NetConfig::validate() const {
    if (n_t < 1 || k_max < 1 || hidden < 1) throw ConfigError("network dimensions must be >= 1");
    if (!(element_spacing > 0.0)) throw ConfigError("element spacing must be positive");
}

ParamLayout ParamLayout::for_config(const NetConfig& cfg) {
    cfg.validate();
    ParamLayout layout;
    auto add = [&layout](std::string name, std::size_t out, std::size_t in) {
        LayerShape s{std::move(name), out, in, layout.total};
        layout.total += s.param_count();
        layout.layers.push_back(std::move(s));
    };
    add("comm_branch", cfg.hidden, cfg.comm_in_dim());
    add("sens_branch", cfg.hidden, cfg.sens_in_dim());
    add("fusion", cfg.hidden, 2 * cfg.hidden);
    add("output", cfg.out_dim(), cfg.hidden);
    return layout;
}

bool ModelParams::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

ModelParams zero_params(const NetConfig& cfg) {
    ModelParams p{ParamLayout::for_config(cfg), {}};
    p.values.assign(p.layout.total, 0.0);
    return p;
}

ModelParams init_params(const NetConfig& cfg, const RngStream& rng) {
    auto p = zero_params(cfg);
    for (std::size_t l = 0; l < p.layout.layers.size(); ++l) {
        const auto& layer = p.layout.layers[l];
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
        auto eng = rng.derive(l).engine();
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < layer.weight_count(); ++i) p.values[layer.offset + i] = dist(eng);
    }
    return p;
}

AdamState AdamState::for_params(const ModelParams& p, double lr) {
    AdamState s;
    s.m.assign(p.size(), 0.0);
    s.v.assign(p.size(), 0.0);
    s.lr = lr;
    return s;
}

void adam_step(ModelParams& params, std::span<const double> grad, AdamState& state) {
    const std::size_t n = params.size();
    if (grad.size() != n || state.m.size() != n || state.v.size() != n)
        throw std::invalid_argument("adam_step: length mismatch");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params.values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

FeatureMatrix build_features(const NetConfig& cfg, std::span<const ChannelSample> samples) {
    const auto n = static_cast<Eigen::Index>(samples.size());
    FeatureMatrix f{MatrixXd::Zero(static_cast<Eigen::Index>(cfg.comm_in_dim()), n),
                    MatrixXd::Zero(static_cast<Eigen::Index>(cfg.sens_in_dim()), n)};
    const SteeringConfig tx{cfg.n_t, cfg.element_spacing};
    for (Eigen::Index s = 0; s < n; ++s) {
        const auto& sample = samples[static_cast<std::size_t>(s)];
        if (sample.comm_direct.size() > cfg.k_max)
            throw std::invalid_argument("sample has more users than the network's k_max");
        for (std::size_t k = 0; k < sample.comm_direct.size(); ++k) {
            const auto& h = sample.comm_direct[k];
            if (h.size() != cfg.n_t) throw std::invalid_argument("channel length != n_t");
            for (std::size_t a = 0; a < cfg.n_t; ++a) {
                const auto row = static_cast<Eigen::Index>(a * cfg.k_max * 2 + k * 2);
                f.comm(row, s) = h[a].real();
                f.comm(row + 1, s) = h[a].imag();
            }
        }
        const auto b = steering_vector(sample.target_theta, tx);
        const cplx beta = std::conj(sample.target_beta);
        for (std::size_t a = 0; a < cfg.n_t; ++a) {
            const cplx g = beta * b[a];
            f.sens(static_cast<Eigen::Index>(2 * a), s) = g.real();
            f.sens(static_cast<Eigen::Index>(2 * a + 1), s) = g.imag();
        }
    }
    return f;
}

ComplexMatrix project_power(const ComplexMatrix& w_raw, double p_t) {
    const double norm = w_raw.frobenius();
    if (!(norm > 0.0)) return w_raw;
    ComplexMatrix w = w_raw;
    w *= std::sqrt(p_t) / norm;
    return w;
}

ComplexMatrix project_power_backward(const ComplexMatrix& w_raw, double p_t, const ComplexMatrix& grad_w) {
    const double norm = w_raw.frobenius();
    ComplexMatrix out(w_raw.rows(), w_raw.cols());
    if (!(norm > 0.0)) return out;
    // y = c x / |x|  =>  dL/dx = (c / |x|) (g - x <x, g> / |x|^2)
    double dot = 0.0;
    for (std::size_t i = 0; i < w_raw.size(); ++i)
        dot += w_raw[i].real() * grad_w[i].real() + w_raw[i].imag() * grad_w[i].imag();
    const double scale = std::sqrt(p_t) / norm;
    const double radial = dot / (norm * norm);
    for (std::size_t i = 0; i < w_raw.size(); ++i) out[i] = scale * (grad_w[i] - radial * w_raw[i]);
    return out;
}

namespace {

struct Activations {
    MatrixXd a1, a2, a3;  // pre-activations
    MatrixXd z;           // [relu(a1); relu(a2)]
    MatrixXd h3;
    MatrixXd out;
};

Map<const MatrixXd> weight(const ModelParams& p, std::size_t layer) {
    const auto& s = p.layout.layers[layer];
    return {p.values.data() + s.offset, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in)};
}

Map<const VectorXd> bias(const ModelParams& p, std::size_t layer) {
    const auto& s = p.layout.layers[layer];
    return {p.values.data() + s.bias_offset(), static_cast<Eigen::Index>(s.out)};
}

void check_layout(const ModelParams& p, const NetConfig& cfg) {
    if (!(p.layout == ParamLayout::for_config(cfg)) || p.values.size() != p.layout.total)
        throw std::invalid_argument("parameter layout does not match network config");
}

Activations net_forward(const ModelParams& p, const FeatureMatrix& x) {
    const auto hidden = static_cast<Eigen::Index>(p.layout.layers[kCommLayer].out);
    const auto batch = x.comm.cols();
    Activations act;
    act.a1.noalias() = weight(p, kCommLayer) * x.comm;
    act.a1.colwise() += bias(p, kCommLayer);
    act.a2.noalias() = weight(p, kSensLayer) * x.sens;
    act.a2.colwise() += bias(p, kSensLayer);
    act.z.resize(2 * hidden, batch);
    act.z.topRows(hidden) = act.a1.cwiseMax(0.0);
    act.z.bottomRows(hidden) = act.a2.cwiseMax(0.0);
    act.a3.noalias() = weight(p, kFusionLayer) * act.z;
    act.a3.colwise() += bias(p, kFusionLayer);
    act.h3 = act.a3.cwiseMax(0.0);
    act.out.noalias() = weight(p, kOutputLayer) * act.h3;
    act.out.colwise() += bias(p, kOutputLayer);
    return act;
}

void accumulate_layer(ParamVector& grad, const LayerShape& s, const MatrixXd& delta, const MatrixXd& input) {
    Map<MatrixXd> gw(grad.data() + s.offset, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in));
    Map<VectorXd> gb(grad.data() + s.bias_offset(), static_cast<Eigen::Index>(s.out));
    gw.noalias() = delta * input.transpose();
    gb = delta.rowwise().sum();
}

ParamVector net_backward(const ModelParams& p, const FeatureMatrix& x, const Activations& act,
                                 const MatrixXd& d_out) {
    const auto hidden = static_cast<Eigen::Index>(p.layout.layers[kCommLayer].out);
    // Every entry is overwritten by accumulate_layer.
    ParamVector grad(p.size());
    const auto& layers = p.layout.layers;

    accumulate_layer(grad, layers[kOutputLayer], d_out, act.h3);
    MatrixXd d3;
    d3.noalias() = weight(p, kOutputLayer).transpose() * d_out;
    d3 = (act.a3.array() > 0.0).select(d3, 0.0);
    accumulate_layer(grad, layers[kFusionLayer], d3, act.z);

    MatrixXd dz;
    dz.noalias() = weight(p, kFusionLayer).transpose() * d3;
    const MatrixXd d1 = (act.a1.array() > 0.0).select(dz.topRows(hidden), 0.0);
    const MatrixXd d2 = (act.a2.array() > 0.0).select(dz.bottomRows(hidden), 0.0);
    accumulate_layer(grad, layers[kCommLayer], d1, x.comm);
    accumulate_layer(grad, layers[kSensLayer], d2, x.sens);
    return grad;
}

ComplexMatrix reshape_output(const MatrixXd& out, Eigen::Index col, const NetConfig& cfg, std::size_t k_m) {
    ComplexMatrix w(cfg.n_t, k_m);
    for (std::size_t a = 0; a < cfg.n_t; ++a)
        for (std::size_t k = 0; k < k_m; ++k) {
            const auto row = static_cast<Eigen::Index>(a * cfg.k_max * 2 + k * 2);
            w(a, k) = {out(row, col), out(row + 1, col)};
        }
    return w;
}

}  // namespace

std::vector<ComplexMatrix> raw_outputs(const ModelParams& params, const NetConfig& cfg,
                                       const FeatureMatrix& features) {
    check_layout(params, cfg);
    const auto act = net_forward(params, features);
    std::vector<ComplexMatrix> out;
    out.reserve(features.count());
    for (Eigen::Index c = 0; c < act.out.cols(); ++c) out.push_back(reshape_output(act.out, c, cfg, cfg.k_max));
    return out;
}

std::vector<ComplexMatrix> forward_batch(const ModelParams& params, const NetConfig& cfg,
                                         const FeatureMatrix& features, std::size_t k_m, double p_t) {
    check_layout(params, cfg);
    if (k_m < 1 || k_m > cfg.k_max) throw std::invalid_argument("k_m must lie in [1, k_max]");
    const auto act = net_forward(params, features);
    std::vector<ComplexMatrix> out;
    out.reserve(features.count());
    for (Eigen::Index c = 0; c < act.out.cols(); ++c)
        out.push_back(project_power(reshape_output(act.out, c, cfg, k_m), p_t));
    return out;
}

ComplexMatrix forward(const ModelParams& params, const NetConfig& cfg, const ChannelSample& sample,
                      std::size_t k_m, double p_t) {
    const auto features = build_features(cfg, std::span<const ChannelSample>(&sample, 1));
    return forward_batch(params, cfg, features, k_m, p_t).front();
}

LossGrad batch_loss_and_grad(const ModelParams& params, const NetConfig& cfg, const Scenario& scn,
                             std::size_t m, const FeatureMatrix& features,
                             std::span<const SampleTerms> terms, bool want_grad) {
    check_layout(params, cfg);
    const auto& cell = scn.cells.at(m);
    const std::size_t k_m = cell.users;
    if (k_m > cfg.k_max || cell.n_t != cfg.n_t) throw std::invalid_argument("cell does not fit the network config");
    const std::size_t batch = features.count();
    if (batch == 0) throw std::invalid_argument("loss_and_grad: empty batch");
    if (terms.size() != batch) throw std::invalid_argument("loss_and_grad: terms/batch size mismatch");

    const auto act = net_forward(params, features);
    MatrixXd d_out;
    if (want_grad) d_out = MatrixXd::Zero(act.out.rows(), act.out.cols());

    LossGrad result;
    const double inv_batch = 1.0 / static_cast<double>(batch);
    ComplexMatrix grad_w;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        const auto w_raw = reshape_output(act.out, col, cfg, k_m);
        const auto w = project_power(w_raw, scn.p_t);
        result.max_power = std::max(result.max_power, w.frobenius_sq());
        if (!want_grad) {
            result.loss -= inv_batch * evaluate_bs(scn, *terms[b].view, *terms[b].ext, w, cell.rho).utility;
            continue;
        }
        const auto eval = utility_and_grad(scn, *terms[b].view, *terms[b].ext, w, cell.rho, grad_w);
        result.loss -= inv_batch * eval.utility;
        grad_w *= -inv_batch;
        const auto grad_raw = project_power_backward(w_raw, scn.p_t, grad_w);
        for (std::size_t a = 0; a < cfg.n_t; ++a)
            for (std::size_t k = 0; k < k_m; ++k) {
                const auto row = static_cast<Eigen::Index>(a * cfg.k_max * 2 + k * 2);
                d_out(row, col) = grad_raw(a, k).real();
                d_out(row + 1, col) = grad_raw(a, k).imag();
            }
    }
    if (want_grad) result.grad = net_backward(params, features, act, d_out);
    return result;
}

LossGrad loss_and_grad(const ModelParams& params, const NetConfig& cfg, const Scenario& scn,
                       std::span<const ChannelSample> batch, std::size_t m,
                       std::span<const BeamformerSet> peers) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    if (peers.size() != batch.size()) throw std::invalid_argument("loss_and_grad: one peer set per sample");
    const auto features = build_features(cfg, batch);
    std::vector<BsChannelView> views;
    std::vector<Interference> ext;
    views.reserve(batch.size());
    ext.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        check_sample(scn, batch[b], m);
        views.push_back(make_channel_view(scn, batch[b], m));
        ext.push_back(external_interference(scn, batch[b], peers[b], m));
    }
    std::vector<SampleTerms> terms(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) terms[b] = {&views[b], &ext[b]};
    return batch_loss_and_grad(params, cfg, scn, m, features, terms, true);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kParamsMagic[8] = {'I', 'S', 'A', 'C', 'P', 'R', 'M', '1'};
constexpr int kParamsVersion = 1;

std::string frame(const json& header, std::span<const ParamVector* const> arrays) {
    std::string buf(kParamsMagic, sizeof(kParamsMagic));
    const auto text = header.dump();
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(text.size()));
    buf += text;
    for (const auto* a : arrays) {
        detail::put<std::uint64_t>(buf, a->size());
        detail::put_array<double>(buf, *a);
    }
    return buf;
}

json unframe(const std::filesystem::path& path, const std::string& kind, std::vector<ParamVector>& arrays,
             std::size_t n_arrays) {
    detail::Reader r(detail::slurp(path));
    if (r.get_bytes(sizeof(kParamsMagic)) != std::string_view(kParamsMagic, sizeof(kParamsMagic)))
        throw FormatError(path.string() + ": bad magic");
    const auto len = r.get<std::uint32_t>();
    json header;
    try {
        header = json::parse(r.get_bytes(len));
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": corrupt header: " + e.what());
    }
    if (header.value("format", "") != kind) throw FormatError(path.string() + ": not a " + kind + " file");
    if (header.value("version", -1) != kParamsVersion)
        throw VersionError(path.string() + ": unsupported version " + header.value("version", json(-1)).dump());
    for (std::size_t i = 0; i < n_arrays; ++i) {
        const auto a = r.get_array<double>(r.get<std::uint64_t>());
        arrays.emplace_back(a.begin(), a.end());
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
    return header;
}

}  // namespace

void write_params(const std::filesystem::path& path, const ModelParams& params, const NetConfig& cfg) {
    check_layout(params, cfg);
    json header = {{"format", "isac-model-params"},
                   {"version", kParamsVersion},
                   {"config",
                    {{"n_t", cfg.n_t}, {"k_max", cfg.k_max}, {"hidden", cfg.hidden},
                     {"element_spacing", cfg.element_spacing}}},
                   {"total", params.layout.total}};
    for (const auto& l : params.layout.layers)
        header["layers"].push_back({{"name", l.name}, {"out", l.out}, {"in", l.in}, {"offset", l.offset}});
    const ParamVector* arrays[] = {&params.values};
    detail::spit(path, frame(header, arrays));
}

ModelParams read_params(const std::filesystem::path& path, NetConfig* cfg_out) {
    std::vector<ParamVector> arrays;
    const auto header = unframe(path, "isac-model-params", arrays, 1);
    NetConfig cfg;
    try {
        const auto& c = header.at("config");
        cfg.n_t = c.at("n_t");
        cfg.k_max = c.at("k_max");
        cfg.hidden = c.at("hidden");
        cfg.element_spacing = c.at("element_spacing");
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad config header: " + e.what());
    }
    ModelParams p{ParamLayout::for_config(cfg), std::move(arrays[0])};
    if (p.values.size() != p.layout.total || header.value("total", std::size_t{0}) != p.layout.total)
        throw FormatError(path.string() + ": parameter count does not match layout");
    if (cfg_out) *cfg_out = cfg;
    return p;
}

void write_adam(const std::filesystem::path& path, const AdamState& state) {
    json header = {{"format", "isac-adam-state"}, {"version", kParamsVersion}, {"step", state.step},
                   {"lr", state.lr},          {"beta1", state.beta1},        {"beta2", state.beta2},
                   {"eps", state.eps}};
    const ParamVector* arrays[] = {&state.m, &state.v};
    detail::spit(path, frame(header, arrays));
}

AdamState read_adam(const std::filesystem::path& path) {
    std::vector<ParamVector> arrays;
    const auto header = unframe(path, "isac-adam-state", arrays, 2);
    AdamState s;
    try {
        s.step = header.at("step");
        s.lr = header.at("lr");
        s.beta1 = header.at("beta1");
        s.beta2 = header.at("beta2");
        s.eps = header.at("eps");
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad adam header: " + e.what());
    }
    s.m = std::move(arrays[0]);
    s.v = std::move(arrays[1]);
    if (s.m.size() != s.v.size()) throw FormatError(path.string() + ": moment lengths differ");
    return s;
}

}  // namespace isac
