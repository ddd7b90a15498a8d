#include "isac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "isac/error.hpp"

namespace isac {

namespace {

constexpr double kInvLn2 = 1.0 / std::numbers::ln2;

void check_beamformers(const Scenario& scn, const BeamformerSet& w) {
    if (w.size() != scn.num_cells()) throw std::invalid_argument("beamformer set size != number of cells");
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto& c = scn.cells[i];
        if (w[i].rows() != c.n_t || w[i].cols() != c.users)
            throw std::invalid_argument("beamformer " + std::to_string(i) + " has wrong shape");
    }
}

void check_bs_index(const Scenario& scn, Snapshot samples, std::size_t m) {
    if (m >= scn.num_cells()) throw std::out_of_range("cell index out of range");
    if (samples.size() != scn.num_cells()) throw std::invalid_argument("snapshot size != number of cells");
}

}  // namespace

std::size_t Scenario::max_users() const {
    std::size_t k = 0;
    for (const auto& c : cells) k = std::max(k, c.users);
    return k;
}

void Scenario::validate() const {
    if (cells.empty()) throw ConfigError("scenario needs at least one cell");
    for (const auto& c : cells) {
        if (c.n_t < 1 || c.n_r < 1) throw ConfigError("antenna counts must be >= 1");
        if (c.users < 1) throw ConfigError("every cell needs at least one user");
        if (!(c.rho >= 0.0 && c.rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
    }
    auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
    if (!positive(sigma_c_sq) || !positive(sigma_s_sq)) throw ConfigError("noise powers must be positive");
    if (!positive(p_t)) throw ConfigError("power budget must be positive");
    if (!positive(alpha_s)) throw ConfigError("alpha_s must be positive");
    if (!(rician_k >= 0.0)) throw ConfigError("rician_k must be >= 0");
    if (!positive(cross_power_ratio)) throw ConfigError("cross power ratio must be positive");
    if (!positive(element_spacing)) throw ConfigError("element spacing must be positive");
}

void check_sample(const Scenario& scn, const ChannelSample& s, std::size_t m) {
    const auto& cell = scn.cells.at(m);
    const auto n_cells = scn.num_cells();
    auto fail = [m](const char* what) {
        throw std::invalid_argument("sample for BS " + std::to_string(m) + ": " + what);
    };
    if (s.comm_direct.size() != cell.users) fail("wrong number of direct channels");
    for (const auto& h : s.comm_direct)
        if (h.rows() != cell.n_t || h.cols() != 1) fail("direct channel has wrong shape");
    if (s.comm_cross.size() != n_cells || s.radar_cross.size() != n_cells) fail("cross tables sized wrongly");
    for (std::size_t i = 0; i < n_cells; ++i) {
        if (i == m) continue;
        if (s.comm_cross[i].size() != cell.users) fail("wrong number of cross channels");
        for (const auto& h : s.comm_cross[i])
            if (h.rows() != scn.cells[i].n_t || h.cols() != 1) fail("cross channel has wrong shape");
        if (s.radar_cross[i].rows() != cell.n_r || s.radar_cross[i].cols() != scn.cells[i].n_t)
            fail("radar cross channel has wrong shape");
    }
}

double comm_sinr(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m,
                 std::size_t k) {
    check_bs_index(scn, samples, m);
    check_beamformers(scn, w);
    const auto& s = samples[m];
    if (k >= scn.cells[m].users) throw std::out_of_range("user index out of range");
    check_sample(scn, s, m);

    const auto& h = s.comm_direct[k];
    const double signal = std::norm(inner_col(h, w[m], k));
    double interference = scn.sigma_c_sq;
    for (std::size_t j = 0; j < w[m].cols(); ++j)
        if (j != k) interference += std::norm(inner_col(h, w[m], j));
    for (std::size_t i = 0; i < scn.num_cells(); ++i) {
        if (i == m) continue;
        const auto& hc = s.comm_cross[i][k];
        for (std::size_t j = 0; j < w[i].cols(); ++j) interference += std::norm(inner_col(hc, w[i], j));
    }
    return signal / interference;
}

double comm_sum_rate(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m) {
    check_bs_index(scn, samples, m);
    double rate = 0.0;
    for (std::size_t k = 0; k < scn.cells[m].users; ++k)
        rate += std::log2(1.0 + comm_sinr(scn, samples, w, m, k));
    return rate;
}

ComplexMatrix mrc_combiner(double theta, const SteeringConfig& cfg) {
    auto v = steering_vector(theta, cfg);
    v *= 1.0 / v.frobenius();
    return v;
}

double radar_sinr(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m) {
    check_bs_index(scn, samples, m);
    check_beamformers(scn, w);
    const auto& s = samples[m];
    check_sample(scn, s, m);

    const auto v = mrc_combiner(s.target_theta, scn.rx_steering(m));
    const auto g = target_response(s.target_beta, s.target_theta, scn.rx_steering(m), scn.tx_steering(m));
    const auto vg = v.adjoint() * g;  // 1 x N_T

    double echo = 0.0;
    for (std::size_t k = 0; k < w[m].cols(); ++k) echo += std::norm((vg * w[m].col(k))[0]);

    double interference = scn.sigma_s_sq;
    for (std::size_t n = 0; n < scn.num_cells(); ++n) {
        if (n == m) continue;
        const auto vgn = v.adjoint() * s.radar_cross[n];
        for (std::size_t j = 0; j < w[n].cols(); ++j) interference += std::norm((vgn * w[n].col(j))[0]);
    }
    return static_cast<double>(scn.cells[m].n_r) * echo / interference;
}

double radar_rate(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m) {
    return std::log2(1.0 + radar_sinr(scn, samples, w, m));
}

double bs_utility(const Scenario& scn, Snapshot samples, const BeamformerSet& w, std::size_t m) {
    check_bs_index(scn, samples, m);
    const double rho = scn.cells[m].rho;
    return rho * comm_sum_rate(scn, samples, w, m) + (1.0 - rho) * radar_rate(scn, samples, w, m);
}

SystemUtility system_utility(const Scenario& scn, Snapshot samples, const BeamformerSet& w) {
    SystemUtility out;
    for (std::size_t m = 0; m < scn.num_cells(); ++m) {
        out.per_bs.push_back(bs_utility(scn, samples, w, m));
        out.total += out.per_bs.back();
    }
    return out;
}

Interference external_interference(const Scenario& scn, const ChannelSample& sample,
                                   const BeamformerSet& peers, std::size_t m) {
    const auto& cell = scn.cells.at(m);
    Interference ext;
    ext.comm.assign(cell.users, scn.sigma_c_sq);
    ext.radar = scn.sigma_s_sq;
    if (scn.num_cells() == 1) return ext;

    const auto v = mrc_combiner(sample.target_theta, scn.rx_steering(m));
    for (std::size_t i = 0; i < scn.num_cells(); ++i) {
        if (i == m) continue;
        const auto& wi = peers.at(i);
        for (std::size_t k = 0; k < cell.users; ++k) {
            const auto& h = sample.comm_cross[i][k];
            for (std::size_t j = 0; j < wi.cols(); ++j) ext.comm[k] += std::norm(inner_col(h, wi, j));
        }
        // (v^H G_{i,m})^H = G_{i,m}^H v
        const auto u = sample.radar_cross[i].adjoint() * v;
        for (std::size_t j = 0; j < wi.cols(); ++j) ext.radar += std::norm(inner_col(u, wi, j));
    }
    return ext;
}

BsChannelView make_channel_view(const Scenario& scn, const ChannelSample& sample, std::size_t m) {
    const auto rx = scn.rx_steering(m);
    const auto tx = scn.tx_steering(m);
    const auto v = mrc_combiner(sample.target_theta, rx);
    const auto g = target_response(sample.target_beta, sample.target_theta, rx, tx);
    return BsChannelView{sample.comm_direct, g.adjoint() * v, static_cast<double>(rx.n_elements)};
}

namespace {

// Shared body of evaluate_bs and utility_and_grad.
template <bool WithGrad>
BsEvaluation evaluate_impl(const BsChannelView& view, const Interference& ext, const ComplexMatrix& w,
                           double rho, ComplexMatrix* grad) {
    const std::size_t users = view.users.size();
    const std::size_t n_t = w.rows();
    if (w.cols() != users || ext.comm.size() != users || view.radar_dir.size() != n_t)
        throw std::invalid_argument("evaluate_bs: dimension mismatch");

    // z[k * users + j] = h_k^H w_j
    std::vector<cplx> z(users * users);
    for (std::size_t k = 0; k < users; ++k)
        for (std::size_t j = 0; j < users; ++j) z[k * users + j] = inner_col(view.users[k], w, j);

    BsEvaluation out;
    if constexpr (WithGrad) *grad = ComplexMatrix(n_t, users);

    for (std::size_t k = 0; k < users; ++k) {
        const double signal = std::norm(z[k * users + k]);
        double interference = ext.comm[k];
        for (std::size_t j = 0; j < users; ++j)
            if (j != k) interference += std::norm(z[k * users + j]);
        const double total = signal + interference;
        out.comm_rate += std::log2(total / interference);

        if constexpr (WithGrad) {
            // R_k = log2(T_k) - log2(I_k); d|h^H w|^2 = 2 h (h^H w)
            const auto& h = view.users[k];
            for (std::size_t j = 0; j < users; ++j) {
                double coef = 1.0 / total;
                if (j != k) coef -= 1.0 / interference;
                const cplx scale = rho * kInvLn2 * 2.0 * coef * z[k * users + j];
                for (std::size_t n = 0; n < n_t; ++n) (*grad)(n, j) += scale * h[n];
            }
        }
    }

    std::vector<cplx> y(users);
    double echo = 0.0;
    for (std::size_t k = 0; k < users; ++k) {
        y[k] = inner_col(view.radar_dir, w, k);
        echo += std::norm(y[k]);
    }
    const double sinr = view.array_gain * echo / ext.radar;
    out.radar_rate = std::log2(1.0 + sinr);

    if constexpr (WithGrad) {
        const double coef = (1.0 - rho) * kInvLn2 / (1.0 + sinr) * view.array_gain / ext.radar * 2.0;
        for (std::size_t k = 0; k < users; ++k) {
            const cplx scale = coef * y[k];
            for (std::size_t n = 0; n < n_t; ++n) (*grad)(n, k) += scale * view.radar_dir[n];
        }
    }

    out.utility = rho * out.comm_rate + (1.0 - rho) * out.radar_rate;
    return out;
}

}  // namespace

BsEvaluation evaluate_bs(const Scenario&, const BsChannelView& view, const Interference& ext,
                         const ComplexMatrix& w_m, double rho) {
    return evaluate_impl<false>(view, ext, w_m, rho, nullptr);
}

BsEvaluation utility_and_grad(const Scenario&, const BsChannelView& view, const Interference& ext,
                              const ComplexMatrix& w_m, double rho, ComplexMatrix& grad_w) {
    return evaluate_impl<true>(view, ext, w_m, rho, &grad_w);
}

}  // namespace isac
