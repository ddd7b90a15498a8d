#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "isac/datagen.hpp"
#include "isac/error.hpp"
#include "isac/nn.hpp"
#include "oracles.hpp"

using namespace isac;
namespace fs = std::filesystem;

namespace {

// Scalar re-implementation of the network, reading weights column-major.
std::vector<double> dense(const ModelParams& p, std::size_t layer, const std::vector<double>& x, bool relu) {
    const auto& s = p.layout.layers[layer];
    std::vector<double> y(s.out);
    for (std::size_t o = 0; o < s.out; ++o) {
        double acc = p.values[s.bias_offset() + o];
        for (std::size_t i = 0; i < s.in; ++i) acc += p.values[s.offset + i * s.out + o] * x[i];
        y[o] = relu ? std::max(acc, 0.0) : acc;
    }
    return y;
}

ComplexMatrix oracle_forward(const ModelParams& p, const NetConfig& cfg, const ChannelSample& s, std::size_t k_m,
                             double p_t) {
    std::vector<double> xc(cfg.comm_in_dim(), 0.0), xs(cfg.sens_in_dim(), 0.0);
    for (std::size_t k = 0; k < s.comm_direct.size(); ++k)
        for (std::size_t a = 0; a < cfg.n_t; ++a) {
            xc[a * cfg.k_max * 2 + k * 2] = s.comm_direct[k][a].real();
            xc[a * cfg.k_max * 2 + k * 2 + 1] = s.comm_direct[k][a].imag();
        }
    const auto b = oracle::steering(s.target_theta, cfg.n_t, cfg.element_spacing);
    for (std::size_t a = 0; a < cfg.n_t; ++a) {
        const auto g = std::conj(s.target_beta) * b[a];
        xs[2 * a] = g.real();
        xs[2 * a + 1] = g.imag();
    }
    auto z = dense(p, kCommLayer, xc, true);
    const auto z2 = dense(p, kSensLayer, xs, true);
    z.insert(z.end(), z2.begin(), z2.end());
    const auto out = dense(p, kOutputLayer, dense(p, kFusionLayer, z, true), false);
    ComplexMatrix w(cfg.n_t, k_m);
    double norm_sq = 0.0;
    for (std::size_t a = 0; a < cfg.n_t; ++a)
        for (std::size_t k = 0; k < k_m; ++k) {
            w(a, k) = {out[a * cfg.k_max * 2 + k * 2], out[a * cfg.k_max * 2 + k * 2 + 1]};
            norm_sq += std::norm(w(a, k));
        }
    if (norm_sq > 0.0)
        for (std::size_t i = 0; i < w.size(); ++i) w[i] *= std::sqrt(p_t / norm_sq);
    return w;
}

Scenario tiny_scenario() {
    Scenario scn;
    scn.cells = {{2, 2, 2, 0.3}, {2, 2, 1, 0.7}};
    return scn;
}

std::vector<BeamformerSet> random_peers(std::mt19937_64& g, const Scenario& scn, std::size_t n) {
    std::vector<BeamformerSet> peers(n);
    for (auto& set : peers)
        for (const auto& c : scn.cells) set.push_back(oracle::random_matrix(g, c.n_t, c.users, 0.5));
    return peers;
}

double oracle_loss(const ModelParams& p, const NetConfig& cfg, const Scenario& scn, const Dataset& d,
                   std::span<const std::size_t> idx, std::size_t m, std::span<const BeamformerSet> peers) {
    double acc = 0.0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        std::vector<ChannelSample> snap;
        for (std::size_t i = 0; i < scn.num_cells(); ++i) snap.push_back(d.per_bs[i][idx[b]]);
        auto w = peers[b];
        w[m] = oracle_forward(p, cfg, snap[m], scn.cells[m].users, scn.p_t);
        acc -= oracle::bs_utility(scn, snap, w, m);
    }
    return acc / static_cast<double>(idx.size());
}

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("isac_test_nn_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("parameter layout") {
    const NetConfig cfg{2, 2, 3, 0.5};
    const auto layout = ParamLayout::for_config(cfg);
    REQUIRE(layout.layers.size() == 4);
    CHECK(layout.layers[kCommLayer].in == 8);
    CHECK(layout.layers[kSensLayer].in == 4);
    CHECK(layout.layers[kFusionLayer].in == 6);
    CHECK(layout.layers[kOutputLayer].out == 8);
    CHECK(layout.total == (3 * 8 + 3) + (3 * 4 + 3) + (3 * 6 + 3) + (8 * 3 + 8));
    CHECK_THROWS_AS(ParamLayout::for_config({0, 2, 3, 0.5}), ConfigError);
}

TEST_CASE("initialization") {
    const NetConfig cfg{4, 3, 16, 0.5};
    const auto p = init_params(cfg, RngStream(9));
    CHECK(p == init_params(cfg, RngStream(9)));
    CHECK(!(p == init_params(cfg, RngStream(10))));
    for (const auto& l : p.layout.layers) {
        const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        double max_abs = 0.0;
        for (std::size_t i = 0; i < l.weight_count(); ++i) max_abs = std::max(max_abs, std::abs(p.values[l.offset + i]));
        CHECK(max_abs <= bound);
        CHECK(max_abs > 0.5 * bound);
        for (std::size_t i = 0; i < l.out; ++i) CHECK(p.values[l.bias_offset() + i] == 0.0);
    }
}

TEST_CASE("power projection") {
    SUBCASE("zero stays zero") {
        const ComplexMatrix z(3, 2);
        CHECK(project_power(z, 1.0) == z);
    }
    SUBCASE("norm 10 is scaled by 1/10") {
        ComplexMatrix w(2, 2, {{6, 0}, {0, 8}, {0, 0}, {0, 0}});
        const auto y = project_power(w, 1.0);
        CHECK(std::abs(y(0, 0) - cplx(0.6, 0.0)) < 1e-15);
        CHECK(std::abs(y(0, 1) - cplx(0.0, 0.8)) < 1e-15);
        CHECK(y.frobenius_sq() == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("small matrices are scaled up to the budget") {
        ComplexMatrix w(2, 1, {{0.1, 0}, {0, 0.1}});
        CHECK(project_power(w, 2.0).frobenius_sq() == doctest::Approx(2.0).epsilon(1e-14));
    }
    SUBCASE("backward pass matches finite differences") {
        std::mt19937_64 g(4);
        for (int t = 0; t < 10; ++t) {
            const auto x = oracle::random_matrix(g, 3, 2, 2.0);
            const auto c = oracle::random_matrix(g, 3, 2);
            // f(x) = Re<c, P(x)>, so df/dx is the pullback of c.
            auto f = [&](const ComplexMatrix& xx) {
                const auto y = project_power(xx, 1.5);
                double acc = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) acc += c[i].real() * y[i].real() + c[i].imag() * y[i].imag();
                return acc;
            };
            const auto grad = project_power_backward(x, 1.5, c);
            const double h = 1e-5;
            for (std::size_t i = 0; i < x.size(); ++i)
                for (int part = 0; part < 2; ++part) {
                    auto xp = x, xm = x;
                    const cplx step = part == 0 ? cplx(h, 0) : cplx(0, h);
                    xp[i] += step;
                    xm[i] -= step;
                    const double fd = (f(xp) - f(xm)) / (2 * h);
                    const double an = part == 0 ? grad[i].real() : grad[i].imag();
                    CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(fd), std::abs(an)) + 1e-8);
                }
        }
    }
}

TEST_CASE("forward pass matches the scalar oracle") {
    const NetConfig cfg{2, 2, 3, 0.5};
    const auto scn = tiny_scenario();
    const auto data = generate_dataset(scn, 10, 3);

    SUBCASE("hand-set parameters") {
        auto p = zero_params(cfg);
        for (std::size_t i = 0; i < p.size(); ++i) p.values[i] = 0.05 * std::sin(1.0 + 0.7 * static_cast<double>(i));
        for (std::size_t s = 0; s < data.n_samples; ++s) {
            const auto& sample = data.per_bs[0][s];
            const auto w = forward(p, cfg, sample, 2, 1.0);
            CHECK(max_abs_diff(w, oracle_forward(p, cfg, sample, 2, 1.0)) < 1e-10);
            CHECK(w.frobenius_sq() <= 1.0 + 1e-9);
        }
    }
    SUBCASE("truncation to k_m columns") {
        const auto p = init_params(cfg, RngStream(1));
        const auto w = forward(p, cfg, data.per_bs[1][0], 1, 1.0);
        CHECK(w.cols() == 1);
        CHECK(max_abs_diff(w, oracle_forward(p, cfg, data.per_bs[1][0], 1, 1.0)) < 1e-10);
        CHECK_THROWS(forward(p, cfg, data.per_bs[1][0], 3, 1.0));
    }
    SUBCASE("all-zero parameters give zero beamformers and zero loss") {
        const auto p = zero_params(cfg);
        const auto w = forward(p, cfg, data.per_bs[0][0], 2, 1.0);
        CHECK(w.frobenius_sq() == 0.0);
        std::mt19937_64 g(2);
        const auto peers = random_peers(g, scn, 3);
        const auto lg = loss_and_grad(p, cfg, scn, std::span(data.per_bs[0]).first(3), 0, peers);
        CHECK(lg.loss == 0.0);
    }
    SUBCASE("mismatched layouts are rejected") {
        const auto p = zero_params({2, 2, 4, 0.5});
        CHECK_THROWS(forward(p, cfg, data.per_bs[0][0], 2, 1.0));
    }
}

TEST_CASE("loss reduces to the single-user closed form") {
    Scenario scn;
    scn.cells = {{2, 2, 1, 1.0}};
    const NetConfig cfg{2, 1, 4, 0.5};
    const auto data = generate_dataset(scn, 10, 8);
    const auto p = init_params(cfg, RngStream(5));
    const std::vector<BeamformerSet> peers(4, BeamformerSet{ComplexMatrix()});
    const auto batch = std::span(data.per_bs[0]).first(4);
    const auto lg = loss_and_grad(p, cfg, scn, batch, 0, peers);
    double expected = 0.0;
    for (const auto& s : batch) {
        const auto w = forward(p, cfg, s, 1, 1.0);
        expected -= std::log2(1.0 + std::norm(oracle::dot_h(s.comm_direct[0], w, 0)) / scn.sigma_c_sq) / 4.0;
    }
    CHECK(lg.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("reverse-mode gradient matches central finite differences") {
    const NetConfig cfg{2, 2, 4, 0.5};
    const auto scn = tiny_scenario();
    const auto data = generate_dataset(scn, 20, 11);
    std::mt19937_64 g(31);
    for (int t = 0; t < 6; ++t) {
        const std::size_t m = static_cast<std::size_t>(t % 2);
        auto p = init_params(cfg, RngStream(100 + static_cast<std::uint64_t>(t)));
        std::normal_distribution<double> jitter(0.0, 0.05);
        for (auto& v : p.values) v += jitter(g);  // non-zero biases too
        const std::vector<std::size_t> idx = {static_cast<std::size_t>(t), static_cast<std::size_t>(t + 7)};
        std::vector<ChannelSample> batch;
        for (auto i : idx) batch.push_back(data.per_bs[m][i]);
        const auto peers = random_peers(g, scn, idx.size());

        const auto lg = loss_and_grad(p, cfg, scn, batch, m, peers);
        CHECK(lg.loss == doctest::Approx(oracle_loss(p, cfg, scn, data, idx, m, peers)).epsilon(1e-10));
        REQUIRE(lg.grad.size() == p.size());
        const double h = 1e-5;
        double worst = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto pp = p, pm = p;
            pp.values[i] += h;
            pm.values[i] -= h;
            const double fd = (oracle_loss(pp, cfg, scn, data, idx, m, peers) -
                               oracle_loss(pm, cfg, scn, data, idx, m, peers)) / (2 * h);
            const double err = std::abs(fd - lg.grad[i]) / std::max(std::max(std::abs(fd), std::abs(lg.grad[i])), 1e-8);
            if (std::abs(fd - lg.grad[i]) > 1e-8) worst = std::max(worst, err);
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("padding neutrality") {
    // Output rows for user columns beyond k_m never reach the loss.
    const NetConfig cfg{2, 2, 4, 0.5};
    const auto scn = tiny_scenario();
    const auto data = generate_dataset(scn, 10, 12);
    std::mt19937_64 g(6);
    const auto peers = random_peers(g, scn, 4);
    const auto batch = std::span(data.per_bs[1]).first(4);  // BS 1 serves one user
    auto p = init_params(cfg, RngStream(2));
    const auto base = loss_and_grad(p, cfg, scn, batch, 1, peers);

    const auto& out = p.layout.layers[kOutputLayer];
    std::vector<std::size_t> padded_rows;
    for (std::size_t a = 0; a < cfg.n_t; ++a)
        for (std::size_t part = 0; part < 2; ++part) padded_rows.push_back(a * cfg.k_max * 2 + 1 * 2 + part);
    for (auto r : padded_rows) {
        for (std::size_t i = 0; i < out.in; ++i) {
            CHECK(base.grad[out.offset + i * out.out + r] == 0.0);
            p.values[out.offset + i * out.out + r] = 0.0;
        }
        CHECK(base.grad[out.bias_offset() + r] == 0.0);
        p.values[out.bias_offset() + r] = 0.0;
    }
    const auto zeroed = loss_and_grad(p, cfg, scn, batch, 1, peers);
    CHECK(zeroed.loss == base.loss);
    CHECK(zeroed.grad == base.grad);
}

TEST_CASE("loss_and_grad is deterministic and validates inputs") {
    const NetConfig cfg{2, 2, 4, 0.5};
    const auto scn = tiny_scenario();
    const auto data = generate_dataset(scn, 10, 13);
    std::mt19937_64 g(1);
    const auto peers = random_peers(g, scn, 3);
    const auto p = init_params(cfg, RngStream(3));
    const auto batch = std::span(data.per_bs[0]).first(3);
    const auto a = loss_and_grad(p, cfg, scn, batch, 0, peers);
    const auto b = loss_and_grad(p, cfg, scn, batch, 0, peers);
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);
    CHECK(a.max_power <= scn.p_t + 1e-9);
    CHECK_THROWS(loss_and_grad(p, cfg, scn, std::span<const ChannelSample>(), 0, {}));
    CHECK_THROWS(loss_and_grad(p, cfg, scn, batch, 0, std::span(peers).first(2)));
}

TEST_CASE("Adam") {
    SUBCASE("first step against a hand computation") {
        // With m = (1-b1) g and v = (1-b2) g^2 the bias-corrected step is
        // lr * g / (|g| + eps): -lr * sign(g) up to eps.
        ModelParams p{{}, {1.0, -2.0, 0.5}};
        AdamState s;
        s.m.assign(3, 0.0);
        s.v.assign(3, 0.0);
        s.lr = 0.1;
        const std::vector<double> grad = {0.5, -4.0, 1e-3};
        adam_step(p, grad, s);
        CHECK(s.step == 1);
        const double expected[] = {1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8),
                                   0.5 - 0.1 * 1e-3 / (1e-3 + 1e-8)};
        for (int i = 0; i < 3; ++i) CHECK(p.values[static_cast<std::size_t>(i)] == doctest::Approx(expected[i]).epsilon(1e-12));
        CHECK(s.m[1] == doctest::Approx(-0.4));
        CHECK(s.v[1] == doctest::Approx(0.016));
    }
    SUBCASE("second step uses bias correction") {
        ModelParams p{{}, {0.0}};
        AdamState s;
        s.m = {0.0};
        s.v = {0.0};
        s.lr = 0.01;
        adam_step(p, std::vector<double>{1.0}, s);
        adam_step(p, std::vector<double>{3.0}, s);
        const double m = 0.9 * 0.1 + 0.1 * 3.0, v = 0.999 * 0.001 + 0.001 * 9.0;
        const double m_hat = m / (1 - 0.81), v_hat = v / (1 - 0.999 * 0.999);
        CHECK(p.values[0] == doctest::Approx(-0.01 / (1.0 + 1e-8) - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
    }
    SUBCASE("zero gradient leaves params unchanged") {
        ModelParams p{{}, {1.0, 2.0}};
        auto s = AdamState::for_params(p);
        adam_step(p, std::vector<double>{0.0, 0.0}, s);
        CHECK(p.values == ParamVector{1.0, 2.0});
        CHECK(s.step == 1);
    }
    SUBCASE("deterministic") {
        ModelParams p1{{}, {0.3, -0.1}}, p2 = p1;
        auto s1 = AdamState::for_params(p1), s2 = s1;
        const std::vector<double> grad = {0.2, 0.7};
        adam_step(p1, grad, s1);
        adam_step(p2, grad, s2);
        CHECK(p1 == p2);
        CHECK(s1 == s2);
    }
    SUBCASE("length mismatch") {
        ModelParams p{{}, {1.0}};
        auto s = AdamState::for_params(p);
        CHECK_THROWS(adam_step(p, std::vector<double>{1.0, 2.0}, s));
    }
}

TEST_CASE("parameter and optimizer serialization") {
    const auto dir = temp_dir("io");
    const NetConfig cfg{3, 2, 5, 0.5};
    const auto p = init_params(cfg, RngStream(77));
    write_params(dir / "p.bin", p, cfg);
    NetConfig back_cfg;
    const auto back = read_params(dir / "p.bin", &back_cfg);
    CHECK(back == p);
    CHECK(back_cfg == cfg);

    auto s = AdamState::for_params(p, 3e-4);
    s.step = 17;
    s.m[3] = 0.25;
    s.v[4] = 1e-9;
    write_adam(dir / "a.bin", s);
    CHECK(read_adam(dir / "a.bin") == s);

    SUBCASE("bad magic") {
        std::ofstream(dir / "bad.bin", std::ios::binary) << "NOTMAGIC....";
        CHECK_THROWS_AS(read_params(dir / "bad.bin"), FormatError);
    }
    SUBCASE("truncated body") {
        const auto size = fs::file_size(dir / "p.bin");
        fs::copy_file(dir / "p.bin", dir / "t.bin");
        fs::resize_file(dir / "t.bin", size - 8);
        CHECK_THROWS_AS(read_params(dir / "t.bin"), FormatError);
    }
    SUBCASE("wrong kind") { CHECK_THROWS_AS(read_params(dir / "a.bin"), FormatError); }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_params(dir / "nope.bin"), DataError); }
    fs::remove_all(dir);
}
