#include "isac/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace isac {

void SteeringConfig::validate() const {
    if (n_elements < 1) throw std::domain_error("steering: n_elements must be >= 1");
    if (!(element_spacing_wavelengths > 0.0) || !std::isfinite(element_spacing_wavelengths))
        throw std::domain_error("steering: element spacing must be positive");
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

RngStream::Engine RngStream::engine() const {
    return Engine(splitmix64(seed_ ^ splitmix64(stream_ + 0x2545f4914f6cdd1dULL)));
}

RngStream RngStream::derive(std::uint64_t tag) const {
    return RngStream(seed_, splitmix64(stream_ ^ splitmix64(tag + 0x632be59bd9b4e019ULL)));
}

ComplexMatrix steering_vector(double theta, const SteeringConfig& cfg) {
    cfg.validate();
    constexpr double half_pi = std::numbers::pi / 2.0;
    if (!(theta >= -half_pi && theta <= half_pi))
        throw std::domain_error("steering_vector: theta outside [-pi/2, pi/2]");
    const double step = 2.0 * std::numbers::pi * cfg.element_spacing_wavelengths * std::sin(theta);
    ComplexMatrix a(cfg.n_elements, 1);
    for (std::size_t i = 0; i < cfg.n_elements; ++i) a[i] = std::polar(1.0, step * static_cast<double>(i));
    return a;
}

ComplexMatrix target_response(cplx beta, double theta, const SteeringConfig& rx_cfg,
                              const SteeringConfig& tx_cfg) {
    const auto a = steering_vector(theta, rx_cfg);
    const auto b = steering_vector(theta, tx_cfg);
    ComplexMatrix g(a.size(), b.size());
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < b.size(); ++c) g(r, c) = beta * a[r] * std::conj(b[c]);
    return g;
}

ComplexMatrix sample_rician(const RngStream& rng, std::size_t rows, std::size_t cols,
                            double k_factor, double mean_power) {
    if (!(k_factor >= 0.0)) throw std::domain_error("sample_rician: k_factor must be >= 0");
    if (!(mean_power > 0.0) || !std::isfinite(mean_power))
        throw std::domain_error("sample_rician: mean_power must be positive");

    auto eng = rng.engine();
    std::uniform_real_distribution<double> phase_dist(-std::numbers::pi, std::numbers::pi);
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));

    const cplx los = std::polar(1.0, phase_dist(eng));
    const bool pure_los = k_factor >= kPureLosKFactor;
    const double los_coef = pure_los ? 1.0 : std::sqrt(k_factor / (k_factor + 1.0));
    const double nlos_coef = pure_los ? 0.0 : std::sqrt(1.0 / (k_factor + 1.0));
    const double amp = std::sqrt(mean_power);

    ComplexMatrix h(rows, cols);
    for (auto& z : h.data()) {
        const double re = gauss(eng);
        const double im = gauss(eng);
        z = amp * (los_coef * los + nlos_coef * cplx{re, im});
    }
    return h;
}

cplx sample_rcs(const RngStream& rng, double alpha_s) {
    if (!(alpha_s > 0.0) || !std::isfinite(alpha_s))
        throw std::domain_error("sample_rcs: alpha_s must be positive");
    auto eng = rng.engine();
    std::normal_distribution<double> gauss(0.0, std::sqrt(alpha_s / 2.0));
    const double re = gauss(eng);
    const double im = gauss(eng);
    return {re, im};
}

}  // namespace isac
