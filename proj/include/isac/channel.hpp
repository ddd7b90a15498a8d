#pragma once

#include <cstdint>
#include <random>

#include "isac/complex_matrix.hpp"

namespace isac {

/// Uniform linear array geometry.
struct SteeringConfig {
    std::size_t n_elements = 1;
    double element_spacing_wavelengths = 0.5;

    void validate() const;
};

/// Reproducible random stream identified by (seed, stream id).
///
/// An RngStream is a plain value. Every consumer builds its own engine from
/// it, so two calls with equal streams see bit-identical draws no matter
/// which thread makes them. Sub-streams are derived with derive(); the
/// derivation is a fixed hash, so stream trees are stable across runs.
class RngStream {
public:
    using Engine = std::mt19937_64;

    constexpr RngStream(std::uint64_t seed = 0, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    Engine engine() const;
    RngStream derive(std::uint64_t tag) const;
    RngStream derive(std::uint64_t a, std::uint64_t b) const { return derive(a).derive(b); }

    friend bool operator==(const RngStream&, const RngStream&) = default;

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// a(theta): entry i = exp(j 2 pi d i sin(theta)). theta must lie in [-pi/2, pi/2].
ComplexMatrix steering_vector(double theta, const SteeringConfig& cfg);

/// beta * a(theta) * b(theta)^H, N_R x N_T.
ComplexMatrix target_response(cplx beta, double theta, const SteeringConfig& rx_cfg,
                              const SteeringConfig& tx_cfg);

/// Rician matrix with one random LoS phase per matrix; K >= 1e12 is treated as pure LoS.
ComplexMatrix sample_rician(const RngStream& rng, std::size_t rows, std::size_t cols,
                            double k_factor, double mean_power);

/// beta ~ CN(0, alpha_s).
cplx sample_rcs(const RngStream& rng, double alpha_s);

inline constexpr double kPureLosKFactor = 1e12;

}  // namespace isac
