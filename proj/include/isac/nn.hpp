#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isac/channel.hpp"
#include "isac/complex_matrix.hpp"
#include "isac/metrics.hpp"

namespace isac {

/// Dual-branch beamforming network dimensions.
///
/// The communication branch sees the zero-padded direct channels of all
/// k_max users, the sensing branch sees conj(beta) b(theta). Both branches
/// are FC+ReLU of width `hidden`; their outputs are concatenated and fed
/// through a fusion FC+ReLU and a linear output layer of size n_t*k_max*2.
struct NetConfig {
    std::size_t n_t = 8;
    std::size_t k_max = 4;
    std::size_t hidden = 256;
    double element_spacing = 0.5;

    std::size_t comm_in_dim() const { return n_t * k_max * 2; }
    std::size_t sens_in_dim() const { return n_t * 2; }
    std::size_t out_dim() const { return n_t * k_max * 2; }

    void validate() const;
    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Layer order: comm branch, sens branch, fusion, output. Each layer stores
/// its weight (out x in, column-major) followed by its bias (out).
struct LayerShape {
    std::string name;
    std::size_t out = 0;
    std::size_t in = 0;
    std::size_t offset = 0;

    std::size_t weight_count() const { return out * in; }
    std::size_t param_count() const { return out * in + out; }
    std::size_t bias_offset() const { return offset + weight_count(); }
    std::size_t end() const { return offset + param_count(); }
    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

struct ParamLayout {
    std::vector<LayerShape> layers;
    std::size_t total = 0;

    static ParamLayout for_config(const NetConfig& cfg);
    friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

/// Parameter-sized storage. The fixed base alignment keeps Eigen's kernel
/// choice, and with it every rounding, independent of where the heap puts it.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

enum Layer : std::size_t { kCommLayer = 0, kSensLayer = 1, kFusionLayer = 2, kOutputLayer = 3 };

struct ModelParams {
    ParamLayout layout;
    ParamVector values;

    std::size_t size() const { return values.size(); }
    bool all_finite() const;
    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

ModelParams zero_params(const NetConfig& cfg);

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const NetConfig& cfg, const RngStream& rng);

struct AdamState {
    ParamVector m;
    ParamVector v;
    std::uint64_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const ModelParams& p, double lr = 1e-4);
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

void adam_step(ModelParams& params, std::span<const double> grad, AdamState& state);

// ---------------------------------------------------------------------------
// Inputs

/// Network inputs, one column per sample.
struct FeatureMatrix {
    Eigen::MatrixXd comm;
    Eigen::MatrixXd sens;

    std::size_t count() const { return static_cast<std::size_t>(comm.cols()); }
};

FeatureMatrix build_features(const NetConfig& cfg, std::span<const ChannelSample> samples);

// ---------------------------------------------------------------------------
// Forward / backward

/// Rescale to ||W||_F^2 = p_t whenever ||W_raw||_F > 0; the zero matrix maps to itself.
ComplexMatrix project_power(const ComplexMatrix& w_raw, double p_t);

/// Pull dL/dW back through project_power to dL/dW_raw (real-pair convention).
ComplexMatrix project_power_backward(const ComplexMatrix& w_raw, double p_t, const ComplexMatrix& grad_w);

/// Unprojected network output for every column of `features`, reshaped to (n_t x k_max).
std::vector<ComplexMatrix> raw_outputs(const ModelParams& params, const NetConfig& cfg,
                                       const FeatureMatrix& features);

ComplexMatrix forward(const ModelParams& params, const NetConfig& cfg, const ChannelSample& sample,
                      std::size_t k_m, double p_t);

/// Beamformers for every column of `features`, truncated to k_m users and projected.
std::vector<ComplexMatrix> forward_batch(const ModelParams& params, const NetConfig& cfg,
                                         const FeatureMatrix& features, std::size_t k_m, double p_t);

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
    /// Largest ||W||_F^2 produced in the batch.
    double max_power = 0.0;
};

/// Per-sample quantities that stay fixed while BS m trains.
struct SampleTerms {
    const BsChannelView* view = nullptr;
    const Interference* ext = nullptr;
};

/// Core of loss_and_grad with cached views and interference.
LossGrad batch_loss_and_grad(const ModelParams& params, const NetConfig& cfg, const Scenario& scn,
                             std::size_t m, const FeatureMatrix& features,
                             std::span<const SampleTerms> terms, bool want_grad = true);

/// Mean of l_m = -(rho R_c + (1 - rho) R_s) over the batch and its exact gradient.
/// peers[b] holds the (frozen) beamformers of every BS for batch[b]; entry m is ignored.
LossGrad loss_and_grad(const ModelParams& params, const NetConfig& cfg, const Scenario& scn,
                       std::span<const ChannelSample> batch, std::size_t m,
                       std::span<const BeamformerSet> peers);

// ---------------------------------------------------------------------------
// Serialization: magic, u32 header length, JSON header, then u64-length-prefixed
// little-endian float64 arrays.

void write_params(const std::filesystem::path& path, const ModelParams& params, const NetConfig& cfg);
ModelParams read_params(const std::filesystem::path& path, NetConfig* cfg_out = nullptr);

void write_adam(const std::filesystem::path& path, const AdamState& state);
AdamState read_adam(const std::filesystem::path& path);

}  // namespace isac
