#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "isac/metrics.hpp"

namespace isac {

enum class ScenarioVariant { homogeneous, heterogeneous, equal_ue_homogeneous, equal_ue_heterogeneous };

std::string_view to_string(ScenarioVariant v);
std::optional<ScenarioVariant> parse_variant(std::string_view name);
const std::vector<ScenarioVariant>& all_variants();

/// Three cells, 8x8 arrays, K = (2,3,4) or (2,2,2), rho 0.5 everywhere or (0.2, 0.6, 0.8).
Scenario build_paper_scenario(ScenarioVariant variant);

/// Same scenario with every array resized to n antennas (transmit and receive).
Scenario with_antennas(Scenario scn, std::size_t n);

nlohmann::json scenario_to_json(const Scenario& scn);
Scenario scenario_from_json(const nlohmann::json& j);

/// Jointly generated snapshots: per_bs[m][s] is BS m's view of snapshot s.
/// Samples [0, n_train) are for training, [n_train, n_samples) are held out.
struct Dataset {
    Scenario scenario;
    std::uint64_t seed = 0;
    std::size_t n_samples = 0;
    std::size_t n_train = 0;
    std::vector<std::vector<ChannelSample>> per_bs;

    std::size_t n_eval() const { return n_samples - n_train; }
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Every stored value is float32-representable, so writing and reading back is lossless.
Dataset generate_dataset(const Scenario& scn, std::size_t n_samples, std::uint64_t seed);

inline constexpr int kDatasetVersion = 1;

std::filesystem::path dataset_file(const std::filesystem::path& dir, std::size_t m);

/// Writes dir/bs<m>.ds for every BS.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Conventional location data/<scenario>/<seed>.
std::filesystem::path default_dataset_dir(const std::filesystem::path& root, ScenarioVariant v, std::uint64_t seed);

}  // namespace isac
