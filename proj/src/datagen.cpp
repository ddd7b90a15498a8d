#include "isac/datagen.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "binary_io.hpp"
#include "isac/error.hpp"

namespace isac {

using json = nlohmann::json;

namespace {

constexpr char kDatasetMagic[8] = {'I', 'S', 'A', 'C', 'D', 'S', 'E', 'T'};

enum StreamTag : std::uint64_t { kDirect = 1, kCross = 2, kTheta = 3, kBeta = 4, kRadarCross = 5 };

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

cplx to_f32(cplx z) { return {to_f32(z.real()), to_f32(z.imag())}; }

void quantize(ComplexMatrix& m) {
    for (auto& z : m.data()) z = to_f32(z);
}

// Rounds theta to float32 without leaving [-pi/2, pi/2].
double quantize_angle(double theta) {
    constexpr float half_pi = static_cast<float>(std::numbers::pi / 2.0);
    float f = static_cast<float>(theta);
    if (static_cast<double>(f) > std::numbers::pi / 2.0) f = std::nextafter(half_pi, 0.0f);
    if (static_cast<double>(f) < -std::numbers::pi / 2.0) f = -std::nextafter(half_pi, 0.0f);
    return static_cast<double>(f);
}

ChannelSample draw_sample(const Scenario& scn, std::size_t m, const RngStream& base) {
    const auto& cell = scn.cells[m];
    const std::size_t n_cells = scn.num_cells();
    ChannelSample s;
    for (std::size_t k = 0; k < cell.users; ++k)
        s.comm_direct.push_back(sample_rician(base.derive(kDirect, k), cell.n_t, 1, scn.rician_k, 1.0));
    s.comm_cross.resize(n_cells);
    s.radar_cross.resize(n_cells);
    for (std::size_t i = 0; i < n_cells; ++i) {
        if (i == m) continue;
        for (std::size_t k = 0; k < cell.users; ++k)
            s.comm_cross[i].push_back(sample_rician(base.derive(kCross, i * 4096 + k), scn.cells[i].n_t, 1,
                                                    scn.rician_k, scn.cross_power_ratio));
        s.radar_cross[i] = sample_rician(base.derive(kRadarCross, i), cell.n_r, scn.cells[i].n_t, scn.rician_k,
                                         scn.cross_power_ratio);
    }
    auto eng = base.derive(kTheta).engine();
    std::uniform_real_distribution<double> angle(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
    s.target_theta = quantize_angle(angle(eng));
    s.target_beta = to_f32(sample_rcs(base.derive(kBeta), scn.alpha_s));

    for (auto& h : s.comm_direct) quantize(h);
    for (auto& row : s.comm_cross)
        for (auto& h : row) quantize(h);
    for (auto& g : s.radar_cross) quantize(g);
    return s;
}

void put_matrix(std::string& buf, const ComplexMatrix& m) {
    for (const auto& z : m.data()) {
        detail::put<float>(buf, static_cast<float>(z.real()));
        detail::put<float>(buf, static_cast<float>(z.imag()));
    }
}

ComplexMatrix get_matrix(detail::Reader& r, std::size_t rows, std::size_t cols) {
    ComplexMatrix m(rows, cols);
    for (auto& z : m.data()) {
        const float re = r.get<float>();
        const float im = r.get<float>();
        z = {static_cast<double>(re), static_cast<double>(im)};
    }
    return m;
}

}  // namespace

std::string_view to_string(ScenarioVariant v) {
    switch (v) {
        case ScenarioVariant::homogeneous: return "homogeneous";
        case ScenarioVariant::heterogeneous: return "heterogeneous";
        case ScenarioVariant::equal_ue_homogeneous: return "equal_ue_homogeneous";
        case ScenarioVariant::equal_ue_heterogeneous: return "equal_ue_heterogeneous";
    }
    return "unknown";
}

const std::vector<ScenarioVariant>& all_variants() {
    static const std::vector<ScenarioVariant> v = {ScenarioVariant::homogeneous, ScenarioVariant::heterogeneous,
                                                   ScenarioVariant::equal_ue_homogeneous,
                                                   ScenarioVariant::equal_ue_heterogeneous};
    return v;
}

std::optional<ScenarioVariant> parse_variant(std::string_view name) {
    for (auto v : all_variants())
        if (to_string(v) == name) return v;
    return std::nullopt;
}

Scenario build_paper_scenario(ScenarioVariant variant) {
    const bool equal_ue =
        variant == ScenarioVariant::equal_ue_homogeneous || variant == ScenarioVariant::equal_ue_heterogeneous;
    const bool hetero =
        variant == ScenarioVariant::heterogeneous || variant == ScenarioVariant::equal_ue_heterogeneous;
    const std::size_t users[3] = {2, equal_ue ? 2u : 3u, equal_ue ? 2u : 4u};
    const double rho_hetero[3] = {0.2, 0.6, 0.8};

    Scenario scn;
    for (std::size_t m = 0; m < 3; ++m) scn.cells.push_back({8, 8, users[m], hetero ? rho_hetero[m] : 0.5});
    scn.rician_k = 3.0;
    return scn;
}

Scenario with_antennas(Scenario scn, std::size_t n) {
    for (auto& c : scn.cells) c.n_t = c.n_r = n;
    return scn;
}

json scenario_to_json(const Scenario& scn) {
    json cells = json::array();
    for (const auto& c : scn.cells)
        cells.push_back({{"n_t", c.n_t}, {"n_r", c.n_r}, {"users", c.users}, {"rho", c.rho}});
    return {{"cells", cells},
            {"sigma_c_sq", scn.sigma_c_sq},
            {"sigma_s_sq", scn.sigma_s_sq},
            {"p_t", scn.p_t},
            {"alpha_s", scn.alpha_s},
            {"rician_k", scn.rician_k},
            {"cross_power_ratio", scn.cross_power_ratio},
            {"element_spacing", scn.element_spacing}};
}

Scenario scenario_from_json(const json& j) {
    Scenario scn;
    try {
        for (const auto& c : j.at("cells"))
            scn.cells.push_back({c.at("n_t"), c.at("n_r"), c.at("users"), c.at("rho")});
        scn.sigma_c_sq = j.at("sigma_c_sq");
        scn.sigma_s_sq = j.at("sigma_s_sq");
        scn.p_t = j.at("p_t");
        scn.alpha_s = j.at("alpha_s");
        scn.rician_k = j.at("rician_k");
        scn.cross_power_ratio = j.at("cross_power_ratio");
        scn.element_spacing = j.at("element_spacing");
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad scenario description: ") + e.what());
    }
    return scn;
}

Dataset generate_dataset(const Scenario& scn, std::size_t n_samples, std::uint64_t seed) {
    scn.validate();
    if (n_samples < 10) throw ConfigError("need at least 10 samples per BS for a 90/10 split");
    Dataset d{scn, seed, n_samples, n_samples * 9 / 10, {}};
    d.per_bs.resize(scn.num_cells());
    const RngStream root(seed);
    for (std::size_t m = 0; m < scn.num_cells(); ++m) {
        d.per_bs[m].reserve(n_samples);
        for (std::size_t s = 0; s < n_samples; ++s) d.per_bs[m].push_back(draw_sample(scn, m, root.derive(s, m)));
    }
    return d;
}

std::filesystem::path dataset_file(const std::filesystem::path& dir, std::size_t m) {
    return dir / ("bs" + std::to_string(m) + ".ds");
}

std::filesystem::path default_dataset_dir(const std::filesystem::path& root, ScenarioVariant v, std::uint64_t seed) {
    return root / std::string(to_string(v)) / std::to_string(seed);
}

// Body layout per sample, all float32 (re, im) pairs:
//   direct h_{m,m,k} for k = 0..K_m-1 (N_T(m) each)
//   cross h_{i,m,k} for i != m ascending, then k (N_T(i) each)
//   (theta, 0), beta
//   G_{n,m} for n != m ascending (N_R(m) x N_T(n), row-major)
void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
    const auto& scn = data.scenario;
    std::vector<std::size_t> users;
    for (const auto& c : scn.cells) users.push_back(c.users);
    for (std::size_t m = 0; m < scn.num_cells(); ++m) {
        const json header = {{"format", "isac-dataset"},
                             {"version", kDatasetVersion},
                             {"bs", m},
                             {"n_samples", data.n_samples},
                             {"n_train", data.n_train},
                             {"users", users},
                             {"master_seed", data.seed},
                             {"scenario", scenario_to_json(scn)}};
        std::string buf(kDatasetMagic, sizeof(kDatasetMagic));
        const auto text = header.dump();
        detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(text.size()));
        buf += text;
        for (const auto& s : data.per_bs[m]) {
            check_sample(scn, s, m);
            for (const auto& h : s.comm_direct) put_matrix(buf, h);
            for (std::size_t i = 0; i < scn.num_cells(); ++i)
                for (const auto& h : s.comm_cross[i]) put_matrix(buf, h);
            detail::put<float>(buf, static_cast<float>(s.target_theta));
            detail::put<float>(buf, 0.0f);
            detail::put<float>(buf, static_cast<float>(s.target_beta.real()));
            detail::put<float>(buf, static_cast<float>(s.target_beta.imag()));
            for (std::size_t n = 0; n < scn.num_cells(); ++n)
                if (n != m) put_matrix(buf, s.radar_cross[n]);
        }
        detail::spit(dataset_file(dir, m), buf);
    }
}

namespace {

struct BsFile {
    json header;
    std::vector<ChannelSample> samples;
};

BsFile read_bs_file(const std::filesystem::path& path, std::size_t expected_m) {
    if (!std::filesystem::exists(path)) throw DataError("missing dataset file " + path.string());
    detail::Reader r(detail::slurp(path));
    if (r.get_bytes(sizeof(kDatasetMagic)) != std::string_view(kDatasetMagic, sizeof(kDatasetMagic)))
        throw FormatError(path.string() + ": not a dataset file (bad magic)");
    BsFile f;
    const auto len = r.get<std::uint32_t>();
    try {
        f.header = json::parse(r.get_bytes(len));
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": corrupt header: " + e.what());
    }
    if (!f.header.is_object() || f.header.value("format", "") != "isac-dataset")
        throw FormatError(path.string() + ": corrupt header");
    if (f.header.value("version", -1) != kDatasetVersion)
        throw VersionError(path.string() + ": dataset version " + f.header.value("version", json(-1)).dump() +
                           " is not supported (expected " + std::to_string(kDatasetVersion) + ")");

    Scenario scn;
    std::size_t n_samples = 0;
    try {
        scn = scenario_from_json(f.header.at("scenario"));
        n_samples = f.header.at("n_samples");
        if (f.header.at("bs").get<std::size_t>() != expected_m) throw FormatError(path.string() + ": BS index mismatch");
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": corrupt header: " + e.what());
    }
    const std::size_t m = expected_m;
    if (m >= scn.num_cells()) throw FormatError(path.string() + ": BS index outside scenario");
    const auto& cell = scn.cells[m];

    f.samples.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        ChannelSample cs;
        for (std::size_t k = 0; k < cell.users; ++k) cs.comm_direct.push_back(get_matrix(r, cell.n_t, 1));
        cs.comm_cross.resize(scn.num_cells());
        cs.radar_cross.resize(scn.num_cells());
        for (std::size_t i = 0; i < scn.num_cells(); ++i) {
            if (i == m) continue;
            for (std::size_t k = 0; k < cell.users; ++k) cs.comm_cross[i].push_back(get_matrix(r, scn.cells[i].n_t, 1));
        }
        cs.target_theta = r.get<float>();
        r.get<float>();
        const float br = r.get<float>();
        const float bi = r.get<float>();
        cs.target_beta = {br, bi};
        for (std::size_t n = 0; n < scn.num_cells(); ++n)
            if (n != m) cs.radar_cross[n] = get_matrix(r, cell.n_r, scn.cells[n].n_t);
        f.samples.push_back(std::move(cs));
    }
    if (!r.at_end()) throw FormatError(path.string() + ": body longer than the declared sample count");
    return f;
}

}  // namespace

Dataset read_dataset(const std::filesystem::path& dir) {
    auto first = read_bs_file(dataset_file(dir, 0), 0);
    Dataset d;
    try {
        d.scenario = scenario_from_json(first.header.at("scenario"));
        d.seed = first.header.at("master_seed");
        d.n_samples = first.header.at("n_samples");
        d.n_train = first.header.at("n_train");
    } catch (const json::exception& e) {
        throw FormatError(std::string("corrupt dataset header: ") + e.what());
    }
    if (d.n_train > d.n_samples) throw FormatError("n_train exceeds n_samples");
    d.per_bs.push_back(std::move(first.samples));
    for (std::size_t m = 1; m < d.scenario.num_cells(); ++m) {
        auto f = read_bs_file(dataset_file(dir, m), m);
        if (f.header.at("scenario") != scenario_to_json(d.scenario) ||
            f.header.at("n_samples").get<std::size_t>() != d.n_samples ||
            f.header.at("master_seed").get<std::uint64_t>() != d.seed)
            throw FormatError("dataset files in " + dir.string() + " disagree");
        d.per_bs.push_back(std::move(f.samples));
    }
    return d;
}

}  // namespace isac
