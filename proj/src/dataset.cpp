#include "csra/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <openssl/evp.h>

#include "csra/error.hpp"

namespace csra {

std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(sseq);
}

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;

int CohortDataset::variable_index(const std::string& name) const {
    auto it = std::find(variable_names.begin(), variable_names.end(), name);
    if (it == variable_names.end()) throw UsageError("unknown variable '" + name + "'");
    return static_cast<int>(it - variable_names.begin());
}

void CohortDataset::validate() const {
    if (n_trajectories < 1 || n_timesteps < 1 || n_variables < 1)
        throw DataError("dataset dimensions must be positive");
    const auto ntd = static_cast<std::size_t>(n_trajectories) * n_timesteps * n_variables;
    if (values.size() != ntd) throw DataError("values: expected " + std::to_string(ntd) + " floats");
    if (variable_names.size() != static_cast<std::size_t>(n_variables))
        throw DataError("variable_names length differs from n_variables");
    if (schema.variable_count() != n_variables) throw DataError("schema does not cover n_variables");
    if (outcomes.empty()) throw DataError("at least one outcome is required");
    if (labels.size() != static_cast<std::size_t>(n_trajectories) * outcomes.size())
        throw DataError("labels: size differs from [N, n_outcomes]");
    if (!events.empty() &&
        events.size() != static_cast<std::size_t>(n_trajectories) * n_timesteps * outcomes.size())
        throw DataError("events: size differs from [N, T, n_outcomes]");
    for (auto l : labels)
        if (l > 1) throw DataError("labels must be 0 or 1");
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i])) {
            const auto d = i % n_variables;
            const auto t = (i / n_variables) % n_timesteps;
            const auto n = i / (static_cast<std::size_t>(n_variables) * n_timesteps);
            throw DataError("non-finite value at (n=" + std::to_string(n) + ", t=" + std::to_string(t) +
                            ", d=" + std::to_string(d) + ")");
        }
}

nlohmann::json CohortDataset::meta() const {
    return {{"format_version", 1},
            {"n_trajectories", n_trajectories},
            {"n_timesteps", n_timesteps},
            {"n_variables", n_variables},
            {"variable_names", variable_names},
            {"resolution_hours", resolution_hours},
            {"schema", schema.to_json()},
            {"outcomes", outcomes},
            {"dtype", "f32"},
            {"byte_order", "little"},
            {"layout", "row_major_NTD"}};
}

namespace {

template <typename T>
void write_raw(const fs::path& path, const std::vector<T>& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!out) throw DataError("write failed: " + path.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != count * sizeof(T))
        throw DataError(path.filename().string() + ": expected " + std::to_string(count * sizeof(T)) +
                        " bytes, found " + std::to_string(bytes));
    std::vector<T> data(count);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    return data;
}

template <typename T>
T meta_field(const nlohmann::json& meta, const char* key) {
    if (!meta.contains(key)) throw DataError(std::string("meta.json: missing key '") + key + "'");
    try {
        return meta.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw DataError(std::string("meta.json: bad value for '") + key + "'");
    }
}

}  // namespace

void save_dataset(const CohortDataset& ds, const fs::path& dir, bool force) {
    ds.validate();
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw UsageError("output directory " + dir.string() + " is not empty (use --force)");
    fs::create_directories(dir);
    std::ofstream meta(dir / "meta.json");
    meta << ds.meta().dump(2) << "\n";
    if (!meta) throw DataError("cannot write meta.json");
    write_raw(dir / "values.bin", ds.values);
    write_raw(dir / "labels.bin", ds.labels);
    if (ds.has_events())
        write_raw(dir / "events.bin", ds.events);
    else if (fs::exists(dir / "events.bin"))
        fs::remove(dir / "events.bin");
}

CohortDataset load_dataset(const fs::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw DataError("cannot open " + (dir / "meta.json").string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("meta.json: ") + e.what());
    }
    if (meta_field<int>(meta, "format_version") != 1) throw DataError("meta.json: unsupported format_version");
    if (meta_field<std::string>(meta, "dtype") != "f32" || meta_field<std::string>(meta, "byte_order") != "little" ||
        meta_field<std::string>(meta, "layout") != "row_major_NTD")
        throw DataError("meta.json: only f32 little-endian row_major_NTD is supported");

    CohortDataset ds;
    ds.n_trajectories = meta_field<int>(meta, "n_trajectories");
    ds.n_timesteps = meta_field<int>(meta, "n_timesteps");
    ds.n_variables = meta_field<int>(meta, "n_variables");
    if (ds.n_trajectories < 1 || ds.n_timesteps < 1 || ds.n_variables < 1)
        throw DataError("meta.json: dimensions must be positive");
    ds.variable_names = meta_field<std::vector<std::string>>(meta, "variable_names");
    ds.resolution_hours = meta_field<double>(meta, "resolution_hours");
    ds.outcomes = meta_field<std::vector<std::string>>(meta, "outcomes");
    try {
        ds.schema = SystemSchema::from_json(meta.at("schema"), ds.n_variables);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("meta.json: bad schema: ") + e.what());
    }
    const auto n = static_cast<std::size_t>(ds.n_trajectories);
    const auto t = static_cast<std::size_t>(ds.n_timesteps);
    ds.values = read_raw<float>(dir / "values.bin", n * t * static_cast<std::size_t>(ds.n_variables));
    ds.labels = read_raw<std::uint8_t>(dir / "labels.bin", n * ds.outcomes.size());
    if (fs::exists(dir / "events.bin")) ds.events = read_raw<std::uint8_t>(dir / "events.bin", n * t * ds.outcomes.size());
    ds.validate();
    return ds;
}

std::string dataset_fingerprint(const fs::path& dir) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    for (const char* name : {"meta.json", "values.bin", "labels.bin", "events.bin"}) {
        const auto path = dir / name;
        if (!fs::exists(path)) continue;
        std::ifstream in(path, std::ios::binary);
        EVP_DigestUpdate(ctx.get(), name, std::char_traits<char>::length(name));
        while (in) {
            in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return hex.str();
}

// ---- generator ------------------------------------------------------------------------------

namespace {

// Band profile of a system's intrinsic fluctuation.
enum class Profile { Slow, Mid, Fast };

struct SystemProfile {
    Profile profile;
    double coupling;
    double amplitude;
};

SystemProfile profile_for(int s, double coupling_scale) {
    switch (s % 3) {
        case 0: return {Profile::Slow, 1.0 * coupling_scale, 0.35};
        case 1: return {Profile::Mid, 0.7 * coupling_scale, 0.35};
        default: return {Profile::Fast, 0.5 * coupling_scale, 0.45};
    }
}

}  // namespace

CohortDataset generate_synthetic_cohort(std::uint64_t seed, int n, int t, const SystemSchema& schema,
                                        const GeneratorOptions& opt) {
    if (n < 1) throw UsageError("generator: n must be at least 1");
    if (t <= opt.window + opt.max_horizon)
        throw UsageError("generator: t must exceed window + horizon (" + std::to_string(opt.window + opt.max_horizon) +
                         ")");
    if (schema.system_count() < 1) throw SchemaError("generator: empty schema");

    const int d = schema.variable_count();
    CohortDataset ds;
    ds.n_trajectories = n;
    ds.n_timesteps = t;
    ds.n_variables = d;
    ds.schema = schema;
    ds.resolution_hours = opt.resolution_hours;
    ds.outcomes = {"deterioration"};
    for (int v = 0; v < d; ++v) {
        const auto& sys = schema[schema.system_of(v)];
        const auto pos = std::find(sys.variable_indices.begin(), sys.variable_indices.end(), v) -
                         sys.variable_indices.begin();
        ds.variable_names.push_back(sys.id + "_" + std::to_string(pos));
    }
    ds.values.assign(static_cast<std::size_t>(n) * t * d, 0.0f);
    ds.labels.assign(static_cast<std::size_t>(n), 0);
    ds.events.assign(static_cast<std::size_t>(n) * t, 0);

    auto rng = rng_stream(seed, 0x5e7e);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<double> severity(static_cast<std::size_t>(t));
    for (int i = 0; i < n; ++i) {
        // Latent severity: bounded random walk with a per-patient drift.
        const double drift = 0.012 * gauss(rng);
        double s = 0.1 + 0.45 * unif(rng);
        for (int step = 0; step < t; ++step) {
            if (step > 0) s = std::clamp(s + drift + 0.03 * gauss(rng), 0.0, 1.0);
            severity[static_cast<std::size_t>(step)] = s;
        }
        bool outcome = false;
        for (int step = 0; step < t; ++step) {
            const bool ev = severity[static_cast<std::size_t>(step)] > opt.event_threshold;
            ds.events[static_cast<std::size_t>(i) * t + step] = ev ? 1 : 0;
            if (ev && step >= t / 2) outcome = true;
        }
        ds.labels[static_cast<std::size_t>(i)] = outcome ? 1 : 0;

        for (int sys = 0; sys < schema.system_count(); ++sys) {
            const auto prof = profile_for(sys, opt.coupling_scale);
            for (int v : schema[sys].variable_indices) {
                const double loading = 0.8 + 0.4 * unif(rng);
                double ar = prof.amplitude * gauss(rng);
                const double period = prof.profile == Profile::Mid ? 5.0 + 3.0 * unif(rng) : 2.0 + unif(rng);
                const double phase = 2.0 * std::numbers::pi * unif(rng);
                const double osc_amp = prof.amplitude * (0.5 + unif(rng));
                for (int step = 0; step < t; ++step) {
                    double band;
                    if (prof.profile == Profile::Slow) {
                        if (step > 0) ar = 0.9 * ar + prof.amplitude * std::sqrt(1.0 - 0.81) * gauss(rng);
                        band = ar;
                    } else {
                        band = osc_amp * std::sin(2.0 * std::numbers::pi * step / period + phase);
                    }
                    const double x = prof.coupling * loading * severity[static_cast<std::size_t>(step)] + band +
                                     opt.observation_noise * gauss(rng);
                    ds.values[(static_cast<std::size_t>(i) * t + step) * d + v] = static_cast<float>(x);
                }
            }
        }
    }
    ds.validate();
    return ds;
}

// ---- splits ---------------------------------------------------------------------------------

SplitIndices split_trajectories(int n, std::uint64_t seed, double train_frac, double val_frac) {
    if (n < 1) throw ValidationError("split: need at least one trajectory");
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0 + 1e-12)
        throw ValidationError("split: fractions must be positive and sum to at most 1");
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    auto rng = rng_stream(seed, 5);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::max(1L, std::lround(train_frac * n)));
    const auto n_val = std::min(static_cast<std::size_t>(std::lround(val_frac * n)), ids.size() - n_train);
    SplitIndices out;
    out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
    return out;
}

std::vector<int> subsample(const std::vector<int>& ids, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("data_ratio must be in (0, 1]");
    if (ratio == 1.0 || ids.empty()) return ids;
    const auto keep =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ratio * static_cast<double>(ids.size()))), 1,
                                ids.size());
    std::vector<int> shuffled = ids;
    auto rng = rng_stream(seed, 6);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    shuffled.resize(keep);
    std::sort(shuffled.begin(), shuffled.end());
    return shuffled;
}

nlohmann::json ZScore::to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"std", std::vector<double>(stddev.data(), stddev.data() + stddev.size())}};
}

ZScore ZScore::from_json(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("std").get<std::vector<double>>();
    if (m.size() != s.size()) throw DataError("z-score statistics: mean/std length mismatch");
    ZScore z;
    z.mean = Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size()));
    z.stddev = Eigen::Map<const Vec>(s.data(), static_cast<Eigen::Index>(s.size()));
    return z;
}

ZScore fit_zscore(const CohortDataset& ds, const std::vector<int>& ids) {
    if (ids.empty()) throw ValidationError("z-score: no training trajectories");
    const int d = ds.n_variables;
    Vec sum = Vec::Zero(d), sumsq = Vec::Zero(d);
    double count = 0.0;
    for (int i : ids)
        for (int t = 0; t < ds.n_timesteps; ++t) {
            for (int v = 0; v < d; ++v) sum(v) += ds.value(i, t, v);
            count += 1.0;
        }
    ZScore z;
    z.mean = sum / count;
    for (int i : ids)
        for (int t = 0; t < ds.n_timesteps; ++t)
            for (int v = 0; v < d; ++v) {
                const double e = ds.value(i, t, v) - z.mean(v);
                sumsq(v) += e * e;
            }
    z.stddev = (sumsq / count).cwiseSqrt();
    for (int v = 0; v < d; ++v)
        if (!(z.stddev(v) > 0.0)) {
            std::cerr << "warning: variable " << ds.variable_names[static_cast<std::size_t>(v)]
                      << " has zero training variance; using unit divisor\n";
            z.stddev(v) = 1.0;
        }
    return z;
}

// ---- windows --------------------------------------------------------------------------------

int windows_per_trajectory(int t, const WindowSpec& spec) {
    int horizon = 0;
    if (spec.need_reg) horizon = std::max(horizon, spec.h_reg);
    if (spec.need_cls) horizon = std::max(horizon, spec.h_cls);
    return std::max(0, t - spec.window - horizon + 1);
}

WindowSet WindowSet::select(const std::vector<Eigen::Index>& samples) const {
    WindowSet out;
    out.window = window;
    out.x.resize(static_cast<Eigen::Index>(samples.size()) * window, x.cols());
    out.y_reg.resize(static_cast<Eigen::Index>(samples.size()), y_reg.cols());
    out.y_cls.resize(static_cast<Eigen::Index>(samples.size()), 1);
    for (std::size_t r = 0; r < samples.size(); ++r) {
        const auto i = samples[r];
        const auto row = static_cast<Eigen::Index>(r);
        out.x.middleRows(row * window, window) = x.middleRows(i * window, window);
        out.y_reg.row(row) = y_reg.row(i);
        out.y_cls(row, 0) = y_cls(i, 0);
        out.trajectory_id.push_back(trajectory_id[static_cast<std::size_t>(i)]);
        out.window_start.push_back(window_start[static_cast<std::size_t>(i)]);
    }
    return out;
}

WindowSet window_samples(const CohortDataset& ds, const std::vector<int>& ids, const WindowSpec& spec,
                         const ZScore& z) {
    if (spec.window < 1 || spec.h_reg < 1 || spec.h_cls < 1) throw ValidationError("window and horizons must be >= 1");
    if (spec.outcome < 0 || spec.outcome >= ds.outcome_count()) throw ValidationError("outcome index out of range");
    if (z.mean.size() != ds.n_variables) throw SchemaError("z-score statistics do not match the dataset width");
    const int d = ds.n_variables;
    const int per = windows_per_trajectory(ds.n_timesteps, spec);
    WindowSet out;
    out.window = spec.window;
    if (per == 0) {
        out.skipped_trajectories = static_cast<int>(ids.size());
        if (!ids.empty())
            std::cerr << "warning: " << ids.size() << " trajectories too short for window " << spec.window
                      << " and the requested horizon; skipped\n";
        out.x.resize(0, d);
        out.y_reg.resize(0, d);
        out.y_cls.resize(0, 1);
        return out;
    }
    const Eigen::Index total = static_cast<Eigen::Index>(ids.size()) * per;
    out.x.resize(total * spec.window, d);
    out.y_reg.resize(total, d);
    out.y_cls.resize(total, 1);
    out.trajectory_id.reserve(static_cast<std::size_t>(total));
    out.window_start.reserve(static_cast<std::size_t>(total));
    auto norm = [&](int i, int t, int v) { return (ds.value(i, t, v) - z.mean(v)) / z.stddev(v); };

    Eigen::Index row = 0;
    for (int i : ids)
        for (int start = 0; start < per; ++start, ++row) {
            for (int t = 0; t < spec.window; ++t)
                for (int v = 0; v < d; ++v) out.x(row * spec.window + t, v) = norm(i, start + t, v);
            const int reg_t = start + spec.window + spec.h_reg - 1;
            for (int v = 0; v < d; ++v) out.y_reg(row, v) = reg_t < ds.n_timesteps ? norm(i, reg_t, v) : 0.0;
            double y = 0.0;
            if (ds.has_events()) {
                const int end = std::min(ds.n_timesteps, start + spec.window + spec.h_cls);
                for (int t = start + spec.window; t < end; ++t)
                    if (ds.event(i, t, spec.outcome)) y = 1.0;
            } else {
                y = ds.label(i, spec.outcome);
            }
            out.y_cls(row, 0) = y;
            out.trajectory_id.push_back(i);
            out.window_start.push_back(start);
        }
    return out;
}

}  // namespace csra
