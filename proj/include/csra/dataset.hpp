#pragma once

// Cohort storage, the synthetic generator, trajectory-level splits, z-scoring
// and sliding-window extraction.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csra/matrix.hpp"
#include "csra/systems.hpp"

namespace csra {

/// Independent generator for sub-stream `stream` of a run seed. Both 32-bit
/// halves of the seed enter the seed sequence.
std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t stream);

/// Raw (un-normalised) trajectories [N x T x D] plus labels.
struct CohortDataset {
    int n_trajectories = 0;
    int n_timesteps = 0;
    int n_variables = 0;
    std::vector<float> values;  // row-major [N, T, D]
    std::vector<std::string> variable_names;
    SystemSchema schema;
    std::vector<std::string> outcomes;
    std::vector<std::uint8_t> labels;  // row-major [N, n_outcomes]
    /// Optional per-timestep event indicators, row-major [N, T, n_outcomes].
    /// When present, window labels use event timing; otherwise the trajectory label.
    std::vector<std::uint8_t> events;
    double resolution_hours = 4.0;

    int outcome_count() const { return static_cast<int>(outcomes.size()); }
    float value(int i, int t, int d) const {
        return values[(static_cast<std::size_t>(i) * n_timesteps + t) * n_variables + d];
    }
    std::uint8_t label(int i, int outcome) const {
        return labels[static_cast<std::size_t>(i) * outcomes.size() + outcome];
    }
    std::uint8_t event(int i, int t, int outcome) const {
        return events[(static_cast<std::size_t>(i) * n_timesteps + t) * outcomes.size() + outcome];
    }
    bool has_events() const { return !events.empty(); }
    int variable_index(const std::string& name) const;

    /// Throws DataError if sizes disagree or values are non-finite.
    void validate() const;
    nlohmann::json meta() const;
};

/// Writes meta.json, values.bin, labels.bin (and events.bin when present).
/// Throws UsageError if `dir` exists and is non-empty unless `force`.
void save_dataset(const CohortDataset& ds, const std::filesystem::path& dir, bool force = false);
CohortDataset load_dataset(const std::filesystem::path& dir);
/// SHA-256 over the dataset files in a fixed order, lowercase hex.
std::string dataset_fingerprint(const std::filesystem::path& dir);

struct GeneratorOptions {
    /// Multiplies every system's coupling to the latent severity; 0 gives pure noise.
    double coupling_scale = 1.0;
    double observation_noise = 0.1;
    double event_threshold = 0.8;
    double resolution_hours = 4.0;
    /// Smallest trajectory length accepted: window + max horizon + 1.
    int window = 6;
    int max_horizon = 6;
};

CohortDataset generate_synthetic_cohort(std::uint64_t seed, int n, int t, const SystemSchema& schema,
                                        const GeneratorOptions& options = {});

// ---- splits and normalisation -----------------------------------------------------------

struct SplitIndices {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

/// Seeded permutation of trajectory ids cut 70/15/15 (fractions configurable).
SplitIndices split_trajectories(int n, std::uint64_t seed, double train_frac = 0.7, double val_frac = 0.15);

/// Keeps round(ratio * |ids|) ids (at least one), chosen by a seeded shuffle; order preserved.
std::vector<int> subsample(const std::vector<int>& ids, double ratio, std::uint64_t seed);

struct ZScore {
    Vec mean;
    Vec stddev;  // 1 where the training variance is zero

    nlohmann::json to_json() const;
    static ZScore from_json(const nlohmann::json& j);
};

/// Per-variable statistics over every timestep of the given trajectories.
ZScore fit_zscore(const CohortDataset& ds, const std::vector<int>& ids);

// ---- windows ----------------------------------------------------------------------------

struct WindowSpec {
    int window = 6;
    int h_reg = 1;
    int h_cls = 6;
    /// Which horizons must fit inside the trajectory.
    bool need_reg = true;
    bool need_cls = true;
    int outcome = 0;
};

/// Stacked windows of one split. x is [n*W x D]; y_reg [n x D]; y_cls [n x 1].
struct WindowSet {
    Mat x;
    Mat y_reg;
    Mat y_cls;
    std::vector<int> trajectory_id;
    std::vector<int> window_start;
    int window = 0;
    /// Trajectories too short to yield a single window.
    int skipped_trajectories = 0;

    Eigen::Index size() const { return static_cast<Eigen::Index>(trajectory_id.size()); }
    /// Rows of the given samples, in order.
    WindowSet select(const std::vector<Eigen::Index>& samples) const;
};

/// Stride-1 windows over the listed trajectories, z-scored with `z`.
/// y_reg is the step at offset W + h_reg - 1; y_cls is 1 iff an event occurs in
/// offsets [W, W + h_cls). Without event data y_cls is the trajectory label.
WindowSet window_samples(const CohortDataset& ds, const std::vector<int>& ids, const WindowSpec& spec,
                         const ZScore& z);

/// Number of windows a trajectory of length t yields.
int windows_per_trajectory(int t, const WindowSpec& spec);

}  // namespace csra
