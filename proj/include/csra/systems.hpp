#pragma once

// Partition of the D input variables into disjoint clinical systems.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csra/matrix.hpp"

namespace csra {

struct ClinicalSystem {
    std::string id;
    std::string name;
    std::vector<int> variable_indices;
};

class SystemSchema {
public:
    SystemSchema() = default;
    /// Validates on construction; throws SchemaError on overlap, gaps,
    /// out-of-range indices, empty systems, or duplicate ids.
    SystemSchema(std::vector<ClinicalSystem> systems, int variable_count);

    /// One system ("ALL") covering every variable.
    static SystemSchema single(int variable_count);
    /// The nine default systems (DP, RS, CS, RN, HS, HC, CN, MH, IO), each
    /// receiving `per_system` consecutive variables.
    static SystemSchema default_nine(int per_system = 2);

    int variable_count() const { return variable_count_; }
    int system_count() const { return static_cast<int>(systems_.size()); }
    const std::vector<ClinicalSystem>& systems() const { return systems_; }
    const ClinicalSystem& operator[](int s) const { return systems_.at(static_cast<std::size_t>(s)); }
    std::vector<std::vector<int>> index_lists() const;
    /// System index owning variable d.
    int system_of(int variable) const;

    nlohmann::json to_json() const;
    static SystemSchema from_json(const nlohmann::json& j, int variable_count);

    friend bool operator==(const SystemSchema& a, const SystemSchema& b);

private:
    std::vector<ClinicalSystem> systems_;
    int variable_count_ = 0;
};

bool operator==(const ClinicalSystem& a, const ClinicalSystem& b);

/// Column selection per system, order preserved.
std::vector<Mat> split(const Mat& x, const SystemSchema& schema);
/// Scatter system blocks back to their original columns.
Mat merge(const std::vector<Mat>& parts, const SystemSchema& schema);

}  // namespace csra
