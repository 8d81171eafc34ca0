#include "csra/systems.hpp"

#include <set>

#include "csra/error.hpp"

namespace csra {

namespace {

const char* const kDefaultIds[] = {"DP", "RS", "CS", "RN", "HS", "HC", "CN", "MH", "IO"};
const char* const kDefaultNames[] = {"Demographic/Profile", "Respiratory", "Circulatory",
                                     "Renal", "Hepatic", "Hematologic/Coagulation",
                                     "Central Nervous", "Metabolic/Homeostasis", "Intervention"};

}  // namespace

bool operator==(const ClinicalSystem& a, const ClinicalSystem& b) {
    return a.id == b.id && a.name == b.name && a.variable_indices == b.variable_indices;
}

bool operator==(const SystemSchema& a, const SystemSchema& b) {
    return a.variable_count_ == b.variable_count_ && a.systems_ == b.systems_;
}

SystemSchema::SystemSchema(std::vector<ClinicalSystem> systems, int variable_count)
    : systems_(std::move(systems)), variable_count_(variable_count) {
    if (variable_count_ < 1) throw SchemaError("schema: variable count must be positive");
    if (systems_.empty()) throw SchemaError("schema: no systems defined");
    std::set<std::string> ids;
    std::vector<int> owner(static_cast<std::size_t>(variable_count_), -1);
    for (std::size_t s = 0; s < systems_.size(); ++s) {
        const auto& sys = systems_[s];
        if (sys.id.empty()) throw SchemaError("schema: system " + std::to_string(s) + " has an empty id");
        if (!ids.insert(sys.id).second) throw SchemaError("schema: duplicate system id '" + sys.id + "'");
        if (sys.variable_indices.empty()) throw SchemaError("schema: system '" + sys.id + "' has no variables");
        for (int d : sys.variable_indices) {
            if (d < 0 || d >= variable_count_)
                throw SchemaError("schema: system '" + sys.id + "' index " + std::to_string(d) +
                                  " out of range [0, " + std::to_string(variable_count_) + ")");
            auto& o = owner[static_cast<std::size_t>(d)];
            if (o >= 0)
                throw SchemaError("schema: variable " + std::to_string(d) + " assigned to both '" +
                                  systems_[static_cast<std::size_t>(o)].id + "' and '" + sys.id + "'");
            o = static_cast<int>(s);
        }
    }
    for (int d = 0; d < variable_count_; ++d)
        if (owner[static_cast<std::size_t>(d)] < 0)
            throw SchemaError("schema: variable " + std::to_string(d) + " not assigned to any system");
}

SystemSchema SystemSchema::single(int variable_count) {
    ClinicalSystem all{"ALL", "All variables", {}};
    for (int d = 0; d < variable_count; ++d) all.variable_indices.push_back(d);
    return SystemSchema({all}, variable_count);
}

SystemSchema SystemSchema::default_nine(int per_system) {
    if (per_system < 1) throw SchemaError("schema: per_system must be positive");
    std::vector<ClinicalSystem> systems;
    int next = 0;
    for (int s = 0; s < 9; ++s) {
        ClinicalSystem sys{kDefaultIds[s], kDefaultNames[s], {}};
        for (int j = 0; j < per_system; ++j) sys.variable_indices.push_back(next++);
        systems.push_back(std::move(sys));
    }
    return SystemSchema(std::move(systems), next);
}

std::vector<std::vector<int>> SystemSchema::index_lists() const {
    std::vector<std::vector<int>> out;
    out.reserve(systems_.size());
    for (const auto& s : systems_) out.push_back(s.variable_indices);
    return out;
}

int SystemSchema::system_of(int variable) const {
    for (std::size_t s = 0; s < systems_.size(); ++s)
        for (int d : systems_[s].variable_indices)
            if (d == variable) return static_cast<int>(s);
    throw SchemaError("schema: variable " + std::to_string(variable) + " not in schema");
}

nlohmann::json SystemSchema::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : systems_)
        arr.push_back({{"id", s.id}, {"name", s.name}, {"variable_indices", s.variable_indices}});
    return {{"systems", arr}};
}

SystemSchema SystemSchema::from_json(const nlohmann::json& j, int variable_count) {
    if (!j.is_object() || !j.contains("systems") || !j["systems"].is_array())
        throw SchemaError("schema: expected an object with a 'systems' array");
    std::vector<ClinicalSystem> systems;
    for (const auto& s : j["systems"]) {
        try {
            systems.push_back({s.at("id").get<std::string>(), s.at("name").get<std::string>(),
                               s.at("variable_indices").get<std::vector<int>>()});
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("schema: malformed system entry: ") + e.what());
        }
    }
    return SystemSchema(std::move(systems), variable_count);
}

std::vector<Mat> split(const Mat& x, const SystemSchema& schema) {
    if (x.cols() != schema.variable_count())
        throw SchemaError("split: data has " + std::to_string(x.cols()) + " columns but schema expects " +
                          std::to_string(schema.variable_count()));
    std::vector<Mat> parts;
    parts.reserve(static_cast<std::size_t>(schema.system_count()));
    for (const auto& sys : schema.systems()) {
        Mat p(x.rows(), static_cast<Eigen::Index>(sys.variable_indices.size()));
        for (std::size_t j = 0; j < sys.variable_indices.size(); ++j)
            p.col(static_cast<Eigen::Index>(j)) = x.col(sys.variable_indices[j]);
        parts.push_back(std::move(p));
    }
    return parts;
}

Mat merge(const std::vector<Mat>& parts, const SystemSchema& schema) {
    if (static_cast<int>(parts.size()) != schema.system_count())
        throw SchemaError("merge: got " + std::to_string(parts.size()) + " parts for " +
                          std::to_string(schema.system_count()) + " systems");
    const Eigen::Index rows = parts.empty() ? 0 : parts.front().rows();
    Mat x(rows, schema.variable_count());
    for (std::size_t s = 0; s < parts.size(); ++s) {
        const auto& sys = schema.systems()[s];
        if (parts[s].cols() != static_cast<Eigen::Index>(sys.variable_indices.size()) || parts[s].rows() != rows)
            throw SchemaError("merge: part for system '" + sys.id + "' has shape " +
                              std::to_string(parts[s].rows()) + "x" + std::to_string(parts[s].cols()) +
                              ", expected " + std::to_string(rows) + "x" +
                              std::to_string(sys.variable_indices.size()));
        for (std::size_t j = 0; j < sys.variable_indices.size(); ++j)
            x.col(sys.variable_indices[j]) = parts[s].col(static_cast<Eigen::Index>(j));
    }
    return x;
}

}  // namespace csra
