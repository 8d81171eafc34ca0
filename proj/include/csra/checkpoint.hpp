#pragma once

// Single-file checkpoint:
//   "CSRACKPT" | u32 version | u64 header bytes | JSON header
//   | u32 block count | per block: u32 name bytes, name, u32 rows, u32 cols
//   | per block, in table order: rows*cols little-endian f64, row-major

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "csra/autodiff.hpp"

namespace csra {

struct Checkpoint {
    nlohmann::json header;
    std::vector<std::pair<std::string, Mat>> blocks;

    const Mat* find(const std::string& name) const;
    const Mat& at(const std::string& name) const;
    void add(const std::string& prefix, const ad::ParameterSet& params);
    /// Copies every block "<prefix><name>" into the matching parameter.
    /// Throws DataError on a missing block or a shape mismatch.
    void restore(const std::string& prefix, ad::ParameterSet& params) const;
    bool has_prefix(const std::string& prefix) const;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace csra
