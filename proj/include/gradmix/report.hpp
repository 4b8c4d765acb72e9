#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace gradmix {

/// Structured results container. The machine form is JSON; the human form
/// is rendered from the same values, so the two cannot drift.
struct Report {
    nlohmann::json data = nlohmann::json::object();

    std::string machine_text() const { return data.dump(2); }
    void write(const std::string& json_path, const std::string& table_path) const;
};

/// Fixed-width table with a header row; cells are right-aligned.
std::string aligned_table(const std::vector<std::string>& headers,
                          const std::vector<std::vector<std::string>>& rows);

std::string format_number(double v, int precision = 6);

}  // namespace gradmix
