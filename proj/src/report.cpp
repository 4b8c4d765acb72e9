#include "gradmix/report.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "gradmix/tensor.hpp"

namespace gradmix {

std::string format_number(double v, int precision) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

std::string aligned_table(const std::vector<std::string>& headers,
                          const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
    for (const auto& row : rows) {
        if (row.size() != headers.size()) throw Error("table: row width != header width");
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c)
            os << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << cells[c];
        os << '\n';
    };
    emit(headers);
    for (std::size_t c = 0; c < headers.size(); ++c)
        os << (c ? "  " : "") << std::string(width[c], '-');
    os << '\n';
    for (const auto& row : rows) emit(row);
    return os.str();
}

namespace {

void render_human(const nlohmann::json& j, std::ostream& os, const std::string& prefix) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) {
            render_human(*it, os, key);
        } else if (it->is_array() && !it->empty() && it->front().is_object()) {
            // array of records -> one aligned table
            std::vector<std::string> headers;
            for (auto f = it->front().begin(); f != it->front().end(); ++f)
                headers.push_back(f.key());
            std::vector<std::vector<std::string>> rows;
            for (const auto& rec : *it) {
                std::vector<std::string> row;
                for (const auto& h : headers) {
                    const auto& v = rec.contains(h) ? rec.at(h) : nlohmann::json();
                    row.push_back(v.is_string() ? v.get<std::string>() : v.dump());
                }
                rows.push_back(std::move(row));
            }
            os << key << ":\n" << aligned_table(headers, rows) << '\n';
        } else {
            os << key << " = " << (it->is_string() ? it->get<std::string>() : it->dump()) << '\n';
        }
    }
}

}  // namespace

void Report::write(const std::string& json_path, const std::string& table_path) const {
    {
        std::ofstream f(json_path);
        if (!f) throw Error("report: cannot write " + json_path);
        f << machine_text() << '\n';
    }
    std::ofstream f(table_path);
    if (!f) throw Error("report: cannot write " + table_path);
    render_human(data, f, "");
}

}  // namespace gradmix
