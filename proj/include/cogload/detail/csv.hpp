#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "cogload/detail/text.hpp"
#include "cogload/errors.hpp"

namespace cogload::detail {

struct CsvRow {
    std::size_t line = 0;  // 1-based
    std::vector<std::string_view> fields;
};

/// Header plus data rows. Blank lines are skipped; views point into `text`.
struct CsvTable {
    std::vector<std::string_view> header;
    std::vector<CsvRow> rows;
};

inline CsvTable parse_csv(std::string_view text, const std::string& source) {
    CsvTable t;
    std::size_t lineno = 0;
    std::size_t start = 0;
    bool have_header = false;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++lineno;
        if (trim(line).empty()) continue;
        if (!have_header) {
            t.header = split(line);
            have_header = true;
            continue;
        }
        t.rows.push_back({lineno, split(line)});
    }
    if (!have_header) throw ParseError(source, 0, "missing header row");
    return t;
}

/// Numeric cell; an empty cell or "nan" is a missing value.
inline double parse_cell(std::string_view cell, const std::string& source, std::size_t line,
                         std::string_view column) {
    cell = trim(cell);
    if (cell.empty() || cell == "nan" || cell == "NaN") return std::numeric_limits<double>::quiet_NaN();
    auto v = parse_double(cell);
    if (!v) throw ParseError(source, line, "non-numeric value '" + std::string(cell) + "' in column '" +
                                               std::string(column) + "'");
    return *v;
}

inline std::string format_cell(double v) {
    return std::isnan(v) ? std::string() : format_double(v);
}

}  // namespace cogload::detail
