#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mlcoda::csv {

/// A header plus rows of raw string cells.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of `name` in the header, or nullopt.
    std::optional<std::size_t> find(std::string_view name) const;
};

/// RFC-4180 style: comma separated, optional double quotes, "" escapes a quote.
Table parse(std::istream& in);
Table read(const std::filesystem::path& path);

/// Empty cells and NA / NaN markers read as missing.
std::optional<double> to_number(std::string_view cell);

/// Shortest text that parses back to exactly `value`.
std::string format(double value);

/// Quote a cell if it contains a separator, quote or newline.
std::string escape(std::string_view cell);

void write_row(std::ostream& out, const std::vector<std::string>& cells);

}  // namespace mlcoda::csv
