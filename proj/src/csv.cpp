#include "mlcoda/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "mlcoda/errors.hpp"

namespace mlcoda::csv {

std::optional<std::size_t> Table::find(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

namespace {

// Reads one record; returns false at end of input.
bool next_record(std::istream& in, std::vector<std::string>& cells) {
    cells.clear();
    std::string cell;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    cell.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c == '\n') {
            cells.push_back(std::move(cell));
            return true;
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    if (in_quotes) {
        throw DataError("CSV: unterminated quoted field");
    }
    if (any) {
        cells.push_back(std::move(cell));
    }
    return any;
}

std::string strip_bom(std::string s) {
    if (s.size() >= 3 && static_cast<unsigned char>(s[0]) == 0xEF &&
        static_cast<unsigned char>(s[1]) == 0xBB && static_cast<unsigned char>(s[2]) == 0xBF) {
        s.erase(0, 3);
    }
    return s;
}

}  // namespace

Table parse(std::istream& in) {
    Table table;
    std::vector<std::string> cells;
    if (!next_record(in, cells)) {
        throw DataError("CSV: missing header row");
    }
    if (!cells.empty()) {
        cells[0] = strip_bom(cells[0]);
    }
    table.header = cells;
    std::size_t line = 1;
    while (next_record(in, cells)) {
        ++line;
        if (cells.size() == 1 && cells[0].empty()) {
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw DataError("CSV line " + std::to_string(line) + " has " +
                            std::to_string(cells.size()) + " fields, header has " +
                            std::to_string(table.header.size()));
        }
        table.rows.push_back(cells);
    }
    return table;
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return parse(in);
}

std::optional<double> to_number(std::string_view cell) {
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
    if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "NULL") {
        return std::nullopt;
    }
    if (cell.front() == '+') {
        cell.remove_prefix(1);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw DataError("CSV: '" + std::string(cell) + "' is not a number");
    }
    if (std::isnan(value)) {
        return std::nullopt;
    }
    return value;
}

std::string format(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

std::string escape(std::string_view cell) {
    if (cell.find_first_of(",\"\n\r") == std::string_view::npos) {
        return std::string(cell);
    }
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << escape(cells[i]);
    }
    out << '\n';
}

}  // namespace mlcoda::csv
