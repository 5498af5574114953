#include "mlcoda/ilr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mlcoda/errors.hpp"

namespace mlcoda {

namespace {

std::vector<std::string> default_names(std::size_t parts) {
    std::vector<std::string> names;
    for (std::size_t d = 0; d < parts; ++d) {
        names.push_back("x" + std::to_string(d + 1));
    }
    return names;
}

std::string column_error(Eigen::Index k, const std::string& what) {
    return "SBP column " + std::to_string(k + 1) + ": " + what;
}

std::vector<std::string> split_tokens(const std::string& line) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (char c : line) {
        if (c == ',' || c == ';' || std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (c != '"') {
            current.push_back(c);
        }
    }
    flush();
    return tokens;
}

bool parse_sign(const std::string& token, int& out) {
    if (token == "1" || token == "+1") {
        out = 1;
    } else if (token == "-1") {
        out = -1;
    } else if (token == "0" || token == "-0" || token == "+0") {
        out = 0;
    } else {
        return false;
    }
    return true;
}

}  // namespace

Sbp validate_sbp(const Eigen::MatrixXi& matrix, std::vector<std::string> part_names) {
    const auto parts = matrix.rows();
    if (parts < 2) {
        throw DataError("SBP needs at least 2 parts");
    }
    if (matrix.cols() != parts - 1) {
        throw DataError("SBP with " + std::to_string(parts) + " parts needs " +
                        std::to_string(parts - 1) + " columns, got " +
                        std::to_string(matrix.cols()));
    }
    if (!part_names.empty() && part_names.size() != static_cast<std::size_t>(parts)) {
        throw DataError("SBP part names do not match the number of rows");
    }
    if ((matrix.array() < -1).any() || (matrix.array() > 1).any()) {
        throw DataError("SBP entries must be -1, 0 or +1");
    }

    // Groups not yet split; the first column must split the whole composition.
    std::vector<std::vector<Eigen::Index>> open_groups(1);
    for (Eigen::Index d = 0; d < parts; ++d) {
        open_groups[0].push_back(d);
    }

    for (Eigen::Index k = 0; k < matrix.cols(); ++k) {
        std::vector<Eigen::Index> plus, minus, support;
        for (Eigen::Index d = 0; d < parts; ++d) {
            int v = matrix(d, k);
            if (v != 0) {
                support.push_back(d);
                (v > 0 ? plus : minus).push_back(d);
            }
        }
        if (plus.empty() || minus.empty()) {
            throw DataError(column_error(k, "both the +1 and the -1 set must be non-empty"));
        }
        auto group = std::find(open_groups.begin(), open_groups.end(), support);
        if (group == open_groups.end()) {
            throw DataError(column_error(
                k, "non-zero entries must cover exactly one group left by earlier columns"));
        }
        open_groups.erase(group);
        open_groups.push_back(std::move(plus));
        open_groups.push_back(std::move(minus));
    }
    for (const auto& g : open_groups) {
        if (g.size() != 1) {
            throw DataError("SBP leaves some parts unseparated");
        }
    }

    if (part_names.empty()) {
        part_names = default_names(static_cast<std::size_t>(parts));
    }
    return Sbp(matrix, std::move(part_names));
}

Sbp default_sbp(std::size_t parts, std::vector<std::string> part_names) {
    if (parts < 2) {
        throw DataError("default SBP needs at least 2 parts");
    }
    const auto n = static_cast<Eigen::Index>(parts);
    Eigen::MatrixXi signs = Eigen::MatrixXi::Zero(n, n - 1);
    for (Eigen::Index k = 0; k < n - 1; ++k) {
        signs(k, k) = 1;
        for (Eigen::Index d = k + 1; d < n; ++d) {
            signs(d, k) = -1;
        }
    }
    return validate_sbp(signs, std::move(part_names));
}

Sbp parse_sbp(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> header;
    std::vector<std::string> row_labels;
    std::vector<std::vector<int>> rows;

    while (std::getline(in, line)) {
        auto tokens = split_tokens(line);
        if (tokens.empty() || tokens.front().starts_with('#')) {
            continue;
        }
        std::vector<int> values;
        bool tail_numeric = true;
        for (std::size_t i = 1; i < tokens.size() && tail_numeric; ++i) {
            int v = 0;
            tail_numeric = parse_sign(tokens[i], v);
            values.push_back(v);
        }
        int lead = 0;
        const bool lead_numeric = parse_sign(tokens[0], lead);
        if (tail_numeric && lead_numeric) {
            values.insert(values.begin(), lead);
            row_labels.emplace_back();
            rows.push_back(std::move(values));
        } else if (tail_numeric && tokens.size() >= 2) {
            row_labels.push_back(tokens[0]);
            rows.push_back(std::move(values));
        } else if (rows.empty() && header.empty()) {
            header = tokens;
        } else {
            throw DataError("SBP file: unreadable row '" + line + "'");
        }
    }
    if (rows.empty()) {
        throw DataError("SBP file contains no rows");
    }
    const auto cols = rows.front().size();
    Eigen::MatrixXi signs(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) {
            throw DataError("SBP file: row " + std::to_string(r + 1) + " has " +
                            std::to_string(rows[r].size()) + " entries, expected " +
                            std::to_string(cols));
        }
        for (std::size_t c = 0; c < cols; ++c) {
            signs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }

    // Row labels win over a header; a header names parts only when it has one token per row.
    std::vector<std::string> names;
    if (std::all_of(row_labels.begin(), row_labels.end(),
                    [](const std::string& s) { return !s.empty(); })) {
        names = row_labels;
    } else if (header.size() == rows.size()) {
        names = header;
    }
    return validate_sbp(signs, std::move(names));
}

Sbp read_sbp(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open SBP file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_sbp(buf.str());
}

OrthonormalBasis build_basis(const Sbp& sbp) {
    const auto& signs = sbp.matrix();
    OrthonormalBasis basis;
    basis.contrast = Eigen::MatrixXd::Zero(signs.rows(), signs.cols());
    basis.part_names = sbp.part_names();
    for (Eigen::Index k = 0; k < signs.cols(); ++k) {
        const int r = static_cast<int>((signs.col(k).array() > 0).count());
        const int s = static_cast<int>((signs.col(k).array() < 0).count());
        const double a = std::sqrt(static_cast<double>(s) / (r * static_cast<double>(r + s)));
        const double b = -std::sqrt(static_cast<double>(r) / (s * static_cast<double>(r + s)));
        for (Eigen::Index d = 0; d < signs.rows(); ++d) {
            if (signs(d, k) > 0) {
                basis.contrast(d, k) = a;
            } else if (signs(d, k) < 0) {
                basis.contrast(d, k) = b;
            }
        }
        basis.plus_counts.push_back(r);
        basis.minus_counts.push_back(s);
    }
    return basis;
}

IlrCoords ilr(const Composition& x, const OrthonormalBasis& basis) {
    if (x.size() != basis.parts()) {
        throw ShapeError("composition has " + std::to_string(x.size()) +
                         " parts but the basis expects " + std::to_string(basis.parts()));
    }
    Eigen::VectorXd logs(static_cast<Eigen::Index>(x.size()));
    for (std::size_t d = 0; d < x.size(); ++d) {
        logs(static_cast<Eigen::Index>(d)) = std::log(x[d]);
    }
    return basis.contrast.transpose() * logs;
}

Composition ilr_inverse(const IlrCoords& z, const OrthonormalBasis& basis, double total) {
    if (static_cast<std::size_t>(z.size()) != basis.dims()) {
        throw ShapeError("ilr coordinates have " + std::to_string(z.size()) +
                         " entries but the basis has " + std::to_string(basis.dims()));
    }
    if (!z.allFinite()) {
        throw DataError("ilr coordinates must be finite");
    }
    Eigen::VectorXd logs = basis.contrast * z;
    logs.array() -= logs.maxCoeff();
    std::vector<double> raw(static_cast<std::size_t>(logs.size()));
    for (Eigen::Index d = 0; d < logs.size(); ++d) {
        raw[static_cast<std::size_t>(d)] = std::exp(logs(d));
    }
    return closure(raw, total);
}

}  // namespace mlcoda
