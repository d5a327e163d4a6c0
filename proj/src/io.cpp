#include "proxdm/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "proxdm/errors.hpp"

namespace proxdm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_row(const std::string& line, std::vector<double>& out) {
    out.clear();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        double v = 0.0;
        const auto* first = cell.data();
        const auto* last = cell.data() + cell.size();
        if (!cell.empty() && *first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last || cell.empty()) return false;
        out.push_back(v);
    }
    return !out.empty();
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Eigen::MatrixXd parse_matrix_csv(std::istream& is, const std::string& source) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::vector<double> row;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        if (!parse_row(line, row)) {
            if (first) {
                first = false;
                continue;
            }
            throw ConfigError(source + ":" + std::to_string(lineno) + ": not a numeric row");
        }
        first = false;
        if (!rows.empty() && row.size() != rows.front().size())
            throw ConfigError(source + ":" + std::to_string(lineno) + ": inconsistent column count");
        rows.push_back(row);
    }
    if (rows.empty()) throw ConfigError(source + ": no data rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    return m;
}

Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    return parse_matrix_csv(in, path.string());
}

void write_matrix_csv(std::ostream& os, const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    if (!header.empty()) os << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << format_double(m(r, c));
        os << '\n';
    }
}

std::vector<std::string> coordinate_header(Eigen::Index d) {
    std::vector<std::string> h;
    for (Eigen::Index j = 0; j < d; ++j) h.push_back("x" + std::to_string(j));
    return h;
}

}  // namespace proxdm
