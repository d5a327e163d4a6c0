#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace proxdm {

/// Shortest round-trip text for a double: 17 significant digits.
std::string format_double(double v);

/// Rows of doubles, one per line, with an optional header row. Lines that are
/// blank are skipped; a first line that does not parse as numbers is treated
/// as the header.
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);
Eigen::MatrixXd parse_matrix_csv(std::istream& is, const std::string& source = "<stream>");

void write_matrix_csv(std::ostream& os, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& header);

/// Header "x0,x1,...,x{d-1}".
std::vector<std::string> coordinate_header(Eigen::Index d);

}  // namespace proxdm
