#pragma once

// Per-hop records and the CSV formats shared by the CLI and the plotting
// scripts.
//
// HopLog CSV columns, in order:
//   k, z1, z2, z3, z4, eta1, eta2, eta3, eta4, psi1, psi2,
//   e1, e2, e3, e4, v1, v2, cost, flight_time

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace zdp::io {

struct HopLog {
  int k = 0;
  Eigen::Vector4d z = Eigen::Vector4d::Zero();
  Eigen::Vector4d eta = Eigen::Vector4d::Zero();
  Eigen::Vector2d psi = Eigen::Vector2d::Zero();
  Eigen::Vector4d e = Eigen::Vector4d::Zero();
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  double cost = 0.0;
  double flight_time = 0.0;
};

/// Shortest decimal form that parses back to the same double.
std::string format_number(double x);

std::string hoplog_header();
void write_hoplog(std::ostream& out, const std::vector<HopLog>& logs);
/// Throws Error(kCorruptFile) on a malformed header or row.
std::vector<HopLog> read_hoplog(std::istream& in);

/// Writes a CSV table; every row must have header.size() entries.
void write_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<double>>& rows);

}  // namespace zdp::io
