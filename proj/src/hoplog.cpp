#include "zdp/hoplog.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "zdp/errors.hpp"

namespace zdp::io {
namespace {

constexpr int kColumns = 19;

const char* const kHeader[kColumns] = {
    "k",    "z1",   "z2",   "z3", "z4", "eta1", "eta2", "eta3", "eta4", "psi1",
    "psi2", "e1",   "e2",   "e3", "e4", "v1",   "v2",   "cost", "flight_time"};

double parse_number(const std::string& s) {
  double value = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::kCorruptFile, "bad number '" + s + "' in hop log");
  }
  return value;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::string format_number(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string hoplog_header() {
  std::string h;
  for (int i = 0; i < kColumns; ++i) {
    if (i) h += ',';
    h += kHeader[i];
  }
  return h;
}

void write_hoplog(std::ostream& out, const std::vector<HopLog>& logs) {
  out << hoplog_header() << '\n';
  for (const HopLog& r : logs) {
    out << r.k;
    auto put = [&out](const auto& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << format_number(v(i));
    };
    put(r.z);
    put(r.eta);
    put(r.psi);
    put(r.e);
    put(r.v);
    out << ',' << format_number(r.cost) << ',' << format_number(r.flight_time) << '\n';
  }
}

std::vector<HopLog> read_hoplog(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != hoplog_header()) {
    throw Error(ErrorCode::kCorruptFile, "hop log header does not match the schema");
  }
  std::vector<HopLog> logs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    if (static_cast<int>(cells.size()) != kColumns) {
      throw Error(ErrorCode::kCorruptFile, "hop log row has the wrong column count");
    }
    double v[kColumns];
    for (int i = 0; i < kColumns; ++i) v[i] = parse_number(cells[static_cast<std::size_t>(i)]);
    HopLog r;
    r.k = static_cast<int>(v[0]);
    r.z << v[1], v[2], v[3], v[4];
    r.eta << v[5], v[6], v[7], v[8];
    r.psi << v[9], v[10];
    r.e << v[11], v[12], v[13], v[14];
    r.v << v[15], v[16];
    r.cost = v[17];
    r.flight_time = v[18];
    logs.push_back(r);
  }
  return logs;
}

void write_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<double>>& rows) {
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw Error(ErrorCode::kInvalidArgument, "table row width does not match header");
    }
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
    out << '\n';
  }
}

}  // namespace zdp::io
