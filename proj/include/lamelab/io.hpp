#pragma once

// PLF1 binary field dumps and RFC-4180 CSV writing.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamelab/grid.hpp"

namespace lamelab {

static_assert(std::endian::native == std::endian::little, "PLF1 I/O assumes a little-endian host");

/// Layout: "PLF1", u32 dim, u32 N, u32 components, f64 extent, then the
/// samples as f64, component-major, nodes row-major.
inline std::string plf1_encode(const Field& u) {
  std::string out = "PLF1";
  auto put = [&out](const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
  };
  const std::uint32_t hdr[3] = {static_cast<std::uint32_t>(u.grid().dim()),
                                static_cast<std::uint32_t>(u.grid().points()),
                                static_cast<std::uint32_t>(u.components())};
  put(hdr, sizeof hdr);
  const double L = u.grid().extent();
  put(&L, sizeof L);
  put(u.values().data(), u.values().size() * sizeof(double));
  return out;
}

inline Field plf1_decode(const std::string& bytes) {
  constexpr std::size_t header = 4 + 3 * 4 + 8;
  if (bytes.size() < header || bytes.compare(0, 4, "PLF1") != 0) {
    throw std::invalid_argument("not a PLF1 stream");
  }
  std::uint32_t hdr[3];
  std::memcpy(hdr, bytes.data() + 4, sizeof hdr);
  double L = 0.0;
  std::memcpy(&L, bytes.data() + 16, sizeof L);
  Field u(Grid(static_cast<int>(hdr[0]), static_cast<int>(hdr[1]), L), static_cast<int>(hdr[2]));
  const std::size_t payload = u.values().size() * sizeof(double);
  if (bytes.size() != header + payload) throw std::invalid_argument("PLF1 payload size mismatch");
  std::memcpy(u.values().data(), bytes.data() + header, payload);
  return u;
}

inline void plf1_write(const std::string& path, const Field& u) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::string b = plf1_encode(u);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

inline Field plf1_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return plf1_decode(ss.str());
}

/// Quotes a CSV cell when it contains a comma, quote or line break.
inline std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_number(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw std::invalid_argument("CSV row width mismatch");
    rows_.push_back(std::move(row));
  }

  void add_numbers(const std::vector<double>& row) {
    std::vector<std::string> cells;
    cells.reserve(row.size());
    for (double v : row) cells.push_back(format_number(v));
    add(std::move(cells));
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string str() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += csv_escape(cells[i]);
      }
      out += "\r\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Minimal RFC-4180 reader (quoted cells, doubled quotes, CRLF or LF).
inline std::vector<std::vector<std::string>> csv_parse(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !cell.empty()) {
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
      }
      row.clear();
      cell.clear();
      any = false;
    } else {
      cell += c;
      any = true;
    }
  }
  if (any || !cell.empty()) {
    row.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace lamelab
