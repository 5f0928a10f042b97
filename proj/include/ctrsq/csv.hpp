#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctrsq/error.hpp"

namespace ctrsq {

/// Shortest-round-trip-safe text for a double (17 significant digits).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// In-memory CSV table: "# schema: <kind>/<version>" comment, header, rows.
class CsvTable {
 public:
  CsvTable(std::string schema, std::vector<std::string> header)
      : schema_(std::move(schema)), header_(std::move(header)) {}

  class Row {
   public:
    explicit Row(CsvTable& t) : t_(t) {}
    Row& operator<<(double v) { return add(format_double(v)); }
    Row& operator<<(int v) { return add(std::to_string(v)); }
    Row& operator<<(std::size_t v) { return add(std::to_string(v)); }
    Row& operator<<(bool v) { return add(v ? "true" : "false"); }
    Row& operator<<(const std::string& v) { return add(csv_escape(v)); }
    Row& operator<<(const char* v) { return add(csv_escape(v)); }
    ~Row() noexcept(false) {
      if (cells_.size() != t_.header_.size())
        throw InvalidArgument("CsvTable: row has " + std::to_string(cells_.size()) +
                              " cells, header has " + std::to_string(t_.header_.size()));
      t_.rows_.push_back(std::move(cells_));
    }

   private:
    Row& add(std::string s) {
      cells_.push_back(std::move(s));
      return *this;
    }
    CsvTable& t_;
    std::vector<std::string> cells_;
  };

  Row row() { return Row(*this); }

  std::string str() const {
    std::ostringstream os;
    os << "# schema: " << schema_ << "\r\n";
    for (std::size_t i = 0; i < header_.size(); ++i) os << (i ? "," : "") << csv_escape(header_[i]);
    os << "\r\n";
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << "\r\n";
    }
    return os.str();
  }

  std::size_t size() const noexcept { return rows_.size(); }

 private:
  std::string schema_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Writes `content` to a sibling temp file and renames it over `path`.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os << content;
    os.flush();
    if (!os) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  write_atomic(path, table.str());
}

/// Splits one CSV record (no embedded newlines) into fields.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace ctrsq
