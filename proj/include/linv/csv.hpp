#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace linv::csv {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Buffers all rows and writes the file in one shot, so a failed run never
// leaves a partial output behind. First line carries the schema version.
class Table {
 public:
  Table(std::string schema, std::vector<std::string> columns)
      : schema_(std::move(schema)), columns_(std::move(columns)) {}

  class RowBuilder {
   public:
    explicit RowBuilder(Table& t) : t_(t) {}
    RowBuilder& cell(double v) {
      cells_.push_back(format_double(v));
      return *this;
    }
    RowBuilder& cell(int v) {
      cells_.push_back(std::to_string(v));
      return *this;
    }
    RowBuilder& cell(std::size_t v) {
      cells_.push_back(std::to_string(v));
      return *this;
    }
    RowBuilder& cell(const std::string& v) {
      cells_.push_back(v);
      return *this;
    }
    ~RowBuilder() { t_.push_row(cells_); }

   private:
    Table& t_;
    std::vector<std::string> cells_;
  };

  RowBuilder row() { return RowBuilder(*this); }

  void push_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size()) {
      throw std::logic_error("csv row width mismatch for schema " + schema_);
    }
    rows_.push_back(join(cells));
  }

  // Free-form comment lines written after the schema line (run records).
  void comment(const std::string& line) { comments_.push_back(line); }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "# schema=" << schema_ << "\n";
    for (const auto& c : comments_) f << "# " << c << "\n";
    f << join(columns_) << "\n";
    for (const auto& r : rows_) f << r << "\n";
    if (!f) throw std::runtime_error("write failed: " + path);
  }

  std::size_t row_count() const { return rows_.size(); }

 private:
  static std::string join(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    return out;
  }

  std::string schema_;
  std::vector<std::string> columns_;
  std::vector<std::string> comments_;
  std::vector<std::string> rows_;
};

}  // namespace linv::csv
