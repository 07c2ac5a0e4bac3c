#include "fol/csv.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fol/errors.hpp"

namespace fol {

namespace {

bool needs_quoting(const std::string& field) {
  return field.find_first_of(",\"\r\n") != std::string::npos;
}

std::string quoted(const std::string& field) {
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;  // distinguishes "" from no trailing field
  std::size_t line = 1;

  const auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  const auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          throw DataError(path + ": stray quote inside an unquoted field on line " +
                          std::to_string(line));
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        field_started = true;  // a comma implies a following field
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;  // CRLF: handled at \n
        field += c;
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field += c;
        break;
    }
  }
  if (in_quotes)
    throw DataError(path + ": unterminated quoted field starting before line " +
                    std::to_string(line));
  if (!field.empty() || field_started || !row.empty()) end_row();
  return rows;
}

void write_csv(const std::string& path,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << (needs_quoting(row[i]) ? quoted(row[i]) : row[i]);
    }
    out << '\n';
  }
  if (!out) throw DataError("write to " + path + " failed");
}

std::string format_g17(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string format_fixed3(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3f", value);
  return buf;
}

double parse_cell(const std::string& cell, const std::string& file,
                  std::size_t row, std::size_t col) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE)
    throw DataError(file + ": non-numeric value \"" + cell + "\" at row " +
                    std::to_string(row) + ", column " + std::to_string(col));
  return v;
}

CsvBatch load_batch_csv(const std::string& path, int source_id,
                        int batch_index) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw DataError(path + ": empty file");
  const auto& header = rows.front();

  std::size_t y_col = header.size();
  CsvBatch out;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == "y") {
      if (y_col != header.size())
        throw DataError(path + ": more than one column named y");
      y_col = j;
    } else {
      out.covariates.push_back(header[j]);
    }
  }
  if (y_col == header.size())
    throw DataError(path + ": no response column named y");
  if (out.covariates.empty())
    throw DataError(path + ": no covariate columns besides y");

  const std::size_t n = rows.size() - 1;
  if (n == 0) throw DataError(path + ": no data rows after the header");
  const std::size_t p = out.covariates.size();
  out.batch.source_id = source_id;
  out.batch.batch_index = batch_index;
  out.batch.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  out.batch.y.resize(static_cast<Eigen::Index>(n));

  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != header.size())
      throw DataError(path + ": row " + std::to_string(i + 1) + " has " +
                      std::to_string(row.size()) + " fields, header has " +
                      std::to_string(header.size()));
    std::size_t x_j = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double v = parse_cell(row[j], path, i + 1, j + 1);
      if (j == y_col)
        out.batch.y[static_cast<Eigen::Index>(i - 1)] = v;
      else
        out.batch.X(static_cast<Eigen::Index>(i - 1),
                    static_cast<Eigen::Index>(x_j++)) = v;
    }
  }
  return out;
}

void write_batch_csv(const std::string& path, const Batch& batch,
                     const std::vector<std::string>& covariates) {
  if (static_cast<Eigen::Index>(covariates.size()) != batch.p())
    throw ConfigError("covariate name count does not match the batch width");
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(batch.n()) + 1);
  std::vector<std::string> header = covariates;
  header.push_back("y");
  rows.push_back(std::move(header));
  for (Eigen::Index i = 0; i < batch.n(); ++i) {
    std::vector<std::string> row;
    row.reserve(static_cast<std::size_t>(batch.p()) + 1);
    for (Eigen::Index j = 0; j < batch.p(); ++j)
      row.push_back(format_g17(batch.X(i, j)));
    row.push_back(format_g17(batch.y[i]));
    rows.push_back(std::move(row));
  }
  write_csv(path, rows);
}

}  // namespace fol
