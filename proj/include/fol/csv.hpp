#pragma once

#include <string>
#include <vector>

#include "fol/glm.hpp"

namespace fol {

// RFC-4180 table: quoted fields may contain commas, doubled quotes, and
// newlines; rows may end in LF or CRLF. Throws DataError naming the file and
// line on malformed quoting. An empty file yields no rows.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

// Writes LF-terminated rows, quoting any field that needs it.
void write_csv(const std::string& path,
               const std::vector<std::vector<std::string>>& rows);

// Coefficient cells round-trip exactly; summary cells match the three-decimal
// presentation of the tables.
std::string format_g17(double value);
std::string format_fixed3(double value);

// Full-string numeric parse; on failure names the file and the 1-based
// row/column of the offending cell.
double parse_cell(const std::string& cell, const std::string& file,
                  std::size_t row, std::size_t col);

// One source batch as a CSV file: header row with covariate names plus a
// response column named y (any position), numeric body.
struct CsvBatch {
  Batch batch;
  std::vector<std::string> covariates;  // header order, y excluded
};

CsvBatch load_batch_csv(const std::string& path, int source_id,
                        int batch_index);

void write_batch_csv(const std::string& path, const Batch& batch,
                     const std::vector<std::string>& covariates);

}  // namespace fol
