#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mqc/dynamics.hpp"

namespace mqc {

/// "mean_field", "density", "conditional" or "uhlmann".
std::string representation_name(const ModelState& s);

/// Text snapshot, version 1:
///   MQCGRID 1 <rep> <Nq> <Np> <n> <m> <q0> <q1> <p0> <p1> <hbar>
/// followed by one record per node in row-major (i,j) order. Density records
/// hold the real/imag pairs of P (row-major); split records hold D and then the
/// pairs of psi or W; mean-field records hold D, and a final "RHO" line holds rho.
/// Numbers use 17 significant digits, so write -> read -> write is byte-identical.
void write_snapshot(std::ostream& os, const ModelState& s);
ModelState read_snapshot(std::istream& is);
void write_snapshot_file(const std::filesystem::path& path, const ModelState& s);
ModelState read_snapshot_file(const std::filesystem::path& path);

/// Fixed column order of the diagnostics table.
const std::vector<std::string>& csv_columns();
std::string format_number(double x);
/// Value of column `col` (index into csv_columns()); t is column 0.
std::optional<double> column_value(const DiagnosticRow& row, std::size_t col);

void write_csv_header(std::ostream& os);
void write_csv_row(std::ostream& os, const DiagnosticRow& row);
void write_csv(std::ostream& os, const DiagnosticSeries& series);
/// Parses a table written by write_csv; empty cells stay empty.
DiagnosticSeries read_csv(std::istream& is);
DiagnosticSeries read_csv_file(const std::filesystem::path& path);

}  // namespace mqc
