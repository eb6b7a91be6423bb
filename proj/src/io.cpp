#include "mqc/io.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace mqc {

std::string representation_name(const ModelState& s) {
  switch (s.index()) {
    case 0:
      return "mean_field";
    case 1:
      return "density";
    case 2:
      return "conditional";
    default:
      return "uhlmann";
  }
}

std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

void put_complex_block(std::ostream& os, const cplx* v, int count) {
  for (int c = 0; c < count; ++c) os << ' ' << format_number(v[c].real()) << ' ' << format_number(v[c].imag());
}

double take(std::istream& is, const char* what) {
  std::string tok;
  if (!(is >> tok)) throw InvalidInput(std::string("snapshot truncated while reading ") + what);
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw InvalidInput("");
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("snapshot: bad number '" + tok + "' in " + what);
  }
}

void take_complex_block(std::istream& is, cplx* v, int count) {
  for (int c = 0; c < count; ++c) {
    const double re = take(is, "matrix entry");
    const double im = take(is, "matrix entry");
    v[c] = cplx(re, im);
  }
}

}  // namespace

void write_snapshot(std::ostream& os, const ModelState& s) {
  std::visit(
      [&](const auto& st) {
        using T = std::decay_t<decltype(st)>;
        const PhaseGrid& g = st.grid();
        int n = 0, m = 0;
        if constexpr (std::is_same_v<T, MeanFieldState>) {
          n = m = static_cast<int>(st.rho.rows());
        } else if constexpr (std::is_same_v<T, HybridDensity>) {
          n = m = st.dim();
        } else if constexpr (std::is_same_v<T, ConditionalSplit>) {
          n = st.dim();
          m = 1;
        } else {
          n = st.dim();
          m = st.ancilla();
        }
        os << "MQCGRID 1 " << representation_name(s) << ' ' << g.nq() << ' ' << g.np() << ' ' << n << ' ' << m << ' '
           << format_number(g.q0()) << ' ' << format_number(g.q1()) << ' ' << format_number(g.p0()) << ' '
           << format_number(g.p1()) << ' ' << format_number(g.hbar()) << '\n';
        for (std::size_t k = 0; k < g.points(); ++k) {
          if constexpr (std::is_same_v<T, HybridDensity>) {
            put_complex_block(os, st.P.at(k), n * n);
          } else if constexpr (std::is_same_v<T, MeanFieldState>) {
            os << ' ' << format_number(st.D[k]);
          } else if constexpr (std::is_same_v<T, ConditionalSplit>) {
            os << ' ' << format_number(st.D[k]);
            put_complex_block(os, st.psi.at(k), n);
          } else {
            os << ' ' << format_number(st.D[k]);
            put_complex_block(os, st.W.at(k), n * m);
          }
          os << '\n';
        }
        if constexpr (std::is_same_v<T, MeanFieldState>) {
          os << "RHO";
          for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
              os << ' ' << format_number(st.rho(r, c).real()) << ' ' << format_number(st.rho(r, c).imag());
          os << '\n';
        }
      },
      s);
}

ModelState read_snapshot(std::istream& is) {
  std::string magic, rep;
  int version = 0, nq = 0, np = 0, n = 0, m = 0;
  if (!(is >> magic) || magic != "MQCGRID") throw InvalidInput("snapshot: missing MQCGRID header");
  if (!(is >> version) || version != 1) throw InvalidInput("snapshot: unsupported version");
  if (!(is >> rep >> nq >> np >> n >> m)) throw InvalidInput("snapshot: malformed header");
  if (nq <= 0 || np <= 0 || n <= 0 || m <= 0 || n > kMaxDim || m > kMaxDim)
    throw InvalidInput("snapshot: bad dimensions in header");
  const double q0 = take(is, "header"), q1 = take(is, "header"), p0 = take(is, "header"), p1 = take(is, "header"),
               hbar = take(is, "header");
  const PhaseGrid g(q0, q1, p0, p1, nq, np, hbar);
  if (rep == "density") {
    HybridDensity P{MatrixField(g, n, n)};
    for (std::size_t k = 0; k < g.points(); ++k) take_complex_block(is, P.P.at(k), n * n);
    return P;
  }
  if (rep == "conditional") {
    ConditionalSplit s{ScalarField(g), StateField(g, n, 1)};
    for (std::size_t k = 0; k < g.points(); ++k) {
      s.D[k] = take(is, "D");
      take_complex_block(is, s.psi.at(k), n);
    }
    return s;
  }
  if (rep == "uhlmann") {
    UhlmannSplit s{ScalarField(g), WaveOpField(g, n, m)};
    for (std::size_t k = 0; k < g.points(); ++k) {
      s.D[k] = take(is, "D");
      take_complex_block(is, s.W.at(k), n * m);
    }
    return s;
  }
  if (rep == "mean_field") {
    MeanFieldState s{ScalarField(g), SmallMatrix::Zero(n, n)};
    for (std::size_t k = 0; k < g.points(); ++k) s.D[k] = take(is, "D");
    std::string tag;
    if (!(is >> tag) || tag != "RHO") throw InvalidInput("snapshot: missing RHO line");
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const double re = take(is, "rho"), im = take(is, "rho");
        s.rho(r, c) = cplx(re, im);
      }
    return s;
  }
  throw InvalidInput("snapshot: unknown representation '" + rep + "'");
}

void write_snapshot_file(const std::filesystem::path& path, const ModelState& s) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot write " + path.string());
  write_snapshot(os, s);
}

ModelState read_snapshot_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read snapshot " + path.string());
  return read_snapshot(is);
}

// ------------------------------------------------------------------------ CSV

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {"t",        "mass",      "energy",        "C1",         "C2",
                                                "S_pure",   "S_uhlmann", "renyi_alpha",   "purity",     "lambda_min",
                                                "lambda_max", "poincare", "antiherm_resid"};
  return cols;
}

namespace {

std::array<std::optional<double>*, 12> row_slots(DiagnosticRow& r) {
  return {&r.mass,   &r.energy,     &r.C1,         &r.C2,       &r.S_pure,  &r.S_uhlmann,
          &r.renyi,  &r.purity,     &r.lambda_min, &r.lambda_max, &r.poincare, &r.antiherm};
}

}  // namespace

std::optional<double> column_value(const DiagnosticRow& row, std::size_t col) {
  if (col == 0) return row.t;
  DiagnosticRow r = row;
  const auto slots = row_slots(r);
  if (col > slots.size()) throw InvalidInput("column index out of range");
  return *slots[col - 1];
}

void write_csv_header(std::ostream& os) {
  const auto& cols = csv_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
  os << '\n';
}

void write_csv_row(std::ostream& os, const DiagnosticRow& row) {
  DiagnosticRow r = row;
  os << format_number(r.t);
  for (auto* slot : row_slots(r)) {
    os << ',';
    if (*slot) os << format_number(**slot);
  }
  os << '\n';
}

void write_csv(std::ostream& os, const DiagnosticSeries& series) {
  write_csv_header(os);
  for (const auto& r : series.rows) write_csv_row(os, r);
}

DiagnosticSeries read_csv(std::istream& is) {
  DiagnosticSeries out;
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("csv: empty input");
  std::ostringstream hdr;
  write_csv_header(hdr);
  if (line + "\n" != hdr.str()) throw InvalidInput("csv: unexpected header '" + line + "'");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != csv_columns().size()) throw InvalidInput("csv: wrong cell count in '" + line + "'");
    DiagnosticRow r;
    r.t = std::stod(cells[0]);
    auto slots = row_slots(r);
    for (std::size_t c = 0; c < slots.size(); ++c)
      if (!cells[c + 1].empty()) *slots[c] = std::stod(cells[c + 1]);
    out.rows.push_back(r);
  }
  return out;
}

DiagnosticSeries read_csv_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read " + path.string());
  return read_csv(is);
}

}  // namespace mqc
