#pragma once

// JSON I/O for systems and reduction results.  Requires nlohmann/json
// (vendor/json.hpp).  Objects are written with sorted keys, two-space
// indentation, shortest round-trip doubles and a trailing LF.

#include "qlsr/passive.hpp"
#include "qlsr/reduce.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace qlsr {

using json = nlohmann::json;

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

inline json matrix_to_json(const Mat& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < M.cols(); ++k) {
      if (!std::isfinite(M(i, k))) throw std::invalid_argument("matrix_to_json: non-finite entry");
      row.push_back(M(i, k));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Row-major nested array.  Entries may be plain numbers, or {"re","im"} objects
// when complex input is allowed.
inline CMat cmatrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!j.is_array() || Eigen::Index(j.size()) != rows)
    throw ParseError(what + ": expected " + std::to_string(rows) + " rows");
  CMat M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[size_t(i)];
    if (!row.is_array() || Eigen::Index(row.size()) != cols)
      throw ParseError(what + ": row " + std::to_string(i) + " should have " + std::to_string(cols) + " entries");
    for (Eigen::Index k = 0; k < cols; ++k) {
      const auto& e = row[size_t(k)];
      double re = 0, im = 0;
      if (e.is_number()) {
        re = e.get<double>();
      } else if (e.is_object() && e.contains("re") && e.contains("im") && e["re"].is_number() &&
                 e["im"].is_number()) {
        re = e["re"].get<double>();
        im = e["im"].get<double>();
      } else {
        throw ParseError(what + ": entry (" + std::to_string(i) + "," + std::to_string(k) + ") is not a number");
      }
      if (!std::isfinite(re) || !std::isfinite(im))
        throw ParseError(what + ": non-finite entry (" + std::to_string(i) + "," + std::to_string(k) + ")");
      M(i, k) = cplx(re, im);
    }
  }
  return M;
}

inline Mat matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  const CMat M = cmatrix_from_json(j, rows, cols, what);
  if (M.imag().cwiseAbs().maxCoeff() > 0) throw ParseError(what + ": complex entries in a real matrix");
  return M.real();
}

inline json system_to_json(const QuantumLinearSystem& s) {
  s.validate();
  json j;
  j["n"] = s.n;
  j["m"] = s.m;
  j["l"] = s.l;
  j["A"] = matrix_to_json(s.A);
  j["B"] = matrix_to_json(s.B);
  j["C"] = matrix_to_json(s.C);
  j["D"] = matrix_to_json(s.D);
  return j;
}

// Quadrature form {"n","m","l","A","B","C","D"} (2n x 2n etc.), or the
// annihilation-operator form {"n","m","l","F","G","H","K"} with n x n complex
// blocks, converted to quadratures.
inline QuantumLinearSystem system_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("system: expected a JSON object");
  auto count = [&](const char* k) {
    if (!j.contains(k) || !j[k].is_number_integer()) throw ParseError(std::string("system: missing integer \"") + k + "\"");
    const auto v = j[k].get<long long>();
    if (v < 0 || v > 100000) throw ParseError(std::string("system: \"") + k + "\" out of range");
    return Eigen::Index(v);
  };
  const auto n = count("n"), m = count("m"), l = count("l");
  if (m < 1 || l < 1) throw ParseError("system: need m >= 1 and l >= 1");
  auto field = [&](const char* k) -> const json& {
    if (!j.contains(k)) throw ParseError(std::string("system: missing \"") + k + "\"");
    return j[k];
  };
  if (j.contains("F")) {
    PassiveComplexSystem ps;
    ps.F = cmatrix_from_json(field("F"), n, n, "F");
    ps.G = cmatrix_from_json(field("G"), n, m, "G");
    ps.H = cmatrix_from_json(field("H"), l, n, "H");
    ps.K = cmatrix_from_json(field("K"), l, m, "K");
    return annihilation_to_quadrature(ps);
  }
  return {matrix_from_json(field("A"), 2 * n, 2 * n, "A"), matrix_from_json(field("B"), 2 * n, 2 * m, "B"),
          matrix_from_json(field("C"), 2 * l, 2 * n, "C"), matrix_from_json(field("D"), 2 * l, 2 * m, "D")};
}

inline json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

inline QuantumLinearSystem load_system(const std::string& path) {
  return system_from_json(parse_json_text(read_text_file(path)));
}

// 64-bit FNV-1a, hex.  Used as a provenance fingerprint of the input.
inline std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string system_fingerprint(const QuantumLinearSystem& s) {
  return fnv1a_hex(canonical_dump(system_to_json(s)));
}

inline json options_to_json(const ReductionOptions& o) {
  return {{"tol_real", o.tol_real},
          {"tol_eq", o.tol_eq},
          {"eps", o.eps},
          {"max_iter", o.max_iter},
          {"polish_iter", o.polish_iter},
          {"seed", o.seed},
          {"jitter_attempts", o.jitter_attempts},
          {"max_candidates", o.max_candidates},
          {"cross_check_tol", o.cross_check_tol},
          {"stationarity_tol", o.stationarity_tol},
          {"descent_margin", o.descent_margin},
          {"polish", o.polish}};
}

inline json residuals_to_json(const Residuals& r) { return {{"r1", r.r1}, {"r2", r.r2}, {"r3", r.r3}}; }

inline json summary_to_json(const SolverSummary& s) {
  return {{"warm_start", s.warm_start},
          {"warm_start_violation", s.warm_start_violation},
          {"lmi_gamma", s.lmi_gamma},
          {"lmi_newton_steps", s.lmi_newton_steps},
          {"lifting_iterations", s.lifting_iterations},
          {"refine_iterations", s.refine_iterations},
          {"lifting_converged", s.lifting_converged},
          {"lifting_stagnated", s.lifting_stagnated},
          {"coupling_residual", s.coupling_residual},
          {"recovery", s.recovery},
          {"jitter_used", s.jitter_used},
          {"polish_iterations", s.polish_iterations},
          {"polish_stop", s.polish_stop},
          {"start_h2", s.start_h2},
          {"modes", s.modes},
          {"basis", s.basis},
          {"candidates_screened", s.candidates_screened},
          {"candidates_run", s.candidates_run},
          {"seconds", s.seconds}};
}

// Non-finite values (an unstable result has no H2 error) are written as null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json result_to_json(const ReductionResult& r, const std::string& input_hash, const ReductionOptions& opt) {
  json j;
  j["passive"] = r.passive;
  j["form"] = r.form == Form::Q ? "q" : "p";
  j["certified"] = r.certified;
  j["stable"] = r.stable;
  j["reduced"] = system_to_json(r.reduced);
  j["projection"] = {{"T", matrix_to_json(r.projection.T)}, {"V", matrix_to_json(r.projection.V)}};
  j["gamma"] = finite_or_null(r.gamma);
  j["h2_error"] = finite_or_null(r.h2_error);
  j["h2_squared"] = finite_or_null(r.h2_squared);
  j["h2_quadrature"] = finite_or_null(r.h2_quadrature);
  json res;
  res["realizability"] = residuals_to_json(r.realizability);
  if (r.passive) {
    res["passive"] = residuals_to_json(r.passive_residuals);
    res["b_overwrite"] = r.b_overwrite;
    res["t_minus_vt"] = r.symmetry;
  } else {
    res["intertwining"] = r.intertwining;
  }
  res["tv_minus_i"] = r.tv;
  res["stationarity"] = {{"c", r.necessary.rho_C}, {"b", r.necessary.rho_B}, {"pq", r.necessary.rho_PQ},
                         {"c_rel", r.necessary.rel_C}, {"b_rel", r.necessary.rel_B},
                         {"pq_rel", r.necessary.rel_PQ}};
  j["residuals"] = res;
  json checks = json::array();
  for (const auto& c : r.report.checks)
    checks.push_back({{"name", c.name}, {"value", finite_or_null(c.value)},
                      {"threshold", finite_or_null(c.threshold)}, {"pass", c.pass}, {"gating", c.gating}});
  j["report"] = checks;
  j["solver"] = summary_to_json(r.summary);
  j["provenance"] = {{"input_hash", input_hash}, {"seed", opt.seed}, {"options", options_to_json(opt)}};
  return j;
}

inline std::string result_report_text(const ReductionResult& r) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << (r.passive ? "passive" : "active") << " reduction, " << (r.form == Form::Q ? "q" : "p") << " form, "
     << r.reduced.n << " mode(s)\n";
  os << "certified: " << (r.certified ? "yes" : "no") << "\n";
  os << "H2 error: " << r.h2_error << "  (squared " << r.h2_squared << ", quadrature " << r.h2_quadrature
     << ", gamma " << r.gamma << ")\n";
  os << "time unit: rates in Hz as given in the input, frequencies in rad/s\n";
  os << "checks:\n";
  for (const auto& c : r.report.checks)
    os << "  " << std::left << std::setw(22) << c.name << (c.pass ? "pass" : (c.gating ? "FAIL" : "note"))
       << "  " << c.value << " (limit " << c.threshold << ")\n";
  const auto& s = r.summary;
  os << "solver: warm start " << s.warm_start << ", lifting " << s.lifting_iterations << "+" << s.refine_iterations
     << " it (" << (s.lifting_converged ? "converged" : (s.lifting_stagnated ? "stagnated" : "budget")) << "), recovery "
     << s.recovery << ", descent " << s.polish_iterations << " it (" << s.polish_stop << "), basis " << s.basis
     << ", " << s.candidates_run << "/" << s.candidates_screened << " candidates, " << s.seconds << " s\n";
  return os.str();
}

}  // namespace qlsr
