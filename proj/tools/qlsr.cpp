// qlsr: command-line front end for H2 reduction of linear quantum systems.
//
//   qlsr check  sys.json
//   qlsr reduce sys.json --order 2 [--method q|p] [--passive] [--grid 1e-2:1e2:100] [--out prefix]
//   qlsr h2     full.json reduced.json
//   qlsr bode   a.json [b.json ...] --grid wmin:wmax:ppd [--out file.csv]
//   qlsr gen    --n 4 --m 2 --seed 7 [--out sys.json]   (or --example optomech|cascade)
//   qlsr bench
//
// Exit codes: 0 success, 1 check/certification failure, 2 usage, parse or
// precondition error.  QLSR_LOG=0|1|2 sets stderr verbosity (default 1).

#include "qlsr/benchmarks.hpp"
#include "qlsr/io.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace qlsr;

namespace {

constexpr int kOk = 0, kFail = 1, kUsage = 2;

int log_level() {
  const char* v = std::getenv("QLSR_LOG");
  if (!v) return 1;
  const std::string s(v);
  if (s == "0" || s == "quiet") return 0;
  if (s == "2" || s == "debug") return 2;
  return 1;
}

void log(int level, const std::string& msg) {
  if (level <= log_level()) std::cerr << "qlsr: " << msg << "\n";
}

FrequencyGrid parse_grid(const std::string& spec) {
  FrequencyGrid g;
  const auto a = spec.find(':'), b = spec.rfind(':');
  if (a == std::string::npos || a == b) throw std::invalid_argument("--grid expects wmin:wmax:ppd");
  try {
    size_t used = 0;
    g.wmin = std::stod(spec.substr(0, a), &used);
    g.wmax = std::stod(spec.substr(a + 1, b - a - 1));
    g.ppd = std::stoi(spec.substr(b + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("--grid expects wmin:wmax:ppd, got " + spec);
  }
  if (!(g.wmin > 0 && g.wmax > g.wmin && g.ppd > 0))
    throw std::invalid_argument("--grid needs 0 < wmin < wmax and ppd > 0");
  return g;
}

// q-quadrature channel of every (output field, input field) pair.
std::vector<Channel> field_channels(int l, int m) {
  std::vector<Channel> ch;
  for (int k = 0; k < l; ++k)
    for (int j = 0; j < m; ++j) ch.push_back(field_channel(k, j));
  return ch;
}

struct CheckOutcome {
  json j;
  bool ok = false;
};

// tol is absolute here: a stored system is checked as given.
CheckOutcome check_system(const QuantumLinearSystem& s, double tol) {
  CheckOutcome out;
  const auto rr = realizability_residuals(s);
  const auto st = is_hurwitz(s.A, default_stability_margin(s.A));
  const bool realizable = rr.max() <= tol;
  out.j["n"] = s.n;
  out.j["m"] = s.m;
  out.j["l"] = s.l;
  out.j["tolerance"] = tol;
  out.j["realizability"] = residuals_to_json(rr);
  out.j["realizable"] = realizable;
  if (s.l == s.m) {
    const auto pr = passive_residuals(s);
    out.j["passive_residuals"] = residuals_to_json(pr);
    out.j["passive"] = pr.max() <= tol;
  }
  out.j["spectral_abscissa"] = st.abscissa;
  out.j["stable"] = st.stable;
  out.ok = realizable && st.stable;
  out.j["ok"] = out.ok;
  return out;
}

void print_check(const CheckOutcome& c) {
  const auto& j = c.j;
  std::cout << "modes " << j["n"] << ", input fields " << j["m"] << ", output fields " << j["l"] << "\n";
  std::cout << "realizability residuals: " << j["realizability"]["r1"] << " " << j["realizability"]["r2"] << " "
            << j["realizability"]["r3"] << " (limit " << j["tolerance"] << ")\n";
  if (j.contains("passive_residuals"))
    std::cout << "passive residuals: " << j["passive_residuals"]["r1"] << " " << j["passive_residuals"]["r2"]
              << " " << j["passive_residuals"]["r3"] << "\n";
  std::cout << "spectral abscissa: " << j["spectral_abscissa"] << (j["stable"].get<bool>() ? " (Hurwitz)" : " (not Hurwitz)")
            << "\n";
  std::cout << (c.ok ? "OK" : "FAILED") << "\n";
}

struct BenchRow {
  std::string name;
  std::string quantity;
  double target = 0, limit = 0, achieved = 0;
  double seconds = 0, time_limit = 0;
  bool certified = false, pass = false;
  std::string note;
};

BenchRow bench_optomech(const ReductionOptions& opt) {
  BenchRow row{"optomech r=2", "h2_error", kOptomechTargetH2, 1.10 * kOptomechTargetH2, 0, 0, 0, false, false, ""};
  row.time_limit = 60;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = reduce_h2_qform(optomech_benchmark(), 2, opt);
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  row.achieved = res.h2_error;
  row.certified = res.certified;
  row.note = "realizability " + std::to_string(res.realizability.max());
  row.pass = res.certified && res.h2_error <= row.limit && row.seconds <= row.time_limit;
  return row;
}

BenchRow bench_cascade(const ReductionOptions& opt) {
  BenchRow row{"cascade passive r=2", "h2_squared", kCascadeTargetH2Squared, 1.10 * kCascadeTargetH2Squared, 0, 0, 0, false, false, ""};
  row.time_limit = 30;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = reduce_passive_qform(cascade_benchmark(), 2, opt);
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  row.achieved = res.h2_squared;
  row.certified = res.certified;
  row.note = "b_overwrite " + std::to_string(res.b_overwrite);
  row.pass = res.certified && res.h2_squared <= row.limit && row.seconds <= row.time_limit;
  return row;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"H2-optimal, physically realizable reduction of linear quantum systems"};
  app.require_subcommand(1);

  ReductionOptions opt;
  bool as_json = false;
  auto add_tolerances = [&](CLI::App* c) {
    c->add_option("--tol-real", opt.tol_real, "realizability tolerance, relative to the system scale")
        ->check(CLI::PositiveNumber);
    c->add_option("--tol-eq", opt.tol_eq, "coupling equality tolerance (lifting)")->check(CLI::PositiveNumber);
  };

  auto* check = app.add_subcommand("check", "realizability and stability report");
  std::string check_in;
  double check_tol = 1e-8;
  check->add_option("input", check_in, "system JSON")->required();
  check->add_option("--tol-real", check_tol, "absolute realizability tolerance")->check(CLI::PositiveNumber);
  check->add_flag("--json", as_json, "machine-readable output");

  auto* reduce = app.add_subcommand("reduce", "H2 reduction with certification");
  std::string red_in, out_prefix = "reduced", method = "q", grid_spec;
  int order = 0;
  bool passive = false;
  reduce->add_option("input", red_in, "system JSON")->required();
  reduce->add_option("--order", order, "reduced mode count")->required();
  reduce->add_option("--method", method, "q or p")->check(CLI::IsMember({"q", "p"}));
  reduce->add_flag("--passive", passive, "passive reduction (B_r = -C_r^T, D_r = I)");
  add_tolerances(reduce);
  reduce->add_option("--eps", opt.eps, "strict inequality margin, relative")->check(CLI::PositiveNumber);
  reduce->add_option("--max-iter", opt.max_iter, "lifting iterations")->check(CLI::PositiveNumber);
  reduce->add_option("--seed", opt.seed, "seed for the lifted-start jitter");
  reduce->add_option("--grid", grid_spec, "Bode grid wmin:wmax:ppd in rad/s");
  reduce->add_option("--out", out_prefix, "output prefix (writes .json, .txt and _bode.csv)");
  reduce->add_flag("--json", as_json, "print the result JSON to stdout");

  auto* h2 = app.add_subcommand("h2", "H2 norm of the difference of two systems");
  std::string h2_full, h2_red;
  h2->add_option("full", h2_full, "full system JSON")->required();
  h2->add_option("reduced", h2_red, "reduced system JSON")->required();
  h2->add_flag("--json", as_json, "machine-readable output");

  auto* bode = app.add_subcommand("bode", "frequency response CSV of one or more systems");
  std::vector<std::string> bode_in;
  std::string bode_grid = "1e-2:1e2:100", bode_out;
  bode->add_option("inputs", bode_in, "system JSON files")->required();
  bode->add_option("--grid", bode_grid, "wmin:wmax:ppd in rad/s");
  bode->add_option("--out", bode_out, "CSV path (stdout if omitted)");

  auto* gen = app.add_subcommand("gen", "random realizable, Hurwitz system");
  int gen_n = -1, gen_m = 1, gen_l = -1;
  std::string gen_out, gen_example;
  auto* gen_n_opt = gen->add_option("--n", gen_n, "modes");
  gen->add_option("--example", gen_example, "write a built-in example instead")
      ->check(CLI::IsMember({"optomech", "cascade"}))
      ->excludes(gen_n_opt);
  gen->add_option("--m", gen_m, "input fields");
  gen->add_option("--l", gen_l, "output fields (default m)");
  gen->add_option("--seed", opt.seed, "generator seed");
  gen->add_option("--out", gen_out, "output path (stdout if omitted)");

  auto* bench = app.add_subcommand("bench", "run both built-in benchmarks against their targets");
  bench->add_option("--seed", opt.seed, "seed for the lifted-start jitter");
  bench->add_option("--max-iter", opt.max_iter, "lifting iterations")->check(CLI::PositiveNumber);
  bench->add_flag("--json", as_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*check) {
      const auto s = load_system(check_in);
      const auto c = check_system(s, check_tol);
      if (as_json)
        std::cout << canonical_dump(c.j);
      else
        print_check(c);
      return c.ok ? kOk : kFail;
    }

    if (*reduce) {
      const std::string text = read_text_file(red_in);
      const auto full = system_from_json(parse_json_text(text));
      const Form form = method == "p" ? Form::P : Form::Q;
      std::optional<FrequencyGrid> grid;
      if (!grid_spec.empty()) grid = parse_grid(grid_spec);
      log(1, std::string(passive ? "passive" : "active") + " reduction to " + std::to_string(order) + " mode(s), " +
                 method + " form");
      const auto res = passive ? reduce_passive(full, order, form, opt) : reduce_h2(full, order, form, opt);
      const json j = result_to_json(res, fnv1a_hex(text), opt);
      write_text_file(out_prefix + ".json", canonical_dump(j));
      write_text_file(out_prefix + ".txt", result_report_text(res));
      if (grid) {
        const auto t = freq_response_export({{"full", full}, {"reduced", res.reduced}}, *grid,
                                            field_channels(full.l, full.m));
        write_text_file(out_prefix + "_bode.csv", t.to_csv());
      }
      if (log_level() >= 2) log(2, "lifting trace:\n" + res.summary.lifting_trace_csv);
      if (as_json)
        std::cout << canonical_dump(j);
      else
        std::cout << result_report_text(res);
      return res.certified ? kOk : kFail;
    }

    if (*h2) {
      const auto full = load_system(h2_full), red = load_system(h2_red);
      if (!(full.D == red.D)) throw std::invalid_argument("h2: feedthrough matrices differ, difference not strictly proper");
      if (!is_hurwitz(red.A).stable || !is_hurwitz(full.A).stable) {
        std::cerr << "qlsr: h2: system not Hurwitz, H2 norm undefined\n";
        return kFail;
      }
      const auto g = h2_report(full, red);
      const auto q = h2_norm_quadrature(full, red);
      json j = {{"h2", g.value}, {"h2_squared", g.squared}, {"h2_squared_alt", g.squared_alt},
                {"trace_rel_diff", g.rel_diff}, {"h2_quadrature", q.value}, {"quadrature_converged", q.converged}};
      if (as_json) {
        std::cout << canonical_dump(j);
      } else {
        std::cout << std::setprecision(10) << "H2 error (Gramian): " << g.value << "  squared " << g.squared << "\n"
                  << "H2 error (quadrature): " << q.value << "\n"
                  << "trace formulas relative difference: " << g.rel_diff << "\n";
      }
      return kOk;
    }

    if (*bode) {
      const auto grid = parse_grid(bode_grid);
      std::vector<std::pair<std::string, QuantumLinearSystem>> systems;
      for (const auto& p : bode_in) systems.push_back({std::filesystem::path(p).stem().string(), load_system(p)});
      for (const auto& [name, s] : systems)
        if (s.l != systems.front().second.l || s.m != systems.front().second.m)
          throw std::invalid_argument("bode: systems must have the same field counts");
      const auto& s0 = systems.front().second;
      const auto t = freq_response_export(systems, grid, field_channels(s0.l, s0.m));
      if (bode_out.empty())
        std::cout << t.to_csv();
      else
        write_text_file(bode_out, t.to_csv());
      return kOk;
    }

    if (*gen) {
      if (!gen_example.empty()) {
        const auto s = gen_example == "optomech" ? optomech_benchmark() : cascade_benchmark();
        const std::string text = canonical_dump(system_to_json(s));
        if (gen_out.empty())
          std::cout << text;
        else
          write_text_file(gen_out, text);
        return kOk;
      }
      if (gen_n < 1 || gen_m < 1) {
        std::cerr << "qlsr: gen: need --n >= 1 and --m >= 1\n";
        return kUsage;
      }
      const auto s = random_realizable(gen_n, gen_m, opt.seed, -1.0, gen_l < 0 ? gen_m : gen_l);
      const std::string text = canonical_dump(system_to_json(s));
      if (gen_out.empty())
        std::cout << text;
      else
        write_text_file(gen_out, text);
      return kOk;
    }

    if (*bench) {
      std::vector<BenchRow> rows;
      log(1, "running optomechanical benchmark");
      rows.push_back(bench_optomech(opt));
      log(1, "running cascade benchmark");
      rows.push_back(bench_cascade(opt));
      bool all = true;
      json arr = json::array();
      for (const auto& r : rows) {
        all = all && r.pass;
        arr.push_back({{"name", r.name}, {"quantity", r.quantity}, {"target", r.target}, {"limit", r.limit},
                       {"achieved", r.achieved}, {"certified", r.certified}, {"seconds", r.seconds},
                       {"time_limit", r.time_limit}, {"pass", r.pass}, {"note", r.note}});
      }
      if (as_json) {
        std::cout << canonical_dump({{"rows", arr}, {"pass", all}, {"seed", opt.seed}});
      } else {
        std::cout << std::left << std::setw(22) << "benchmark" << std::setw(12) << "quantity" << std::setw(10)
                  << "target" << std::setw(14) << "achieved" << std::setw(10) << "limit" << std::setw(11)
                  << "certified" << std::setw(10) << "seconds" << "result\n";
        for (const auto& r : rows)
          std::cout << std::left << std::setw(22) << r.name << std::setw(12) << r.quantity << std::setw(10)
                    << r.target << std::setw(14) << r.achieved << std::setw(10) << r.limit << std::setw(11)
                    << (r.certified ? "yes" : "no") << std::setw(10) << std::setprecision(3) << r.seconds
                    << std::setprecision(6) << (r.pass ? "PASS" : "FAIL") << "  " << r.note << "\n";
      }
      return all ? kOk : kFail;
    }
  } catch (const ParseError& e) {
    std::cerr << "qlsr: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "qlsr: precondition error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "qlsr: error: " << e.what() << "\n";
    return kFail;
  }
  return kUsage;
}
