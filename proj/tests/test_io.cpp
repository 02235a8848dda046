#include "qlsr/io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qlsr;

TEST(SystemJson, RoundTripIsExactAndByteStable) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = random_realizable(3, 2, seed, -1.0, 1);
    const std::string a = canonical_dump(system_to_json(s));
    const auto back = system_from_json(parse_json_text(a));
    EXPECT_TRUE(back.A == s.A);
    EXPECT_TRUE(back.B == s.B);
    EXPECT_TRUE(back.C == s.C);
    EXPECT_TRUE(back.D == s.D);
    EXPECT_EQ(canonical_dump(system_to_json(back)), a);
  }
}

TEST(SystemJson, CanonicalLayout) {
  Mat A(2, 2), B = Mat::Identity(2, 2), C = Mat::Identity(2, 2), D = Mat::Identity(2, 2);
  A << -0.5, 0.1, -0.1, -0.5;
  const std::string s = canonical_dump(system_to_json({A, B, C, D}));
  // sorted keys (upper case before lower case), LF only, trailing newline
  EXPECT_EQ(s.rfind("{\n  \"A\"", 0), 0u);
  EXPECT_LT(s.find("\"D\""), s.find("\"l\""));
  EXPECT_LT(s.find("\"l\""), s.find("\"m\""));
  EXPECT_LT(s.find("\"m\""), s.find("\"n\""));
  EXPECT_EQ(s.find('\r'), std::string::npos);
  EXPECT_EQ(s.back(), '\n');
  // shortest round-trip formatting
  EXPECT_NE(s.find("0.1,"), std::string::npos);
  EXPECT_NE(s.find("-0.5"), std::string::npos);
  EXPECT_EQ(s.find("0.10000000000000001"), std::string::npos);
}

TEST(SystemJson, RejectsMalformedInput) {
  EXPECT_THROW(parse_json_text("{\"n\": 1,"), ParseError);
  EXPECT_THROW(parse_json_text("{\"x\": NaN}"), ParseError);
  const std::string good = canonical_dump(system_to_json(random_realizable(1, 1, 3)));
  auto j = parse_json_text(good);
  EXPECT_NO_THROW(system_from_json(j));
  auto k = j;
  k.erase("C");
  EXPECT_THROW(system_from_json(k), ParseError);
  k = j;
  k["n"] = 2;
  EXPECT_THROW(system_from_json(k), ParseError);
  k = j;
  k["A"][0][0] = "x";
  EXPECT_THROW(system_from_json(k), ParseError);
  k = j;
  k["m"] = 0;
  EXPECT_THROW(system_from_json(k), ParseError);
  k = j;
  k["n"] = 1.5;
  EXPECT_THROW(system_from_json(k), ParseError);
  EXPECT_THROW(system_from_json(parse_json_text("[1, 2]")), ParseError);
  // overflowing literals parse to infinity and must be rejected
  std::string big = good;
  const auto pos = big.find("\"A\": [\n    [\n      ") + std::string("\"A\": [\n    [\n      ").size();
  big.insert(pos, "1e999, ");
  big.erase(big.find(',', pos + 7), std::string::npos);
  EXPECT_ANY_THROW(system_from_json(parse_json_text(big)));
  k = j;
  k["B"][0][0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(system_from_json(k), ParseError);
}

TEST(SystemJson, ComplexAnnihilationForm) {
  Vec om(2), ka(2);
  om << 1.0, -2.0;
  ka << 0.5, 2.0;
  const auto ps = cascade_complex(om, ka);
  auto cm = [](const CMat& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index k = 0; k < M.cols(); ++k) row.push_back({{"re", M(i, k).real()}, {"im", M(i, k).imag()}});
      rows.push_back(row);
    }
    return rows;
  };
  json j = {{"n", 2}, {"m", 1}, {"l", 1}, {"F", cm(ps.F)}, {"G", cm(ps.G)}, {"H", cm(ps.H)}, {"K", cm(ps.K)}};
  const auto s = system_from_json(j);
  const auto ref = example_cascade(om, ka);
  EXPECT_TRUE(s.A == ref.A);
  EXPECT_TRUE(s.B == ref.B);
  EXPECT_TRUE(s.C == ref.C);
  EXPECT_TRUE(s.D == ref.D);
  // complex entries are refused in the quadrature form
  json q = system_to_json(ref);
  q["A"][0][0] = {{"re", 1.0}, {"im", 0.5}};
  EXPECT_THROW(system_from_json(q), ParseError);
}

TEST(Fingerprint, Fnv1aReferenceVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  const auto s = random_realizable(2, 1, 4);
  EXPECT_EQ(system_fingerprint(s), system_fingerprint(system_from_json(system_to_json(s))));
  auto t = s;
  t.A(0, 0) = std::nextafter(t.A(0, 0), 1.0);
  EXPECT_NE(system_fingerprint(s), system_fingerprint(t));
}

TEST(ResultJson, SchemaAndPassiveMarker) {
  ReductionResult r;
  r.reduced = QuantumLinearSystem(-0.5 * Mat::Identity(2, 2), Mat::Identity(2, 2), -Mat::Identity(2, 2),
                                  Mat::Identity(2, 2));
  r.projection.T = Mat::Zero(2, 4);
  r.projection.T.leftCols(2).setIdentity();
  r.projection.V = r.projection.T.transpose();
  r.passive = true;
  r.h2_error = 0.25;
  r.gamma = std::numeric_limits<double>::infinity();
  r.report.checks.push_back({"hurwitz", -0.5, 0.0, true, true});
  ReductionOptions o;
  o.seed = 42;
  const json j = result_to_json(r, "00ff", o);
  EXPECT_TRUE(j["passive"].get<bool>());
  EXPECT_EQ(j["form"], "q");
  EXPECT_TRUE(j["gamma"].is_null());
  EXPECT_EQ(j["h2_error"].get<double>(), 0.25);
  EXPECT_EQ(j["provenance"]["input_hash"], "00ff");
  EXPECT_EQ(j["provenance"]["seed"].get<std::uint64_t>(), 42u);
  EXPECT_TRUE(j["residuals"].contains("b_overwrite"));
  EXPECT_FALSE(j["residuals"].contains("intertwining"));
  EXPECT_EQ(j["report"][0]["name"], "hurwitz");
  const auto back = system_from_json(j["reduced"]);
  EXPECT_TRUE(back.A == r.reduced.A);
  // canonical text is reproducible
  EXPECT_EQ(canonical_dump(j), canonical_dump(result_to_json(r, "00ff", o)));
  EXPECT_NE(result_report_text(r).find("certified: no"), std::string::npos);
}
