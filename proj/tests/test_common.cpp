#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dccool/common.hpp"

using namespace dccool;

TEST_CASE("rng: identical seeds produce identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(a.uniform() == b.uniform());
    REQUIRE(a.normal() == b.normal());
  }
}

TEST_CASE("rng: different seeds diverge") {
  Rng a(1), b(2);
  bool any_diff = false;
  for (int i = 0; i < 16; ++i) any_diff |= (a.uniform() != b.uniform());
  REQUIRE(any_diff);
}

TEST_CASE("rng: uniform stays in [0,1) and uniform(lo,hi) in range") {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double v = r.uniform(-3.0, 5.0);
    REQUIRE(v >= -3.0);
    REQUIRE(v < 5.0);
  }
}

TEST_CASE("rng: normal has roughly standard moments") {
  Rng r(123);
  const int n = 40000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::abs(mean) < 0.03);
  REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng: uniform_int covers [0,n) only") {
  Rng r(5);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const int k = r.uniform_int(7);
    REQUIRE(k >= 0);
    REQUIRE(k < 7);
    seen[k]++;
  }
  for (int c : seen) REQUIRE(c > 0);
}

TEST_CASE("fnv1a64: stable known vectors and sensitivity") {
  // Reference values for the 64-bit FNV-1a parameters.
  REQUIRE(fnv1a64(std::string("")) == 0xcbf29ce484222325ull);
  REQUIRE(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cull);
  REQUIRE(fnv1a64(std::string("hello")) != fnv1a64(std::string("hellp")));
}

TEST_CASE("to_hex: fixed-width lowercase") {
  REQUIRE(to_hex(0) == "0000000000000000");
  REQUIRE(to_hex(0xdeadbeefull) == "00000000deadbeef");
  REQUIRE(to_hex(~0ull) == "ffffffffffffffff");
}

TEST_CASE("format_double: shortest form that round-trips exactly") {
  for (double v : {0.0, 1.0, -1.5, 0.1, 1.0 / 3.0, 2.5e-8, 3.62, 1e300}) {
    const std::string s = format_double(v);
    REQUIRE(std::strtod(s.c_str(), nullptr) == v);
  }
  REQUIRE(format_double(0.5) == "0.5");
  REQUIRE(format_double(2.0) == "2");
}

TEST_CASE("split and trim behave like the usual string helpers") {
  const auto parts = split("a,b,,c", ',');
  REQUIRE(parts == std::vector<std::string>{"a", "b", "", "c"});
  REQUIRE(split("", ',') == std::vector<std::string>{""});
  REQUIRE(trim("  x y\t\n") == "x y");
  REQUIRE(trim(" \t ") == "");
}

TEST_CASE("read_file/write_file round-trip and missing-file error") {
  const auto dir = std::filesystem::temp_directory_path() / "dccool_common_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "blob.txt").string();
  const std::string payload = "line1\nline2\t tab \x01 binary\n";
  write_file(path, payload);
  REQUIRE(read_file(path) == payload);
  REQUIRE_THROWS_AS(read_file((dir / "nope").string()), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("error taxonomy distinguishes config/data/shape/numeric") {
  REQUIRE_THROWS_AS(throw ConfigError("c"), std::runtime_error);
  REQUIRE_THROWS_AS(throw DataError("d"), std::runtime_error);
  // the classes are distinct so the CLI can map them to exit codes
  try {
    throw DataError("boom");
  } catch (const ConfigError&) {
    FAIL("DataError must not be caught as ConfigError");
  } catch (const DataError& e) {
    REQUIRE(std::string(e.what()) == "boom");
  }
}
