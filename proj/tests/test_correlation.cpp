#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "parakit/correlation.hpp"
#include "parakit/errors.hpp"
#include "parakit/rng.hpp"

using namespace parakit;

namespace {

// Textbook Pearson via raw sums rather than centered accumulators.
double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  double cov = sxy - sx * sy / n;
  double vx = sxx - sx * sx / n;
  double vy = syy - sy * sy / n;
  return cov / std::sqrt(vx * vy);
}

// Quadratic pair classification for tau-b.
double oracle_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  long long concordant = 0, discordant = 0, tied_x = 0, tied_y = 0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double dx = x[i] - x[j];
      double dy = y[i] - y[j];
      if (dx == 0) ++tied_x;
      if (dy == 0) ++tied_y;
      if (dx == 0 || dy == 0) continue;
      if (dx * dy > 0) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
  double denom = std::sqrt(static_cast<double>(n0 - tied_x)) *
                 std::sqrt(static_cast<double>(n0 - tied_y));
  return static_cast<double>(concordant - discordant) / denom;
}

}  // namespace

TEST_CASE("pearson hand values") {
  std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y = {5, 7, 9, 11, 13};
  CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-14));
  std::vector<double> neg = {13, 11, 9, 7, 5};
  CHECK(pearson(x, neg) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(pearson({1, 2, 3}, {1, 3, 2}) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("pearson error taxonomy") {
  try {
    pearson({1, 1, 1}, {1, 2, 3});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
  try {
    pearson({1, 2}, {1, 2, 3});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::contract);
  }
  try {
    pearson({1}, {2});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::contract);
  }
  try {
    pearson({1, std::nan("")}, {1, 2});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
  }
}

TEST_CASE("pearson matches raw-sum oracle on random data") {
  SeededRng rng(521);
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = 2 + static_cast<size_t>(rng.uniform_int(60));
    std::vector<double> x(n), y(n);
    for (size_t i = 0; i < n; ++i) {
      x[i] = rng.normal() * 3.0 + 1.0;
      y[i] = 0.5 * x[i] + rng.normal();
    }
    CHECK(pearson(x, y) == doctest::Approx(oracle_pearson(x, y)).epsilon(1e-10));
  }
}

TEST_CASE("kendall hand values") {
  CHECK(kendall_tau_b({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
  CHECK(kendall_tau_b({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Two tied x-runs against strictly increasing y: 4 concordant pairs of 6,
  // with 2 x-tied pairs.
  CHECK(kendall_tau_b({1, 1, 2, 2}, {1, 2, 3, 4}) ==
        doctest::Approx(4.0 / std::sqrt(24.0)).epsilon(1e-14));
}

TEST_CASE("kendall degenerate and contract errors") {
  try {
    kendall_tau_b({2, 2, 2}, {1, 2, 3});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
  try {
    kendall_tau_b({1, 2, 3}, {5, 5, 5});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
  CHECK_THROWS_AS(kendall_tau_b({1}, {1}), Error);
}

TEST_CASE("kendall matches quadratic pair oracle") {
  SeededRng rng(531);
  for (int trial = 0; trial < 300; ++trial) {
    size_t n = 2 + static_cast<size_t>(rng.uniform_int(60));
    std::vector<double> x(n), y(n);
    double mode = rng.uniform();
    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      for (size_t i = 0; i < n; ++i) {
        if (mode < 0.4) {
          x[i] = rng.normal();
          y[i] = rng.normal();
        } else if (mode < 0.7) {
          x[i] = static_cast<double>(rng.uniform_int(5));
          y[i] = static_cast<double>(rng.uniform_int(5));
        } else {
          x[i] = static_cast<double>(rng.uniform_int(4));
          y[i] = x[i] + (rng.uniform() < 0.3 ? 1.0 : 0.0);
        }
      }
      auto constant = [](const std::vector<double>& v) {
        for (double a : v) {
          if (a != v[0]) return false;
        }
        return true;
      };
      ok = !constant(x) && !constant(y);
    }
    if (!ok) continue;
    CHECK(kendall_tau_b(x, y) == doctest::Approx(oracle_tau_b(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_metric averages usable groups") {
  std::vector<std::string> groups = {"a", "a", "a", "a", "b", "b", "b", "solo", "c", "c"};
  std::vector<double> metric = {0.9, 0.8, 0.7, 0.6, 0.1, 0.2, 0.3, 0.5, 0.4, 0.4};
  std::vector<double> human = {4, 3, 2, 1, 3, 2, 1, 2, 1, 2};
  auto report = evaluate_metric("demo", groups, metric, human);
  REQUIRE(report.groups.size() == 4);
  CHECK(report.groups[0].group == "a");
  CHECK(report.groups[0].status == GroupStatus::ok);
  CHECK(report.groups[0].pearson_abs == doctest::Approx(1.0));
  CHECK(report.groups[0].kendall_abs == doctest::Approx(1.0));
  CHECK(report.groups[1].group == "b");
  CHECK(report.groups[1].status == GroupStatus::ok);
  CHECK(report.groups[1].pearson_abs == doctest::Approx(1.0));
  CHECK(report.groups[2].group == "c");
  CHECK(report.groups[2].status == GroupStatus::degenerate_metric);
  CHECK(report.groups[3].group == "solo");
  CHECK(report.groups[3].status == GroupStatus::skipped_small);
  CHECK(report.groups_used == 2);
  CHECK(report.mean_pearson_abs == doctest::Approx(1.0));
  CHECK(report.mean_kendall_abs == doctest::Approx(1.0));
}

TEST_CASE("evaluate_metric with no usable groups is degenerate") {
  std::vector<std::string> groups = {"a", "b", "c", "c"};
  std::vector<double> metric = {0.1, 0.2, 0.5, 0.5};
  std::vector<double> human = {1, 2, 1, 2};
  try {
    evaluate_metric("demo", groups, metric, human);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
  CHECK_THROWS_AS(evaluate_metric("demo", {"a"}, {1.0, 2.0}, {1.0}), Error);
}

TEST_CASE("report formats") {
  std::vector<std::string> groups = {"g1", "g1", "g1"};
  std::vector<double> metric = {0.1, 0.5, 0.9};
  std::vector<double> human = {1, 2, 3};
  auto report = evaluate_metric("bleu", groups, metric, human);
  auto csv = report_csv({report});
  CHECK(csv.find("metric,group,n,status,pearson_abs,kendall_abs") == 0);
  CHECK(csv.find("bleu,g1,3,ok,1.000000,1.000000") != std::string::npos);
  CHECK(csv.find("bleu,__mean__,1,ok,1.000000,1.000000") != std::string::npos);
  auto md = report_markdown({report});
  CHECK(md.find("| metric |") == 0);
  CHECK(md.find("| bleu | 1 | 1.000000 | 1.000000 |") != std::string::npos);
}
