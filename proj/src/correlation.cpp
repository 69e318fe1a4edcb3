#include "parakit/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>

#include "parakit/errors.hpp"

namespace parakit {
namespace {

void check_inputs(const std::vector<double>& x, const std::vector<double>& y,
                  const char* what) {
  if (x.size() != y.size()) {
    fail_contract(std::string(what) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                  std::to_string(y.size()));
  }
  if (x.size() < 2) fail_contract(std::string(what) + ": need at least two points");
  for (double v : x) {
    if (!std::isfinite(v)) fail_numeric(std::string(what) + ": non-finite input");
  }
  for (double v : y) {
    if (!std::isfinite(v)) fail_numeric(std::string(what) + ": non-finite input");
  }
}

// Counts strict inversions in y while merge sorting.
long long merge_count(std::vector<double>& y, std::vector<double>& scratch, size_t lo, size_t hi) {
  if (hi - lo < 2) return 0;
  size_t mid = lo + (hi - lo) / 2;
  long long count = merge_count(y, scratch, lo, mid) + merge_count(y, scratch, mid, hi);
  size_t i = lo;
  size_t j = mid;
  size_t k = lo;
  while (i < mid && j < hi) {
    if (y[j] < y[i]) {
      count += static_cast<long long>(mid - i);
      scratch[k++] = y[j++];
    } else {
      scratch[k++] = y[i++];
    }
  }
  while (i < mid) scratch[k++] = y[i++];
  while (j < hi) scratch[k++] = y[j++];
  std::copy(scratch.begin() + lo, scratch.begin() + hi, y.begin() + lo);
  return count;
}

long long tied_pairs(const std::vector<double>& sorted) {
  long long total = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    long long run = static_cast<long long>(j - i);
    total += run * (run - 1) / 2;
    i = j;
  }
  return total;
}

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check_inputs(x, y, "pearson");
  const size_t n = x.size();
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx;
    double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail_degenerate("pearson: constant input has no defined correlation");
  }
  return sxy / std::sqrt(sxx * syy);
}

double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  check_inputs(x, y, "kendall_tau_b");
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
  long long n1 = 0;  // pairs tied in x
  long long n3 = 0;  // pairs tied in both
  {
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j < n && x[order[j]] == x[order[i]]) ++j;
      long long run = static_cast<long long>(j - i);
      n1 += run * (run - 1) / 2;
      size_t a = i;
      while (a < j) {
        size_t b = a;
        while (b < j && y[order[b]] == y[order[a]]) ++b;
        long long joint = static_cast<long long>(b - a);
        n3 += joint * (joint - 1) / 2;
        a = b;
      }
      i = j;
    }
  }
  std::vector<double> y_by_x(n);
  for (size_t i = 0; i < n; ++i) y_by_x[i] = y[order[i]];
  std::vector<double> scratch(n);
  long long swaps = merge_count(y_by_x, scratch, 0, n);
  // y_by_x is now sorted, which is exactly what the y-tie count needs.
  long long n2 = tied_pairs(y_by_x);

  if (n0 == n1 || n0 == n2) {
    fail_degenerate("kendall_tau_b: fully tied input has no defined correlation");
  }
  double numerator = static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps);
  double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
  return numerator / denom;
}

MetricReport evaluate_metric(const std::string& metric_name,
                             const std::vector<std::string>& groups,
                             const std::vector<double>& metric_values,
                             const std::vector<double>& human_scores) {
  if (groups.size() != metric_values.size() || groups.size() != human_scores.size()) {
    fail_contract("evaluate_metric: column lengths differ");
  }
  if (groups.empty()) fail_contract("evaluate_metric: no rows");

  std::map<std::string, std::vector<size_t>> by_group;
  for (size_t i = 0; i < groups.size(); ++i) by_group[groups[i]].push_back(i);

  MetricReport report;
  report.metric = metric_name;
  double sum_r = 0.0;
  double sum_tau = 0.0;
  for (const auto& [name, idx] : by_group) {
    GroupResult g;
    g.group = name;
    g.n = static_cast<int>(idx.size());
    if (idx.size() < 2) {
      g.status = GroupStatus::skipped_small;
      std::cerr << "warning: group '" << name << "' has " << idx.size()
                << " item(s); skipping\n";
      report.groups.push_back(g);
      continue;
    }
    std::vector<double> mv;
    std::vector<double> hs;
    mv.reserve(idx.size());
    hs.reserve(idx.size());
    for (size_t i : idx) {
      mv.push_back(metric_values[i]);
      hs.push_back(human_scores[i]);
    }
    try {
      g.pearson_abs = std::fabs(pearson(mv, hs));
      g.kendall_abs = std::fabs(kendall_tau_b(mv, hs));
      g.status = GroupStatus::ok;
      sum_r += g.pearson_abs;
      sum_tau += g.kendall_abs;
      ++report.groups_used;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
      g.status = GroupStatus::degenerate_metric;
      g.pearson_abs = 0.0;
      g.kendall_abs = 0.0;
    }
    report.groups.push_back(g);
  }
  if (report.groups_used == 0) {
    fail_degenerate("evaluate_metric: no usable groups for metric '" + metric_name + "'");
  }
  report.mean_pearson_abs = sum_r / report.groups_used;
  report.mean_kendall_abs = sum_tau / report.groups_used;
  return report;
}

namespace {

const char* status_name(GroupStatus s) {
  switch (s) {
    case GroupStatus::ok:
      return "ok";
    case GroupStatus::skipped_small:
      return "skipped_small";
    case GroupStatus::degenerate_metric:
      return "degenerate_metric";
  }
  return "unknown";
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string report_csv(const std::vector<MetricReport>& reports) {
  std::string out = "metric,group,n,status,pearson_abs,kendall_abs\n";
  for (const auto& r : reports) {
    for (const auto& g : r.groups) {
      out += r.metric + "," + g.group + "," + std::to_string(g.n) + "," + status_name(g.status) +
             "," + fmt6(g.pearson_abs) + "," + fmt6(g.kendall_abs) + "\n";
    }
    out += r.metric + ",__mean__," + std::to_string(r.groups_used) + ",ok," +
           fmt6(r.mean_pearson_abs) + "," + fmt6(r.mean_kendall_abs) + "\n";
  }
  return out;
}

std::string report_markdown(const std::vector<MetricReport>& reports) {
  std::string out = "| metric | groups used | mean abs pearson | mean abs kendall |\n";
  out += "|---|---|---|---|\n";
  for (const auto& r : reports) {
    out += "| " + r.metric + " | " + std::to_string(r.groups_used) + " | " +
           fmt6(r.mean_pearson_abs) + " | " + fmt6(r.mean_kendall_abs) + " |\n";
  }
  return out;
}

}  // namespace parakit
