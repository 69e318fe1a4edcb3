#pragma once

#include <string>
#include <vector>

namespace parakit {

// Pearson correlation with 64-bit accumulation. A constant input vector has
// no defined correlation and raises a degenerate error.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Kendall tau-b computed in O(n log n) with a merge-sort inversion count,
// with tie corrections in both variables. Degenerate when either vector is
// fully tied.
double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y);

enum class GroupStatus { ok, skipped_small, degenerate_metric };

struct GroupResult {
  std::string group;
  int n = 0;
  GroupStatus status = GroupStatus::ok;
  double pearson_abs = 0.0;
  double kendall_abs = 0.0;
};

struct MetricReport {
  std::string metric;
  std::vector<GroupResult> groups;
  int groups_used = 0;
  // Unweighted means of |r| and |tau| over groups with status ok.
  double mean_pearson_abs = 0.0;
  double mean_kendall_abs = 0.0;
};

// Correlates metric values against human scores within each group and averages
// the absolute correlations over usable groups. Groups with fewer than two
// items are skipped; groups where the metric is constant are flagged and
// excluded from the means. Raises a degenerate error when no group is usable.
MetricReport evaluate_metric(const std::string& metric_name,
                             const std::vector<std::string>& groups,
                             const std::vector<double>& metric_values,
                             const std::vector<double>& human_scores);

std::string report_csv(const std::vector<MetricReport>& reports);
std::string report_markdown(const std::vector<MetricReport>& reports);

}  // namespace parakit
