#include "cmvf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cmvf/errors.hpp"

namespace cmvf {

double accuracy(std::span<const double> preds, std::span<const int> labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw ValidationError("accuracy: need equal-length non-empty inputs");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int predicted = preds[i] >= 0.5 ? 1 : 0;
    if (predicted == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double auc(std::span<const double> preds, std::span<const int> labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw ValidationError("auc: need equal-length non-empty inputs");
  }
  std::size_t n = preds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return preds[a] < preds[b]; });

  // averaged ranks over tie runs (1-based)
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && preds[order[j + 1]] == preds[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  std::size_t positives = 0;
  double positive_rank_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      ++positives;
      positive_rank_sum += rank[k];
    } else if (labels[k] != 0) {
      throw ValidationError("auc: label must be 0 or 1, got " + std::to_string(labels[k]));
    }
  }
  std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw ValidationError("auc: undefined for single-class input (" +
                          std::to_string(positives) + " positives of " + std::to_string(n) + ")");
  }
  double np = static_cast<double>(positives);
  double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double real_impr(double target_auc, double base_auc) {
  if (!(base_auc > 0.5)) {
    throw ValidationError("real_impr: base AUC must exceed 0.5, got " +
                          std::to_string(base_auc));
  }
  return ((target_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0;
}

namespace {

MetricsReport report_for(const std::string& group, std::span<const double> preds,
                         std::span<const int> labels, std::optional<double> base_auc) {
  MetricsReport r;
  r.group = group;
  r.n_records = preds.size();
  if (preds.empty()) return r;
  r.acc = accuracy(preds, labels);
  bool has_pos = false, has_neg = false;
  for (int y : labels) (y == 1 ? has_pos : has_neg) = true;
  if (has_pos && has_neg) {
    r.auc = auc(preds, labels);
    if (base_auc && *base_auc > 0.5) r.real_impr = real_impr(*r.auc, *base_auc);
  }
  return r;
}

}  // namespace

std::vector<MetricsReport> grouped_metrics(std::span<const double> preds,
                                           std::span<const int> labels,
                                           std::span<const RecordRef> records,
                                           const StudentGroups& groups,
                                           std::optional<double> base_auc) {
  if (preds.size() != labels.size() || preds.size() != records.size()) {
    throw ValidationError("grouped_metrics: preds, labels and records must align");
  }
  auto subset = [&](const std::vector<std::size_t>& members) {
    std::unordered_set<std::size_t> set(members.begin(), members.end());
    std::pair<std::vector<double>, std::vector<int>> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (set.contains(records[i].student)) {
        out.first.push_back(preds[i]);
        out.second.push_back(labels[i]);
      }
    }
    return out;
  };

  std::vector<MetricsReport> reports;
  reports.push_back(report_for("overall", preds, labels, base_auc));
  auto [fp, fl] = subset(groups.frequent);
  reports.push_back(report_for("frequent", fp, fl, base_auc));
  auto [ip, il] = subset(groups.infrequent);
  reports.push_back(report_for("infrequent", ip, il, base_auc));
  return reports;
}

std::vector<MetricsReport> group_report(const ModelParams& params, const Dataset& train,
                                        const Dataset& test, const StudentGroups& groups,
                                        const ObjectiveConfig& config,
                                        std::optional<double> base_auc) {
  if (test.total_events() == 0) throw ValidationError("group_report: empty test set");
  Dataset merged = merge_splits(train, test);

  std::vector<RecordRef> records;
  std::vector<int> labels;
  for (std::size_t s = 0; s < merged.sequences.size(); ++s) {
    std::size_t train_len = train.sequences[s].events.size();
    std::size_t total = merged.sequences[s].events.size();
    for (std::size_t t = train_len; t < total; ++t) {
      records.push_back({s, t});
      labels.push_back(merged.sequences[s].events[t].response);
    }
  }
  std::vector<double> preds = predict_records(params, merged, records, config);
  return grouped_metrics(preds, labels, records, groups, base_auc);
}

std::string format_report_table(std::span<const MetricsReport> reports) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-12s %8s %10s %10s %10s\n", "group", "records", "acc",
                "auc", "realimpr");
  os << line;
  for (const MetricsReport& r : reports) {
    std::string auc_s = r.auc ? [&] {
      char b[32];
      std::snprintf(b, sizeof(b), "%.4f", *r.auc);
      return std::string(b);
    }() : "undef";
    std::string ri_s = r.real_impr ? [&] {
      char b[32];
      std::snprintf(b, sizeof(b), "%.1f%%", *r.real_impr);
      return std::string(b);
    }() : "-";
    std::snprintf(line, sizeof(line), "%-12s %8zu %10.4f %10s %10s\n", r.group.c_str(),
                  r.n_records, r.acc, auc_s.c_str(), ri_s.c_str());
    os << line;
  }
  return os.str();
}

std::string format_report_kv(std::span<const MetricsReport> reports) {
  std::ostringstream os;
  char line[128];
  for (const MetricsReport& r : reports) {
    std::snprintf(line, sizeof(line), "%s.n_records=%zu\n", r.group.c_str(), r.n_records);
    os << line;
    std::snprintf(line, sizeof(line), "%s.acc=%.17g\n", r.group.c_str(), r.acc);
    os << line;
    if (r.auc) {
      std::snprintf(line, sizeof(line), "%s.auc=%.17g\n", r.group.c_str(), *r.auc);
    } else {
      std::snprintf(line, sizeof(line), "%s.auc=undefined\n", r.group.c_str());
    }
    os << line;
    if (r.real_impr) {
      std::snprintf(line, sizeof(line), "%s.real_impr=%.17g\n", r.group.c_str(), *r.real_impr);
      os << line;
    }
  }
  return os.str();
}

}  // namespace cmvf
