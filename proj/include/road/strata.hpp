// Copyright 2026 The ROAD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "road/cohort.hpp"
#include "road/error.hpp"
#include "road/io.hpp"
#include "road/random.hpp"

namespace road {

/// Risk buckets [edges[k-1], edges[k]) for k = 1..m; the last bucket is closed.
class BucketSpec {
 public:
  BucketSpec() : edges_{0.0, 1.0} {}
  explicit BucketSpec(std::vector<double> edges) : edges_(std::move(edges)) {
    require(edges_.size() >= 2, ErrorCode::InvalidConfig, "bucket spec needs at least two edges");
    require(edges_.front() == 0.0 && edges_.back() == 1.0, ErrorCode::InvalidConfig,
            "bucket edges must start at 0 and end at 1");
    for (std::size_t k = 1; k < edges_.size(); ++k) {
      require(edges_[k - 1] < edges_[k], ErrorCode::InvalidConfig, "bucket edges must be strictly increasing");
    }
  }

  static BucketSpec equal_width(int m) {
    require(m >= 1, ErrorCode::InvalidConfig, "bucket count must be >= 1");
    std::vector<double> edges(static_cast<std::size_t>(m) + 1);
    for (int k = 0; k <= m; ++k) edges[k] = static_cast<double>(k) / m;
    edges.back() = 1.0;
    return BucketSpec(std::move(edges));
  }

  /// 0-10%, 10-20%, 20-30%, 30-40%, 40-50%, 50-100%.
  static BucketSpec risk_bands() { return BucketSpec({0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0}); }

  int size() const { return static_cast<int>(edges_.size()) - 1; }
  const std::vector<double>& edges() const { return edges_; }
  double lower(int bucket) const { return edges_[bucket - 1]; }
  double upper(int bucket) const { return edges_[bucket]; }

  /// 1-based bucket of a risk in [0, 1].
  int bucket_of(double risk) const {
    require(risk >= 0.0 && risk <= 1.0, ErrorCode::OutOfRange, "risk " + io::format_double(risk) + " outside [0,1]");
    const auto pos = std::upper_bound(edges_.begin(), edges_.end(), risk) - edges_.begin();
    return std::min(static_cast<int>(pos), size());
  }

 private:
  std::vector<double> edges_;
};

inline BucketSpec bucket_preset(const std::string& name) {
  if (name == "deciles") return BucketSpec::equal_width(10);
  if (name == "bands") return BucketSpec::risk_bands();
  throw Error(ErrorCode::InvalidConfig, "unknown bucket preset '" + name + "'");
}

struct RiskProfile {
  std::string id;
  double risk = 0.0;
  int bucket = 1;
};

inline std::vector<int> assign_buckets(std::span<const double> risks, const BucketSpec& spec) {
  std::vector<int> out;
  out.reserve(risks.size());
  for (double r : risks) out.push_back(spec.bucket_of(r));
  return out;
}

struct BucketBalance {
  int bucket = 1;
  double lower = 0.0;
  double upper = 1.0;
  std::size_t untreated = 0;
  std::size_t treated = 0;
  double ratio = 1.0;
  bool flagged = false;
};

struct BalanceReport {
  double threshold = 1.5;
  std::vector<BucketBalance> buckets;

  std::vector<int> flagged() const {
    std::vector<int> out;
    for (const auto& b : buckets) {
      if (b.flagged) out.push_back(b.bucket);
    }
    return out;
  }
};

/// Per-bucket arm counts. A bucket is flagged when max/max(1,min) exceeds the
/// threshold or when one arm is empty; buckets holding nobody are not flagged.
inline BalanceReport diagnose(std::span<const int> treatment, std::span<const int> buckets, const BucketSpec& spec,
                              double ratio_threshold) {
  require(treatment.size() == buckets.size(), ErrorCode::DimensionMismatch, "treatment/bucket length mismatch");
  require(ratio_threshold >= 1.0, ErrorCode::InvalidArgument, "ratio threshold must be >= 1");
  BalanceReport report;
  report.threshold = ratio_threshold;
  report.buckets.resize(static_cast<std::size_t>(spec.size()));
  for (int k = 1; k <= spec.size(); ++k) report.buckets[k - 1] = {k, spec.lower(k), spec.upper(k), 0, 0, 1.0, false};
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    require(buckets[i] >= 1 && buckets[i] <= spec.size(), ErrorCode::OutOfRange, "bucket id outside spec");
    auto& b = report.buckets[buckets[i] - 1];
    (treatment[i] == 1 ? b.treated : b.untreated) += 1;
  }
  for (auto& b : report.buckets) {
    const auto lo = std::min(b.untreated, b.treated);
    const auto hi = std::max(b.untreated, b.treated);
    b.ratio = static_cast<double>(hi) / static_cast<double>(std::max<std::size_t>(1, lo));
    b.flagged = hi > 0 && (lo == 0 || b.ratio > ratio_threshold);
  }
  return report;
}

inline BalanceReport diagnose(const std::vector<PatientRecord>& records, std::span<const int> buckets,
                              const BucketSpec& spec, double ratio_threshold) {
  std::vector<int> t;
  t.reserve(records.size());
  for (const auto& r : records) t.push_back(r.treatment);
  return diagnose(std::span<const int>(t), buckets, spec, ratio_threshold);
}

/// Removes the edge between two adjacent buckets (1-based, k_to = k_from + 1).
inline BucketSpec merge_buckets(const BucketSpec& spec, int k_from, int k_to) {
  require(k_to == k_from + 1, ErrorCode::NotAdjacent,
          "buckets " + std::to_string(k_from) + " and " + std::to_string(k_to) + " are not adjacent");
  require(k_from >= 1 && k_to <= spec.size(), ErrorCode::OutOfRange, "bucket index outside spec");
  auto edges = spec.edges();
  edges.erase(edges.begin() + k_from);
  return BucketSpec(std::move(edges));
}

/// Brings both arms of one bucket to target_per_arm by drawing whole records
/// with replacement. Replicas are appended after the originals with ids
/// "<id>#<replica index>".
inline std::vector<PatientRecord> oversample(const std::vector<PatientRecord>& records, std::size_t target_per_arm,
                                             std::uint64_t seed) {
  std::vector<std::size_t> arms[2];
  for (std::size_t i = 0; i < records.size(); ++i) arms[records[i].treatment].push_back(i);
  require(!arms[0].empty() && !arms[1].empty(), ErrorCode::EmptyArm, "oversampling needs both arms present");
  require(target_per_arm >= std::max(arms[0].size(), arms[1].size()), ErrorCode::InvalidArgument,
          "target per arm is below the current largest arm");
  std::vector<PatientRecord> out = records;
  std::map<std::string, int> replicas;
  for (int arm = 0; arm < 2; ++arm) {
    Rng rng(derive_seed(seed, arm == 0 ? "oversample-untreated" : "oversample-treated"));
    for (std::size_t k = arms[arm].size(); k < target_per_arm; ++k) {
      const auto& src = records[arms[arm][uniform_index(rng, arms[arm].size())]];
      PatientRecord copy = src;
      copy.id = src.id + "#" + std::to_string(++replicas[src.id]);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

/// Original id of a possibly replicated record.
inline std::string source_id(const std::string& id) {
  const auto hash = id.rfind('#');
  return hash == std::string::npos ? id : id.substr(0, hash);
}

/// Outcome of the randomized-trial rebalancing path.
struct RctBalance {
  BucketSpec spec;
  BalanceReport before;
  BalanceReport after;
  std::vector<std::pair<double, double>> merged;  // risk intervals formed by merging
  std::vector<PatientRecord> records;
  std::vector<double> risks;
  std::vector<int> buckets;
};

/// Diagnose, merge flagged neighbours (and any flagged bucket missing an arm),
/// then oversample every bucket still flagged up to its larger arm.
inline RctBalance rebalance_rct(const std::vector<PatientRecord>& records, std::span<const double> risks,
                                const BucketSpec& spec, double ratio_threshold, std::uint64_t seed) {
  require(records.size() == risks.size(), ErrorCode::DimensionMismatch, "record/risk length mismatch");
  RctBalance out;
  out.spec = spec;
  auto buckets = assign_buckets(risks, out.spec);
  out.before = diagnose(records, buckets, out.spec, ratio_threshold);
  auto report = out.before;

  auto merge = [&](int k) {
    out.merged.emplace_back(out.spec.lower(k), out.spec.upper(k + 1));
    out.spec = merge_buckets(out.spec, k, k + 1);
    buckets = assign_buckets(risks, out.spec);
    report = diagnose(records, buckets, out.spec, ratio_threshold);
  };

  for (bool changed = true; changed && out.spec.size() > 1;) {
    changed = false;
    for (const auto& b : report.buckets) {
      if (!b.flagged || (b.untreated > 0 && b.treated > 0)) continue;
      const int k = b.bucket;
      if (k == out.spec.size()) merge(k - 1);
      else if (k == 1) merge(k);
      else {
        const auto& left = report.buckets[k - 2];
        const auto& right = report.buckets[k];
        if (left.flagged && !right.flagged) merge(k - 1);
        else if (right.flagged && !left.flagged) merge(k);
        else if (left.untreated + left.treated <= right.untreated + right.treated) merge(k - 1);
        else merge(k);
      }
      changed = true;
      break;
    }
  }
  for (bool changed = true; changed && out.spec.size() > 1;) {
    changed = false;
    for (int k = 1; k < out.spec.size(); ++k) {
      if (report.buckets[k - 1].flagged && report.buckets[k].flagged) {
        merge(k);
        changed = true;
        break;
      }
    }
  }

  for (const auto& b : report.buckets) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (buckets[i] == b.bucket) members.push_back(i);
    }
    if (!b.flagged) {
      for (auto i : members) {
        out.records.push_back(records[i]);
        out.risks.push_back(risks[i]);
        out.buckets.push_back(b.bucket);
      }
      continue;
    }
    std::vector<PatientRecord> subset;
    for (auto i : members) subset.push_back(records[i]);
    std::map<std::string, double> risk_of;
    for (auto i : members) risk_of[records[i].id] = risks[i];
    const auto augmented =
        oversample(subset, std::max(b.untreated, b.treated), derive_seed(seed, "bucket-" + std::to_string(b.bucket)));
    for (const auto& rec : augmented) {
      out.records.push_back(rec);
      out.risks.push_back(risk_of.at(source_id(rec.id)));
      out.buckets.push_back(b.bucket);
    }
  }
  out.after = diagnose(out.records, out.buckets, out.spec, ratio_threshold);
  return out;
}

inline nlohmann::json balance_to_json(const BalanceReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& b : report.buckets) {
    rows.push_back({{"bucket", b.bucket},
                    {"lower", b.lower},
                    {"upper", b.upper},
                    {"untreated", b.untreated},
                    {"treated", b.treated},
                    {"ratio", b.ratio},
                    {"flagged", b.flagged}});
  }
  return {{"threshold", report.threshold}, {"buckets", rows}, {"flagged", report.flagged()}};
}

/// Histogram rows for plotting: bucket,lower,upper,untreated,treated,ratio,flagged.
inline std::string balance_to_csv(const BalanceReport& report) {
  std::ostringstream out;
  out << "bucket,lower,upper,untreated,treated,ratio,flagged\n";
  for (const auto& b : report.buckets) {
    out << b.bucket << ',' << io::format_double(b.lower) << ',' << io::format_double(b.upper) << ',' << b.untreated
        << ',' << b.treated << ',' << io::format_double(b.ratio) << ',' << (b.flagged ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace road
