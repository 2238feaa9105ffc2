#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "msan/error.hpp"
#include "msan/volume.hpp"

namespace msan {

struct Overlap {
  std::size_t gt = 0, pred = 0, both = 0;
};

inline Overlap overlap(const Mask &pred, const Mask &gt) {
  if (!(pred.dims() == gt.dims()))
    throw ShapeError("dsc: prediction " + pred.dims().str() + " vs ground truth " +
                     gt.dims().str());
  pred.check_binary("dsc (prediction)");
  gt.check_binary("dsc (ground truth)");
  Overlap o;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    o.gt += gt[i];
    o.pred += pred[i];
    o.both += gt[i] & pred[i];
  }
  return o;
}

// Two empty masks agree perfectly.
inline double dsc(const Overlap &o) {
  if (o.gt + o.pred == 0)
    return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.gt + o.pred);
}

inline double dsc(const Mask &pred, const Mask &gt) { return dsc(overlap(pred, gt)); }

struct CaseResult {
  std::string case_id;
  double dsc = 0.0;
  std::size_t gt_voxels = 0, pred_voxels = 0, overlap = 0;
};

struct EvalReport {
  std::vector<CaseResult> per_case; // sorted by case_id
  double mean_dsc = 0.0;
  std::string fingerprint;
};

struct EvalCase {
  std::string id;
  const Mask &pred;
  const Mask &gt;
};

inline EvalReport evaluate_set(const std::vector<EvalCase> &cases, std::string fingerprint = {}) {
  if (cases.empty())
    throw ValueError("evaluate_set: no cases");
  std::set<std::string> seen;
  EvalReport r;
  r.fingerprint = std::move(fingerprint);
  for (const auto &c : cases) {
    if (!seen.insert(c.id).second)
      throw ValueError("evaluate_set: duplicate case id '" + c.id + "'");
    const Overlap o = overlap(c.pred, c.gt);
    r.per_case.push_back({c.id, dsc(o), o.gt, o.pred, o.both});
  }
  std::sort(r.per_case.begin(), r.per_case.end(),
            [](const CaseResult &a, const CaseResult &b) { return a.case_id < b.case_id; });
  double sum = 0.0;
  for (const auto &c : r.per_case)
    sum += c.dsc;
  r.mean_dsc = sum / static_cast<double>(r.per_case.size());
  return r;
}

// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string report_csv(const EvalReport &r) {
  std::string out = "case_id,dsc,gt_voxels,pred_voxels,overlap\n";
  for (const auto &c : r.per_case)
    out += c.case_id + "," + format_real(c.dsc) + "," + std::to_string(c.gt_voxels) + "," +
           std::to_string(c.pred_voxels) + "," + std::to_string(c.overlap) + "\n";
  return out;
}

inline nlohmann::ordered_json report_json(const EvalReport &r) {
  nlohmann::ordered_json j;
  j["cases"] = r.per_case.size();
  j["mean_dsc"] = r.mean_dsc;
  j["fingerprint"] = r.fingerprint;
  auto &pc = j["per_case"] = nlohmann::ordered_json::array();
  for (const auto &c : r.per_case)
    pc.push_back({{"case_id", c.case_id}, {"dsc", c.dsc}});
  return j;
}

} // namespace msan
