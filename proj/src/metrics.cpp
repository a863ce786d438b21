#include "cdnn/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <map>

#include "cdnn/errors.hpp"
#include "cdnn/image_io.hpp"

namespace cdnn {

ConfusionCounts confusion(const Mask& pred, const Mask& truth) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw NumericError(msg("confusion: extents ", pred.h, "x", pred.w, " vs ", truth.h, "x",
                           truth.w));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] != 0;
    const bool t = truth.v[i] != 0;
    if (p && t) ++c.tp;
    else if (!p && !t) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

SegMetrics metrics(const ConfusionCounts& c) {
  if (c.total() <= 0) throw NumericError("metrics: empty confusion counts");
  SegMetrics m;
  m.ac = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.se = c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  m.sp = c.tn + c.fp == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  const std::int64_t union_ = c.tp + c.fn + c.fp;
  if (union_ == 0) {
    m.ja = 1.0;  // both masks empty
    m.di = 1.0;
  } else {
    m.ja = static_cast<double>(c.tp) / static_cast<double>(union_);
    m.di = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fn + c.fp);
  }
  return m;
}

namespace {

constexpr const char* kMaskSuffix = "_segmentation.png";

std::map<std::string, std::filesystem::path> collect_masks(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw DataError(msg(dir.string(), " is not a directory"));
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() <= std::string(kMaskSuffix).size() || !name.ends_with(kMaskSuffix))
      continue;
    out.emplace(name.substr(0, name.size() - std::string(kMaskSuffix).size()), entry.path());
  }
  return out;
}

}  // namespace

MetricsReport evaluate_dataset(const std::filesystem::path& pred_dir,
                               const std::filesystem::path& truth_dir) {
  const auto preds = collect_masks(pred_dir);
  const auto truths = collect_masks(truth_dir);

  std::string missing;
  for (const auto& [id, path] : truths)
    if (!preds.contains(id)) missing += msg(" ", id);
  for (const auto& [id, path] : preds)
    if (!truths.contains(id)) missing += msg(" ", id);
  if (!missing.empty())
    throw DataError(msg("prediction/truth sets differ for ids:", missing));
  if (preds.empty()) throw DataError("no *_segmentation.png files to evaluate");

  std::vector<MetricsReport::Row> rows;
  for (const auto& [id, pred_path] : preds) {  // std::map iterates lexicographically
    const GrayImage pg = read_gray_image(pred_path);
    const GrayImage tg = read_gray_image(truths.at(id));
    if (pg.h != tg.h || pg.w != tg.w)
      throw DataError(msg(id, ": prediction is ", pg.h, "x", pg.w, " but truth is ", tg.h, "x",
                          tg.w));
    Mask pm(pg.h, pg.w), tm(tg.h, tg.w);
    for (std::size_t i = 0; i < pg.v.size(); ++i) {
      pm.v[i] = pg.v[i] >= 0.5f ? 1 : 0;
      tm.v[i] = tg.v[i] >= 0.5f ? 1 : 0;
    }
    rows.push_back({id, metrics(confusion(pm, tm))});
  }
  return build_report(std::move(rows));
}

MetricsReport build_report(std::vector<MetricsReport::Row> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  MetricsReport report;
  report.rows = std::move(rows);
  const double n = static_cast<double>(report.rows.size());
  for (const auto& row : report.rows) {
    report.mean.ac += row.m.ac / n;
    report.mean.di += row.m.di / n;
    report.mean.ja += row.m.ja / n;
    report.mean.se += row.m.se / n;
    report.mean.sp += row.m.sp / n;
  }
  return report;
}

void write_csv(const MetricsReport& report, std::ostream& os) {
  os << "image_id,AC,DI,JA,SE,SP\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& row : report.rows)
    os << row.id << "," << row.m.ac << "," << row.m.di << "," << row.m.ja << "," << row.m.se
       << "," << row.m.sp << "\n";
  os << "MEAN," << report.mean.ac << "," << report.mean.di << "," << report.mean.ja << ","
     << report.mean.se << "," << report.mean.sp << "\n";
}

ReferenceTargets published_reference_targets() {
  ReferenceTargets t;
  t.validation = {0.953, 0.865, 0.783, 0.879, 0.979};
  t.testing = {0.934, 0.849, 0.765, 0.825, 0.975};
  return t;
}

}  // namespace cdnn
