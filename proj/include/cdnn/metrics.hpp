#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "cdnn/image.hpp"

namespace cdnn {

struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::int64_t total() const { return tp + tn + fp + fn; }
};

/// Exact pixel counting between prediction and ground truth of equal extents.
ConfusionCounts confusion(const Mask& pred, const Mask& truth);

/// The five challenge metrics. All lie in [0,1].
struct SegMetrics {
  double ac = 0, di = 0, ja = 0, se = 0, sp = 0;
};

/// Closed forms:
///   AC = (TP+TN)/total, DI = 2TP/(2TP+FN+FP), JA = TP/(TP+FN+FP),
///   SE = TP/(TP+FN), SP = TN/(TN+FP).
/// Zero-denominator conventions: SE := 1 when TP+FN = 0, SP := 1 when
/// TN+FP = 0, JA and DI := 1 when both masks are empty and 0 when exactly
/// one is.
SegMetrics metrics(const ConfusionCounts& c);

struct MetricsReport {
  struct Row {
    std::string id;
    SegMetrics m;
  };
  std::vector<Row> rows;  // lexicographic by id
  SegMetrics mean;        // unweighted mean over rows
};

/// Pairs "<id>_segmentation.png" files across the two directories and
/// evaluates each pair. A prediction or truth without a counterpart is an
/// error listing the offending ids.
MetricsReport evaluate_dataset(const std::filesystem::path& pred_dir,
                               const std::filesystem::path& truth_dir);

MetricsReport build_report(std::vector<MetricsReport::Row> rows);

/// CSV with header, one row per image, and a terminal MEAN row; values with
/// four decimals.
void write_csv(const MetricsReport& report, std::ostream& os);

/// Published results this implementation is built to chase. They require the
/// full ISBI 2017 challenge data and long GPU training, so they are recorded
/// here as reference targets rather than asserted by any test.
struct ReferenceTargets {
  SegMetrics validation;  // 150-image validation set
  SegMetrics testing;     // 600-image blind test set
};
ReferenceTargets published_reference_targets();

}  // namespace cdnn
