#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "falcon/data_io.hpp"
#include "falcon/episodes.hpp"
#include "falcon/network.hpp"

namespace falcon {

struct EvalConfig {
  double threshold = 0.5;
  int n_tasks = 10;
  Symmetrization symmetrization = Symmetrization::Max;
  bool pooled = false;  // aggregate over all slices instead of slice-mean then task-mean

  void validate() const;
};

struct SegmentationResult {
  std::string patient_id;
  std::vector<int> support;
  std::vector<int> query;
  std::vector<ProbMap<float>> probs;  // one per query slice
  std::vector<BinaryMask> masks;
  double threshold = 0.5;
};

/// Gradient-free segmentation of every query slice; the prototype is computed once.
/// Throws if the model checksum changes across the call.
SegmentationResult infer_patient(const Segmenter<float>& model, const PatientVolume& patient, const InferenceTask& task,
                                 double threshold);

struct SliceMetrics {
  double dsc = 0;
  double hd95 = 0;         // symmetric
  double hd95_pred_gt = 0;  // directed, prediction boundary to ground truth
  double hd95_gt_pred = 0;
  bool empty_prediction = false;
  bool both_empty = false;
};

/// Empty predictions (or empty ground truth against a non-empty prediction) score
/// DSC 0 and the diagonal sentinel for every distance; both empty scores a perfect match.
SliceMetrics slice_metrics(const BinaryMask& pred, const BinaryMask& gt, Symmetrization how = Symmetrization::Max);

struct TaskRow {
  int task = 0;
  std::string patient_id;
  int slices = 0;
  double dsc = 0;
  double hd95 = 0;
  double hd95_pred_gt = 0;
  double hd95_gt_pred = 0;
  int empty_predictions = 0;
};

struct Aggregate {
  double mean = 0;
  double std = 0;  // population
};

Aggregate aggregate(const std::vector<double>& values);

struct MetricsReport {
  std::string name;
  std::vector<TaskRow> rows;
  Aggregate dsc;
  Aggregate hd95;
  bool pooled = false;
  std::vector<double> slice_dsc, slice_hd95;  // kept for pooled aggregation
  long long params = 0;
  long long flops = 0;
  std::string config_digest;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  std::string task_construction;

  /// Recomputes the across-task aggregates from the rows (or pooled slices).
  void recompute();
  std::string to_csv() const;
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

MetricsReport evaluate_predictions(const std::vector<SegmentationResult>& results, const SealedMasks& sealed,
                                   const EvalConfig& cfg);

MetricsReport evaluate_tasks(const Segmenter<float>& model, const std::vector<PatientVolume>& volumes,
                             const std::vector<InferenceTask>& tasks, const SealedMasks& sealed, const EvalConfig& cfg);

}  // namespace falcon
