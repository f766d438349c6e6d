#pragma once

#include <span>
#include <string>
#include <vector>

#include "voom/dataset_io.hpp"
#include "voom/pipeline.hpp"

namespace voom {

struct AteResult {
  double rmse = 0.0;
  std::size_t pairs = 0;
  /// Applied to the estimate before the residuals are taken (identity when
  /// alignment is off).
  Pose alignment;
};

/// Absolute trajectory error. Estimated and ground-truth samples are paired
/// by nearest timestamp within `max_dt` seconds. With `align`, the estimated
/// positions are first mapped onto the ground truth by the least-squares
/// rigid transform. Throws NoOverlap when nothing pairs up.
AteResult ate(std::span<const TrajectoryEntry> estimated, std::span<const TrajectoryEntry> groundtruth, bool align,
              double max_dt = 0.01);
double ate_rmse(std::span<const TrajectoryEntry> estimated, std::span<const TrajectoryEntry> groundtruth,
                bool align);

struct MatchScores {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision() const;
  double recall() const;
  double f1() const;
};

struct AssociationReport {
  MatchScores objects;
  MatchScores points;
};

/// Scores the associations recorded in a run against the ground-truth ids of
/// the dataset. Each landmark stands for the ground-truth id most of its
/// observations carry. An unmatched detection counts as a miss only once its
/// object already had a landmark; a keypoint counts as a miss when its
/// landmark is represented in the final map but it was left unmatched.
AssociationReport association_report(const RunResult& run, const Dataset& dataset);

/// Number of distinct ground-truth objects that appear in the detections.
std::size_t ground_truth_object_count(const Dataset& dataset);

struct ObjectCountRow {
  DAMethod method = DAMethod::DA4;
  ObservationModel model = ObservationModel::ContourFit;
  std::size_t objects = 0;
  std::size_t ground_truth = 0;
  double object_f1 = 0.0;
  bool completed = true;
};

/// Object-count benchmark: runs the pipeline once per association method and
/// observation model with single-view object creation and no culling.
std::vector<ObjectCountRow> object_count_report(const Dataset& dataset, const PipelineConfig& base,
                                                std::span<const DAMethod> methods,
                                                std::span<const ObservationModel> models);
std::string format_object_count_table(std::span<const ObjectCountRow> rows);

struct AblationRow {
  Ablation ablation = Ablation::Full;
  double ate_rmse = 0.0;
  std::size_t frames_tracked = 0;
  bool completed = true;
};

std::vector<AblationRow> ablation_report(const Dataset& dataset, const PipelineConfig& base,
                                         std::span<const Ablation> variants);
std::string format_ablation_table(std::span<const AblationRow> rows);

}  // namespace voom
