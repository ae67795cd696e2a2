#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "falcon/data_io.hpp"
#include "falcon/rng.hpp"

namespace falcon {

/// 1-way K-shot source episode; support and query hold sample indices within `class_id`.
struct SourceEpisode {
  int class_id = 0;
  std::vector<int> support;
  std::vector<int> query;
  friend bool operator==(const SourceEpisode&, const SourceEpisode&) = default;
};

/// Fine-tuning task on one patient: unlabeled support slices, labeled query slices.
struct TargetTask {
  std::string patient_id;
  std::vector<int> support;
  std::vector<int> query;
  friend bool operator==(const TargetTask&, const TargetTask&) = default;
};

/// Label-free inference task covering a whole held-out volume.
struct InferenceTask {
  std::string patient_id;
  std::vector<int> support;
  std::vector<int> query;
  std::uint64_t seed = 0;  // 0 when the support came from uniform spacing
  friend bool operator==(const InferenceTask&, const InferenceTask&) = default;
};

enum class SupportSelection { Uniform, Random };

struct SplitSpec {
  std::map<std::string, Split> assignment;
  std::map<std::string, std::vector<int>> labeled;  // slice positions

  /// First n_train patients to train, the next n_val to val, the rest to test.
  static SplitSpec sequential(const std::vector<PatientVolume>& volumes, int n_train, int n_val);
  void validate(const std::vector<PatientVolume>& volumes) const;
  void apply(std::vector<PatientVolume>& volumes) const;
  double labeled_fraction(Split which, const std::vector<PatientVolume>& volumes) const;
};

SourceEpisode sample_source_episode(const SourceDataset& data, int k, int q, Rng& rng);

/// Stateful episode stream owning its random state.
class SourceSampler {
 public:
  SourceSampler(const SourceDataset& data, int k, int q, std::uint64_t seed);
  SourceEpisode next() { return sample_source_episode(*data_, k_, q_, rng_); }
  Rng& rng() { return rng_; }

 private:
  const SourceDataset* data_;
  int k_, q_;
  Rng rng_;
};

/// floor(i * n / k) for i < k.
std::vector<int> uniform_spacing(int n, int k);
/// round(i * (n - 1) / (k - 1)); k = 1 gives the middle index floor(n / 2).
std::vector<int> uniform_spacing_inclusive(int n, int k);

TargetTask build_target_task(const PatientVolume& patient, int k, SupportSelection sel = SupportSelection::Uniform,
                             Rng* rng = nullptr);
InferenceTask build_inference_task(const PatientVolume& patient, int k);
InferenceTask build_inference_task(const PatientVolume& patient, int k, std::uint64_t seed);

/// `n_tasks` inference tasks assigned round-robin over `patients`. The first visit to a
/// patient uses uniform spacing; repeat visits draw a random support with a distinct seed.
std::vector<InferenceTask> build_test_tasks(const std::vector<const PatientVolume*>& patients, int k, int n_tasks,
                                            std::uint64_t seed);

std::string to_jsonl(const std::vector<InferenceTask>& tasks);
std::string to_jsonl(const std::vector<TargetTask>& tasks, std::uint64_t seed);
std::string to_jsonl(const std::vector<SourceEpisode>& episodes, std::uint64_t seed);
std::vector<InferenceTask> inference_tasks_from_jsonl(const std::string& text);

}  // namespace falcon
