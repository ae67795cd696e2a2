#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "falcon/config.hpp"
#include "falcon/inference.hpp"
#include "falcon/training.hpp"

namespace falcon {

struct AblationVariant {
  std::string name;
  std::string label;  // row heading in the comparison table
  SegLossKind seg_loss = SegLossKind::Hausdorff;
  bool adversarial = true;
  bool relation_module = true;
};

/// baseline_bce, dice_only, hd_only, falcon_full, falcon_no_rm.
std::vector<AblationVariant> default_ablation_variants();
const AblationVariant& find_variant(const std::vector<AblationVariant>& variants, const std::string& name);

/// One seed's synthetic cross-domain benchmark.
struct Benchmark {
  SourceDataset source;
  std::vector<PatientVolume> train, val, test;
  SealedMasks sealed;  // val and test patients only
};

Benchmark make_benchmark(const DataConfig& cfg, std::uint64_t seed);

/// Resolved configuration of one variant on top of `base`.
FalconConfig variant_config(const FalconConfig& base, const AblationVariant& v, std::uint64_t seed);

/// Fine-tunes a copy of `meta` and evaluates it on the benchmark's test tasks.
MetricsReport run_variant(const Benchmark& bench, const FalconConfig& cfg, const TrainState& meta,
                          std::ostream* log = nullptr);

struct AblationRow {
  std::string name;
  std::string label;
  std::vector<double> dsc;   // per-seed task means
  std::vector<double> hd95;
  Aggregate dsc_summary;
  Aggregate hd95_summary;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
  double seconds = 0;

  const AblationRow& row(const std::string& name) const;
  std::string to_csv() const;
  std::string to_markdown() const;
  std::string to_json() const;
  static AblationTable from_json(const std::string& text);
};

AblationTable run_ablation_suite(const FalconConfig& base, const std::vector<AblationVariant>& variants,
                                 const std::vector<std::uint64_t>& seeds, std::ostream* progress = nullptr);

}  // namespace falcon
