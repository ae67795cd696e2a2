#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "falcon/data_io.hpp"
#include "falcon/episodes.hpp"
#include "falcon/inference.hpp"
#include "falcon/losses.hpp"
#include "falcon/network.hpp"
#include "falcon/rng.hpp"

namespace falcon {

enum class Phase { MetaTrain, Baaf };
enum class SegLossKind { Bce, Dice, Hausdorff };

const char* to_string(Phase p);
const char* to_string(SegLossKind k);

struct TrainConfig {
  Phase phase = Phase::MetaTrain;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int episodes = 1000;  // meta-training episodes
  int epochs = 20;      // fine-tuning epochs
  int query_size = 1;   // Q_n for source episodes
  LossConfig loss;
  DiscriminatorConfig disc;
  std::uint64_t seed = 0;
  SegLossKind seg_loss = SegLossKind::Hausdorff;  // fine-tuning segmentation objective
  bool adversarial = true;
  bool adv_on_unlabeled = true;  // false restricts the fake branch to labeled queries
  int unlabeled_adv_batch = 4;
  int disc_steps_per_gen_step = 1;
  bool early_stopping = true;
  int patience = 10;

  void validate() const;
};

struct AdamState {
  std::vector<Mat<float>> m;
  std::vector<Mat<float>> v;
  long long t = 0;
};

/// One bias-corrected Adam update of `params` from `grads`.
void adam_step(const std::vector<nn::ParamRef<float>>& params, const std::vector<nn::ParamRef<float>>& grads,
               AdamState& state, const TrainConfig& cfg);

struct LogRecord {
  long long step = 0;
  Phase phase = Phase::MetaTrain;
  int epoch = 0;
  double total = 0;
  std::map<std::string, LossComponent> components;
  double lr = 0;
  std::uint64_t seed = 0;
  double val_hd95 = std::numeric_limits<double>::quiet_NaN();
  double disc_loss = std::numeric_limits<double>::quiet_NaN();

  std::string to_jsonl() const;
};

struct TrainState {
  NetworkConfig net_cfg;
  DiscriminatorConfig disc_cfg;
  Segmenter<float> model;
  bool has_disc = false;
  Discriminator<float> disc;
  AdamState model_opt;
  AdamState disc_opt;
  long long episode = 0;  // meta-training episodes completed
  int epoch = 0;          // fine-tuning epochs completed
  std::uint64_t seed = 0;
  Rng task_rng;  // episode sampling and patient order
  Rng adv_rng;   // discriminator initialisation, dropout, unlabeled picks
  std::vector<LogRecord> history;

  double best_val_hd95 = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int stale_epochs = 0;
  bool stopped = false;
  bool has_best = false;
  Segmenter<float> best_model;
};

/// Fresh state: weights from the init stream of `seed`, task and adversarial streams split off.
TrainState init_state(const NetworkConfig& net_cfg, const TrainConfig& cfg);

/// Held-out patients used for early stopping.
struct ValidationSet {
  std::vector<PatientVolume> volumes;
  SealedMasks sealed;
  int support_size = 5;
  EvalConfig eval;
};

double validation_hd95(const Segmenter<float>& model, const ValidationSet& val);

/// Runs episodes until `state.episode == cfg.episodes`; resumes from any earlier count.
void meta_train(const SourceDataset& source, TrainState& state, const TrainConfig& cfg, std::ostream* log = nullptr);
TrainState meta_train(const SourceDataset& source, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                      std::ostream* log = nullptr);

/// Boundary-aware adversarial fine-tuning over the training patients until
/// `state.epoch == cfg.epochs` or early stopping fires.
void baaf_finetune(const std::vector<PatientVolume>& patients, TrainState& state, const TrainConfig& cfg,
                   const ValidationSet* val = nullptr, std::ostream* log = nullptr);

/// Segmentation objective on one query: value and d/d(prob).
LossResult<float> segmentation_loss(const ProbMap<float>& pred, const BinaryMask& gt, SegLossKind kind,
                                    const LossConfig& cfg);

/// A single discriminator update on fixed real and fake masks; returns the discriminator loss.
double discriminator_step(TrainState& state, const std::vector<FeatureMap<float>>& real,
                          const std::vector<FeatureMap<float>>& fake, const TrainConfig& cfg);

FeatureMap<float> mask_to_map(const BinaryMask& m);
FeatureMap<float> prob_to_map(const Mat<float>& prob, int height, int width);

inline constexpr const char* kCheckpointMagic = "FALCON-CKPT-1";

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// With `expected`, a differing stored NetworkConfig raises ConfigMismatch.
TrainState load_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected = nullptr);

}  // namespace falcon
