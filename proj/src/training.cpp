#include "falcon/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "falcon/config.hpp"

namespace falcon {

using json = nlohmann::json;

const char* to_string(Phase p) { return p == Phase::MetaTrain ? "meta_train" : "baaf"; }

const char* to_string(SegLossKind k) {
  switch (k) {
    case SegLossKind::Bce: return "bce";
    case SegLossKind::Dice: return "dice";
    case SegLossKind::Hausdorff: return "hausdorff";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw Error(ErrorKind::InvalidArgument, "train.learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
    throw Error(ErrorKind::InvalidArgument, "train.beta1 and train.beta2 must be in [0,1)");
  if (!(adam_epsilon > 0)) throw Error(ErrorKind::InvalidArgument, "train.adam_epsilon must be > 0");
  if (episodes < 0 || epochs < 0) throw Error(ErrorKind::InvalidArgument, "train.episodes and train.epochs must be >= 0");
  if (query_size < 1) throw Error(ErrorKind::InvalidArgument, "train.query_size must be >= 1");
  if (unlabeled_adv_batch < 0) throw Error(ErrorKind::InvalidArgument, "train.unlabeled_adv_batch must be >= 0");
  if (disc_steps_per_gen_step < 0) throw Error(ErrorKind::InvalidArgument, "train.disc_steps_per_gen_step must be >= 0");
  if (patience < 1) throw Error(ErrorKind::InvalidArgument, "train.patience must be >= 1");
  loss.validate();
  disc.validate();
}

void adam_step(const std::vector<nn::ParamRef<float>>& params, const std::vector<nn::ParamRef<float>>& grads,
               AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "parameter and gradient lists differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Mat<float>::Zero(p.value->rows(), p.value->cols()));
      state.v.push_back(Mat<float>::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match model");
  ++state.t;
  const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
  const float c1 = float(1.0 - std::pow(cfg.beta1, double(state.t)));
  const float c2 = float(1.0 - std::pow(cfg.beta2, double(state.t)));
  const float lr = float(cfg.learning_rate), eps = float(cfg.adam_epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i].value->array();
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g * g;
    params[i].value->array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

std::string LogRecord::to_jsonl() const {
  json comp = json::object();
  for (const auto& [k, c] : components) comp[k] = {{"value", c.value}, {"weight", c.weight}};
  json j = {{"step", step}, {"phase", to_string(phase)}, {"epoch", epoch}, {"total", total},
            {"components", comp}, {"lr", lr}, {"seed", seed}};
  if (!std::isnan(val_hd95)) j["val_hd95"] = val_hd95;
  if (!std::isnan(disc_loss)) j["disc_loss"] = disc_loss;
  return j.dump() + "\n";
}

TrainState init_state(const NetworkConfig& net_cfg, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.net_cfg = net_cfg;
  s.disc_cfg = cfg.disc;
  s.model = Segmenter<float>(net_cfg);
  Rng init(derive_seed(cfg.seed, 1));
  s.model.init(init);
  s.seed = cfg.seed;
  s.task_rng.seed(derive_seed(cfg.seed, 2));
  s.adv_rng.seed(derive_seed(cfg.seed, 3));
  return s;
}

FeatureMap<float> mask_to_map(const BinaryMask& m) {
  FeatureMap<float> f(1, int(m.rows()), int(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) f.data(0, r * m.cols() + c) = float(m(r, c));
  return f;
}

FeatureMap<float> prob_to_map(const Mat<float>& prob, int height, int width) { return FeatureMap<float>(prob, height, width); }

LossResult<float> segmentation_loss(const ProbMap<float>& pred, const BinaryMask& gt, SegLossKind kind,
                                    const LossConfig& cfg) {
  LossResult<float> out;
  switch (kind) {
    case SegLossKind::Bce: {
      auto r = bce_loss_with_grad(pred, gt);
      out.value.total = r.value;
      out.value.components["bce"] = {r.value, 1.0};
      out.grad = std::move(r.grad);
      return out;
    }
    case SegLossKind::Dice: {
      auto r = dice_loss_with_grad(pred, gt, cfg.epsilon);
      out.value.total = r.value;
      out.value.components["dice"] = {r.value, 1.0};
      out.grad = std::move(r.grad);
      return out;
    }
    case SegLossKind::Hausdorff:
      return hausdorff_loss(pred, gt, cfg);
  }
  return out;
}

double validation_hd95(const Segmenter<float>& model, const ValidationSet& val) {
  std::vector<InferenceTask> tasks;
  for (const auto& v : val.volumes) tasks.push_back(build_inference_task(v, val.support_size));
  return evaluate_tasks(model, val.volumes, tasks, val.sealed, val.eval).hd95.mean;
}

// ---------------------------------------------------------------------------
// Meta-training.

void meta_train(const SourceDataset& source, TrainState& state, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  source.validate();
  const auto& net = state.model;
  const int k = state.net_cfg.support_size;
  const int h = state.net_cfg.height, w = state.net_cfg.width;
  Segmenter<float> grad(state.net_cfg);
  while (state.episode < cfg.episodes) {
    const auto ep = sample_source_episode(source, k, cfg.query_size, state.task_rng);
    const auto& cls = source.samples[ep.class_id];
    std::vector<FeatureMap<float>> support;
    for (int i : ep.support) support.push_back(cls[i].image);
    grad.zero();
    const auto sp = forward_support<float>(net, support, true);
    FeatureMap<float> d_proto;
    double total = 0;
    const float scale = 1.0f / float(ep.query.size());
    for (int qi : ep.query) {
      const auto qp = forward_query<float>(net, cls[qi].image, sp.prototype, true);
      const auto bce = bce_loss_with_grad(to_prob_map(qp.prob, h, w), cls[qi].mask);
      total += bce.value / double(ep.query.size());
      const Grid<float> g = bce.grad * scale;
      auto d = backward_query<float>(net, qp, from_grid(g), grad);
      if (d_proto.empty())
        d_proto = std::move(d);
      else if (!d.empty())
        d_proto.data += d.data;
    }
    backward_support<float>(net, sp, d_proto, grad);
    adam_step(state.model.params(), grad.params(), state.model_opt, cfg);
    ++state.episode;

    LogRecord rec;
    rec.step = state.episode;
    rec.phase = Phase::MetaTrain;
    rec.total = total;
    rec.components["bce"] = {total, 1.0};
    rec.lr = cfg.learning_rate;
    rec.seed = state.seed;
    if (log) *log << rec.to_jsonl();
    state.history.push_back(std::move(rec));
  }
}

TrainState meta_train(const SourceDataset& source, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                      std::ostream* log) {
  TrainState s = init_state(net_cfg, cfg);
  meta_train(source, s, cfg, log);
  return s;
}

// ---------------------------------------------------------------------------
// Fine-tuning.

double discriminator_step(TrainState& state, const std::vector<FeatureMap<float>>& real,
                          const std::vector<FeatureMap<float>>& fake, const TrainConfig& cfg) {
  if (!state.has_disc) throw Error(ErrorKind::InvalidArgument, "state has no discriminator");
  // real and fake go through separate forward passes, each with its own batch statistics
  DiscTape<float> real_tape, fake_tape;
  const auto real_scores = discriminate<float>(state.disc, real, DiscMode::Train, &state.adv_rng, &real_tape);
  const auto fake_scores = discriminate<float>(state.disc, fake, DiscMode::Train, &state.adv_rng, &fake_tape);
  const auto dl = disc_loss(real_scores, fake_scores);
  Discriminator<float> grad(state.disc_cfg, state.disc.height, state.disc.width);
  grad.zero();
  discriminate_backward<float>(state.disc, real_tape, dl.grad_real, grad);
  discriminate_backward<float>(state.disc, fake_tape, dl.grad_fake, grad);
  adam_step(state.disc.params(), grad.params(), state.disc_opt, cfg);
  return dl.value;
}

namespace {

std::vector<int> pick_unlabeled(const PatientVolume& p, int count, Rng& rng) {
  auto unl = p.unlabeled();
  count = std::min<int>(count, int(unl.size()));
  for (int i = 0; i < count; ++i) std::swap(unl[i], unl[std::uniform_int_distribution<int>(i, int(unl.size()) - 1)(rng)]);
  unl.resize(count);
  std::sort(unl.begin(), unl.end());
  return unl;
}

struct PatientStep {
  LossValue value;
  double disc_loss = std::numeric_limits<double>::quiet_NaN();
};

PatientStep finetune_patient(const PatientVolume& patient, TrainState& state, const TrainConfig& cfg,
                             Segmenter<float>& grad) {
  const auto& net = state.model;
  const int h = state.net_cfg.height, w = state.net_cfg.width;
  const auto task = build_target_task(patient, state.net_cfg.support_size);
  std::vector<FeatureMap<float>> support;
  for (int i : task.support) support.push_back(patient.slices[i]);

  grad.zero();
  const auto sp = forward_support<float>(net, support, true);
  std::vector<QueryPass<float>> passes;
  std::vector<Grid<float>> d_prob;
  PatientStep out;
  const double nq = double(task.query.size());
  for (int qi : task.query) {
    passes.push_back(forward_query<float>(net, patient.slices[qi], sp.prototype, true));
    const auto seg = segmentation_loss(to_prob_map(passes.back().prob, h, w), patient.masks.at(qi), cfg.seg_loss, cfg.loss);
    for (const auto& [name, c] : seg.value.components) {
      auto& slot = out.value.components[name];
      slot.weight = c.weight;
      slot.value += c.value / nq;
    }
    out.value.total += seg.value.total / nq;
    d_prob.push_back(seg.grad * float(1.0 / nq));
  }

  std::vector<FeatureMap<float>> fake;
  if (cfg.adversarial) {
    if (cfg.adv_on_unlabeled)
      for (int ui : pick_unlabeled(patient, cfg.unlabeled_adv_batch, state.adv_rng)) {
        passes.push_back(forward_query<float>(net, patient.slices[ui], sp.prototype, true));
        d_prob.push_back(Grid<float>::Zero(h, w));
      }
    for (const auto& p : passes) fake.push_back(prob_to_map(p.prob, h, w));
    DiscTape<float> tape;
    const auto scores = discriminate<float>(state.disc, fake, DiscMode::TrainFrozen, &state.adv_rng, &tape);
    const auto adv = adv_generator_loss(scores);
    out.value.components["adv_term"] = {adv.value, cfg.loss.lambda2};
    out.value.total += cfg.loss.lambda2 * adv.value;
    if (cfg.loss.lambda2 != 0) {
      std::vector<double> d_scores;
      for (double g : adv.grad) d_scores.push_back(cfg.loss.lambda2 * g);
      Discriminator<float> scratch(state.disc_cfg, state.disc.height, state.disc.width);
      scratch.zero();
      const auto d_masks = discriminate_backward<float>(state.disc, tape, d_scores, scratch);
      for (std::size_t i = 0; i < fake.size(); ++i)
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c) d_prob[i](r, c) += d_masks[i].data(0, Eigen::Index(r) * w + c);
    }
  }

  FeatureMap<float> d_proto;
  for (std::size_t i = 0; i < passes.size(); ++i) {
    auto d = backward_query<float>(net, passes[i], from_grid(d_prob[i]), grad);
    if (d_proto.empty())
      d_proto = std::move(d);
    else if (!d.empty())
      d_proto.data += d.data;
  }
  backward_support<float>(net, sp, d_proto, grad);
  adam_step(state.model.params(), grad.params(), state.model_opt, cfg);

  if (cfg.adversarial) {
    std::vector<FeatureMap<float>> real;
    for (int qi : task.query) real.push_back(mask_to_map(patient.masks.at(qi)));
    for (int s = 0; s < cfg.disc_steps_per_gen_step; ++s) out.disc_loss = discriminator_step(state, real, fake, cfg);
  }
  return out;
}

void record_validation(TrainState& state, const TrainConfig& cfg, const ValidationSet& val, std::ostream* log) {
  const double hd = validation_hd95(state.model, val);
  LogRecord rec;
  rec.step = state.epoch;
  rec.phase = Phase::Baaf;
  rec.epoch = state.epoch;
  rec.lr = cfg.learning_rate;
  rec.seed = state.seed;
  rec.val_hd95 = hd;
  if (log) *log << rec.to_jsonl();
  state.history.push_back(rec);
  if (hd < state.best_val_hd95) {
    state.best_val_hd95 = hd;
    state.best_epoch = state.epoch;
    state.best_model = state.model;
    state.has_best = true;
    state.stale_epochs = 0;
  } else if (state.epoch > 0) {
    ++state.stale_epochs;
    if (cfg.early_stopping && state.stale_epochs >= cfg.patience) state.stopped = true;
  }
}

}  // namespace

void baaf_finetune(const std::vector<PatientVolume>& patients, TrainState& state, const TrainConfig& cfg,
                   const ValidationSet* val, std::ostream* log) {
  cfg.validate();
  if (patients.empty()) throw Error(ErrorKind::InvalidArgument, "fine-tuning needs at least one patient");
  for (const auto& p : patients) {
    p.validate();
    if (p.height() != state.net_cfg.height || p.width() != state.net_cfg.width)
      throw Error(ErrorKind::ShapeMismatch, "patient " + p.id + " slices do not match the network input size");
    build_target_task(p, state.net_cfg.support_size);  // precondition check
  }
  if (cfg.adversarial && !state.has_disc) {
    state.disc_cfg = cfg.disc;
    state.disc = Discriminator<float>(cfg.disc, state.net_cfg.height, state.net_cfg.width);
    state.disc.init(state.adv_rng);
    state.has_disc = true;
  }
  const bool track = val && !val->volumes.empty();
  if (track && state.epoch == 0 && !state.has_best) record_validation(state, cfg, *val, log);

  Segmenter<float> grad(state.net_cfg);
  std::vector<std::size_t> order(patients.size());
  while (state.epoch < cfg.epochs && !state.stopped) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.task_rng);
    for (std::size_t oi : order) {
      const auto step = finetune_patient(patients[oi], state, cfg, grad);
      LogRecord rec;
      rec.step = ++state.episode;
      rec.phase = Phase::Baaf;
      rec.epoch = state.epoch + 1;
      rec.total = step.value.total;
      rec.components = step.value.components;
      rec.lr = cfg.learning_rate;
      rec.seed = state.seed;
      rec.disc_loss = step.disc_loss;
      if (log) *log << rec.to_jsonl();
      state.history.push_back(std::move(rec));
    }
    ++state.epoch;
    if (track) record_validation(state, cfg, *val, log);
  }
  if (track && cfg.early_stopping && state.has_best) state.model = state.best_model;
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace {

json history_to_json(const std::vector<LogRecord>& hist) {
  json a = json::array();
  for (const auto& r : hist) a.push_back(json::parse(r.to_jsonl()));
  return a;
}

std::vector<LogRecord> history_from_json(const json& a) {
  std::vector<LogRecord> out;
  for (const auto& j : a) {
    LogRecord r;
    r.step = j.at("step").get<long long>();
    r.phase = j.at("phase").get<std::string>() == "baaf" ? Phase::Baaf : Phase::MetaTrain;
    r.epoch = j.at("epoch").get<int>();
    r.total = j.at("total").get<double>();
    for (auto it = j.at("components").begin(); it != j.at("components").end(); ++it)
      r.components[it.key()] = {it.value().at("value").get<double>(), it.value().at("weight").get<double>()};
    r.lr = j.at("lr").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("val_hd95")) r.val_hd95 = j["val_hd95"].get<double>();
    if (j.contains("disc_loss")) r.disc_loss = j["disc_loss"].get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

struct TensorList {
  std::vector<std::string> names;
  std::vector<Mat<float>*> tensors;
  void add(const std::string& name, Mat<float>* t) {
    names.push_back(name);
    tensors.push_back(t);
  }
};

// Every tensor a state owns, in a fixed order. Optimizer moments are sized to match first.
TensorList collect(TrainState& s) {
  TensorList out;
  for (auto& p : s.model.params()) out.add("model/" + p.name, p.value);
  if (s.has_disc) {
    for (auto& p : s.disc.params()) out.add("disc/" + p.name, p.value);
    for (auto& p : s.disc.buffers()) out.add("disc_buffer/" + p.name, p.value);
  }
  for (std::size_t i = 0; i < s.model_opt.m.size(); ++i) {
    out.add("opt.model.m/" + std::to_string(i), &s.model_opt.m[i]);
    out.add("opt.model.v/" + std::to_string(i), &s.model_opt.v[i]);
  }
  for (std::size_t i = 0; i < s.disc_opt.m.size(); ++i) {
    out.add("opt.disc.m/" + std::to_string(i), &s.disc_opt.m[i]);
    out.add("opt.disc.v/" + std::to_string(i), &s.disc_opt.v[i]);
  }
  if (s.has_best)
    for (auto& p : s.best_model.params()) out.add("best/" + p.name, p.value);
  return out;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  auto& s = const_cast<TrainState&>(state);  // collect() hands out pointers; nothing is modified
  const auto tl = collect(s);
  json header;
  header["format"] = kCheckpointMagic;
  header["network"] = to_json(state.net_cfg);
  header["disc"] = to_json(state.disc_cfg);
  header["has_disc"] = state.has_disc;
  header["seed"] = {{"seed", state.seed}, {"task_rng", rng_state(state.task_rng)}, {"adv_rng", rng_state(state.adv_rng)}};
  header["counters"] = {{"episode", state.episode}, {"epoch", state.epoch}, {"model_opt_t", state.model_opt.t},
                        {"disc_opt_t", state.disc_opt.t}, {"model_opt_size", state.model_opt.m.size()},
                        {"disc_opt_size", state.disc_opt.m.size()}};
  header["early_stopping"] = {{"best_val_hd95", std::isfinite(state.best_val_hd95) ? json(state.best_val_hd95) : json()},
                              {"best_epoch", state.best_epoch},
                              {"stale_epochs", state.stale_epochs},
                              {"stopped", state.stopped},
                              {"has_best", state.has_best}};
  header["history"] = history_to_json(state.history);
  json tensors = json::array();
  for (std::size_t i = 0; i < tl.names.size(); ++i)
    tensors.push_back({{"name", tl.names[i]}, {"rows", tl.tensors[i]->rows()}, {"cols", tl.tensors[i]->cols()}});
  header["tensors"] = tensors;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n';
  const std::uint64_t len = text.size();
  unsigned char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = (unsigned char)(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(lenbuf), 8);
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto* t : tl.tensors) out.write(reinterpret_cast<const char*>(t->data()), std::streamsize(t->size() * sizeof(float)));
  if (!out) throw Error(ErrorKind::IoError, "write failed for checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic)
    throw Error(ErrorKind::IncompatibleVersion, path.string() + " is not a " + std::string(kCheckpointMagic) + " archive");
  unsigned char lenbuf[8];
  if (!in.read(reinterpret_cast<char*>(lenbuf), 8)) throw Error(ErrorKind::IncompatibleVersion, "truncated checkpoint header");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(lenbuf[i]) << (8 * i);
  if (len > (1ULL << 32)) throw Error(ErrorKind::IncompatibleVersion, "implausible checkpoint header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), std::streamsize(len))) throw Error(ErrorKind::IncompatibleVersion, "truncated checkpoint header");

  TrainState s;
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> listed;
  try {
    const json h = json::parse(text);
    if (h.at("format").get<std::string>() != kCheckpointMagic)
      throw Error(ErrorKind::IncompatibleVersion, "checkpoint header format mismatch");
    s.net_cfg = network_from_json(h.at("network"));
    if (expected && !(*expected == s.net_cfg))
      throw Error(ErrorKind::ConfigMismatch, "checkpoint network config differs from the requested one: stored " +
                                                 h.at("network").dump() + ", requested " + to_json(*expected).dump());
    s.disc_cfg = disc_from_json(h.at("disc"));
    s.has_disc = h.at("has_disc").get<bool>();
    const auto& sd = h.at("seed");
    s.seed = sd.at("seed").get<std::uint64_t>();
    set_rng_state(s.task_rng, sd.at("task_rng").get<std::string>());
    set_rng_state(s.adv_rng, sd.at("adv_rng").get<std::string>());
    const auto& c = h.at("counters");
    s.episode = c.at("episode").get<long long>();
    s.epoch = c.at("epoch").get<int>();
    s.model_opt.t = c.at("model_opt_t").get<long long>();
    s.disc_opt.t = c.at("disc_opt_t").get<long long>();
    s.model_opt.m.resize(c.at("model_opt_size").get<std::size_t>());
    s.model_opt.v.resize(s.model_opt.m.size());
    s.disc_opt.m.resize(c.at("disc_opt_size").get<std::size_t>());
    s.disc_opt.v.resize(s.disc_opt.m.size());
    const auto& es = h.at("early_stopping");
    s.best_val_hd95 = es.at("best_val_hd95").is_null() ? std::numeric_limits<double>::infinity()
                                                        : es.at("best_val_hd95").get<double>();
    s.best_epoch = es.at("best_epoch").get<int>();
    s.stale_epochs = es.at("stale_epochs").get<int>();
    s.stopped = es.at("stopped").get<bool>();
    s.has_best = es.at("has_best").get<bool>();
    s.history = history_from_json(h.at("history"));
    for (const auto& t : h.at("tensors"))
      listed.push_back({t.at("name").get<std::string>(), {t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>()}});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::IncompatibleVersion, std::string("unreadable checkpoint header: ") + e.what());
  }

  s.model = Segmenter<float>(s.net_cfg);
  if (s.has_disc) s.disc = Discriminator<float>(s.disc_cfg, s.net_cfg.height, s.net_cfg.width);
  if (s.has_best) s.best_model = Segmenter<float>(s.net_cfg);
  for (auto& m : s.model_opt.m) m = Mat<float>();
  const auto tl = collect(s);
  if (tl.names.size() != listed.size())
    throw Error(ErrorKind::ConfigMismatch, "checkpoint tensor count does not match its configuration");
  for (std::size_t i = 0; i < listed.size(); ++i) {
    if (listed[i].first != tl.names[i])
      throw Error(ErrorKind::ConfigMismatch, "checkpoint tensor " + listed[i].first + " where " + tl.names[i] + " expected");
    auto* t = tl.tensors[i];
    const auto [rows, cols] = listed[i].second;
    if (t->size() == 0)
      t->resize(rows, cols);  // optimizer moments
    else if (t->rows() != rows || t->cols() != cols)
      throw Error(ErrorKind::ConfigMismatch, "checkpoint tensor " + listed[i].first + " has the wrong shape");
    if (!in.read(reinterpret_cast<char*>(t->data()), std::streamsize(t->size() * sizeof(float))))
      throw Error(ErrorKind::IncompatibleVersion, "checkpoint truncated in tensor " + listed[i].first);
  }
  return s;
}

}  // namespace falcon
