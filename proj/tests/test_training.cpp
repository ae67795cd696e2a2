#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "falcon/ablation.hpp"
#include "falcon/training.hpp"
#include "tmpdir.hpp"

using namespace falcon;

namespace {

const SourceDataset& source() {
  static const SourceDataset s = synth_source(10, 8, 32, 17);
  return s;
}

const Benchmark& bench() {
  static const Benchmark b = make_benchmark(DataConfig{}, 4);
  return b;
}

bool same_weights(Segmenter<float>& a, Segmenter<float>& b) {
  const auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (*pa[i].value != *pb[i].value) return false;
  return true;
}

TrainConfig meta_cfg(int episodes, std::uint64_t seed = 3) {
  TrainConfig c;
  c.episodes = episodes;
  c.seed = seed;
  return c;
}

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no falcon::Error thrown");
  return ErrorKind::IoError;
}

ValidationSet val_set() {
  std::vector<std::string> ids;
  for (const auto& v : bench().val) ids.push_back(v.id);
  return ValidationSet{bench().val, bench().sealed.restrict_to(ids), 5, EvalConfig{}};
}

}  // namespace

TEST_CASE("gradient flow: every segmenter parameter group receives gradient") {
  const auto cfg = NetworkConfig::toy();
  TrainState s = init_state(cfg, meta_cfg(0));
  const auto ep = sample_source_episode(source(), cfg.support_size, 1, s.task_rng);
  const auto& cls = source().samples[ep.class_id];
  std::vector<FeatureMap<float>> support;
  for (int i : ep.support) support.push_back(cls[i].image);
  Segmenter<float> grad(cfg);
  grad.zero();
  const auto sp = forward_support<float>(s.model, support, true);
  const auto qp = forward_query<float>(s.model, cls[ep.query[0]].image, sp.prototype, true);
  const auto bce = bce_loss_with_grad(to_prob_map(qp.prob, cfg.height, cfg.width), cls[ep.query[0]].mask);
  const auto d = backward_query<float>(s.model, qp, from_grid(bce.grad), grad);
  backward_support<float>(s.model, sp, d, grad);
  for (const auto& p : grad.params()) {
    INFO(p.name);
    CHECK(p.value->cwiseAbs().maxCoeff() > 0.0f);
  }
}

TEST_CASE("meta_train: loss falls over 200 episodes") {
  const auto s = meta_train(source(), NetworkConfig::toy(), meta_cfg(200));
  REQUIRE(s.history.size() == 200);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += s.history[i].total / 20;
    last += s.history[180 + i].total / 20;
  }
  CHECK(last < first);
  for (const auto& r : s.history) CHECK(r.phase == Phase::MetaTrain);
}

TEST_CASE("meta_train: zero episodes leaves the initial weights") {
  auto a = init_state(NetworkConfig::toy(), meta_cfg(0));
  auto b = meta_train(source(), NetworkConfig::toy(), meta_cfg(0));
  CHECK(same_weights(a.model, b.model));
  CHECK(b.episode == 0);
  CHECK(b.history.empty());
}

TEST_CASE("meta_train: same seed, bit-identical checkpoints") {
  TempDir tmp("det");
  auto a = meta_train(source(), NetworkConfig::toy(), meta_cfg(40));
  auto b = meta_train(source(), NetworkConfig::toy(), meta_cfg(40));
  CHECK(same_weights(a.model, b.model));
  save_checkpoint(a, tmp.path / "a.ckpt");
  save_checkpoint(b, tmp.path / "b.ckpt");
  std::ifstream fa(tmp.path / "a.ckpt", std::ios::binary), fb(tmp.path / "b.ckpt", std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  auto c = meta_train(source(), NetworkConfig::toy(), meta_cfg(40, 4));
  CHECK_FALSE(same_weights(a.model, c.model));
}

TEST_CASE("checkpoint: round trip is exact") {
  TempDir tmp("ckpt");
  auto s = meta_train(source(), NetworkConfig::toy(), meta_cfg(15));
  save_checkpoint(s, tmp.path / "s.ckpt");
  auto back = load_checkpoint(tmp.path / "s.ckpt");
  CHECK(same_weights(s.model, back.model));
  CHECK(back.episode == 15);
  CHECK(back.seed == s.seed);
  CHECK(rng_state(back.task_rng) == rng_state(s.task_rng));
  CHECK(back.history.size() == s.history.size());
  CHECK(back.history.back().to_jsonl() == s.history.back().to_jsonl());
  REQUIRE(back.model_opt.m.size() == s.model_opt.m.size());
  for (std::size_t i = 0; i < s.model_opt.m.size(); ++i) CHECK(back.model_opt.v[i] == s.model_opt.v[i]);
}

TEST_CASE("checkpoint: resume at 100 matches an uninterrupted 200-episode run") {
  TempDir tmp("resume");
  auto whole = meta_train(source(), NetworkConfig::toy(), meta_cfg(200));
  auto half = meta_train(source(), NetworkConfig::toy(), meta_cfg(100));
  save_checkpoint(half, tmp.path / "half.ckpt");
  auto resumed = load_checkpoint(tmp.path / "half.ckpt");
  meta_train(source(), resumed, meta_cfg(200));
  CHECK(resumed.episode == 200);
  CHECK(same_weights(whole.model, resumed.model));
  CHECK(weight_checksum(whole.model) == weight_checksum(resumed.model));
}

TEST_CASE("checkpoint: wrong magic and mismatched config") {
  TempDir tmp("bad");
  std::ofstream(tmp.path / "junk.ckpt") << "NOT-A-CHECKPOINT\n0000000000";
  CHECK(kind_of([&] { load_checkpoint(tmp.path / "junk.ckpt"); }) == ErrorKind::IncompatibleVersion);
  CHECK(kind_of([&] { load_checkpoint(tmp.path / "absent.ckpt"); }) == ErrorKind::MissingFile);

  auto s = init_state(NetworkConfig::toy(), meta_cfg(0));
  save_checkpoint(s, tmp.path / "s.ckpt");
  auto other = NetworkConfig::toy();
  other.relation_module = false;
  CHECK(kind_of([&] { load_checkpoint(tmp.path / "s.ckpt", &other); }) == ErrorKind::ConfigMismatch);
  const auto same = NetworkConfig::toy();
  CHECK_NOTHROW(load_checkpoint(tmp.path / "s.ckpt", &same));
}

TEST_CASE("baaf: zero adversarial weight reproduces pure Hausdorff fine-tuning") {
  TrainConfig adv = meta_cfg(0, 9);
  adv.epochs = 2;
  adv.loss.lambda2 = 0.0;
  TrainConfig plain = adv;
  plain.adversarial = false;
  std::vector<PatientVolume> pats(bench().train.begin(), bench().train.begin() + 3);
  auto a = init_state(NetworkConfig::toy(), adv);
  auto b = init_state(NetworkConfig::toy(), plain);
  baaf_finetune(pats, a, adv);
  baaf_finetune(pats, b, plain);
  CHECK(same_weights(a.model, b.model));
  CHECK(a.has_disc);
  CHECK_FALSE(b.has_disc);
}

TEST_CASE("baaf: zero adversarial weight without the relation module equals a scripted plain loop") {
  auto net = NetworkConfig::toy();
  net.relation_module = false;
  TrainConfig cfg = meta_cfg(0, 12);
  cfg.epochs = 1;
  cfg.loss.lambda2 = 0.0;
  std::vector<PatientVolume> pats(bench().train.begin(), bench().train.begin() + 3);

  auto state = init_state(net, cfg);
  auto model = state.model;  // scripted copy
  baaf_finetune(pats, state, cfg);
  REQUIRE(state.episode == 3);

  // plain supervised loop: same patient order, Hausdorff+Dice on every labeled query, one Adam step each
  Rng order_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(pats.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng);
  AdamState opt;
  Segmenter<float> grad(net);
  for (std::size_t oi : order) {
    const auto& p = pats[oi];
    grad.zero();
    const auto labeled = p.labeled();
    std::vector<QueryPass<float>> passes;
    for (int q : labeled) passes.push_back(forward_query<float>(model, p.slices[q], FeatureMap<float>{}, true));
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      const auto loss = hausdorff_loss(to_prob_map(passes[i].prob, net.height, net.width), p.masks.at(labeled[i]), cfg.loss);
      const Grid<float> g = loss.grad * float(1.0 / double(labeled.size()));
      backward_query<float>(model, passes[i], from_grid(g), grad);
    }
    adam_step(model.params(), grad.params(), opt, cfg);
  }
  CHECK(same_weights(state.model, model));
}

TEST_CASE("discriminator step: real scores rise, fake scores fall, segmenter untouched") {
  auto s = init_state(NetworkConfig::toy(), meta_cfg(0, 5));
  s.disc_cfg = DiscriminatorConfig{};
  s.disc_cfg.dropout_rate = 0.0;  // makes the batch-statistics evaluation deterministic
  s.disc = Discriminator<float>(s.disc_cfg, 32, 32);
  s.disc.init(s.adv_rng);
  s.has_disc = true;
  const auto& p = bench().train[0];
  std::vector<FeatureMap<float>> real, fake;
  std::vector<FeatureMap<float>> support;
  for (int i : build_target_task(p, 5).support) support.push_back(p.slices[i]);
  const auto sp = forward_support<float>(s.model, support, false);
  for (int q : p.labeled()) {
    real.push_back(mask_to_map(p.masks.at(q)));
    fake.push_back(prob_to_map(forward_query<float>(s.model, p.slices[q], sp.prototype, false).prob, 32, 32));
  }
  // scored the way the step sees them: batch statistics, real and fake batches apart
  auto mean_score = [&](const std::vector<FeatureMap<float>>& x) {
    Rng unused(0);
    const auto sc = discriminate<float>(s.disc, x, DiscMode::TrainFrozen, &unused);
    return std::accumulate(sc.begin(), sc.end(), 0.0) / double(sc.size());
  };
  const auto disc_before = weight_checksum(s.disc);
  const double real0 = mean_score(real), fake0 = mean_score(fake);
  const auto seg_before = weight_checksum(s.model);
  TrainConfig cfg;
  const double loss = discriminator_step(s, real, fake, cfg);
  CHECK(std::isfinite(loss));
  CHECK(weight_checksum(s.model) == seg_before);
  CHECK(weight_checksum(s.disc) != disc_before);
  CHECK(mean_score(real) > real0);
  CHECK(mean_score(fake) < fake0);
}

TEST_CASE("baaf: generator steps alone never touch the discriminator") {
  TrainConfig cfg = meta_cfg(0, 6);
  cfg.epochs = 1;
  cfg.disc_steps_per_gen_step = 0;
  std::vector<PatientVolume> pats(bench().train.begin(), bench().train.begin() + 2);
  auto s = init_state(NetworkConfig::toy(), cfg);
  s.disc_cfg = cfg.disc;
  s.disc = Discriminator<float>(cfg.disc, 32, 32);
  s.disc.init(s.adv_rng);
  s.has_disc = true;
  const auto d0 = weight_checksum(s.disc);
  const auto m0 = weight_checksum(s.model);
  baaf_finetune(pats, s, cfg);
  CHECK(weight_checksum(s.disc) == d0);
  CHECK(weight_checksum(s.model) != m0);
}

TEST_CASE("baaf: logged components recombine to the total") {
  TrainConfig cfg = meta_cfg(0, 7);
  cfg.epochs = 2;
  std::vector<PatientVolume> pats(bench().train.begin(), bench().train.begin() + 3);
  auto s = init_state(NetworkConfig::toy(), cfg);
  std::ostringstream log;
  baaf_finetune(pats, s, cfg, nullptr, &log);
  REQUIRE(s.history.size() == 6);
  for (const auto& r : s.history) {
    double sum = 0;
    for (const auto& [name, c] : r.components) sum += c.weight * c.value;
    CHECK(std::abs(sum - r.total) <= 1e-9 * std::max(1.0, std::abs(r.total)));
    CHECK(r.components.count("adv_term") == 1);
    CHECK(std::isfinite(r.disc_loss));
  }
  const auto text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}

TEST_CASE("baaf: ten epochs on eight patients lower validation HD95") {
  TrainConfig cfg = meta_cfg(300, 8);
  auto s = meta_train(source(), NetworkConfig::toy(), cfg);
  const auto val = val_set();
  const double before = validation_hd95(s.model, val);
  cfg.phase = Phase::Baaf;
  cfg.epochs = 10;
  cfg.early_stopping = false;
  baaf_finetune(bench().train, s, cfg, &val);
  REQUIRE(bench().train.size() == 8);
  const double after = validation_hd95(s.model, val);
  INFO("before " << before << " after " << after);
  CHECK(after < before);
  CHECK(s.epoch == 10);
  CHECK(s.best_val_hd95 <= before);
}

TEST_CASE("baaf: early stopping restores the best validated model") {
  TrainConfig cfg = meta_cfg(0, 10);
  cfg.epochs = 4;
  cfg.patience = 1;
  std::vector<PatientVolume> pats(bench().train.begin(), bench().train.begin() + 2);
  auto s = init_state(NetworkConfig::toy(), cfg);
  const auto val = val_set();
  baaf_finetune(pats, s, cfg, &val);
  REQUIRE(s.has_best);
  CHECK(same_weights(s.model, s.best_model));
  CHECK(validation_hd95(s.model, val) == s.best_val_hd95);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(TrainConfig{}.validate());
}
