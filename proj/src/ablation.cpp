#include "falcon/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <ostream>

namespace falcon {

using json = nlohmann::json;

std::vector<AblationVariant> default_ablation_variants() {
  return {
      {"baseline_bce", "Baseline (BCE)", SegLossKind::Bce, false, true},
      {"dice_only", "Model A (Dice)", SegLossKind::Dice, false, true},
      {"hd_only", "Model B (Hausdorff)", SegLossKind::Hausdorff, false, true},
      {"falcon_full", "FALCON", SegLossKind::Hausdorff, true, true},
      {"falcon_no_rm", "FALCON w/o relation module", SegLossKind::Hausdorff, true, false},
  };
}

const AblationVariant& find_variant(const std::vector<AblationVariant>& variants, const std::string& name) {
  for (const auto& v : variants)
    if (v.name == name) return v;
  throw Error(ErrorKind::InvalidArgument, "unknown ablation config '" + name + "'");
}

Benchmark make_benchmark(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Benchmark b;
  b.source = synth_source(cfg.source_classes, cfg.source_samples, cfg.size, derive_seed(seed, 10));
  auto target = synth_patients(cfg.patients, cfg.slices, cfg.labeled_fraction, cfg.size, derive_seed(seed, 11));
  SplitSpec::sequential(target.volumes, cfg.n_train, cfg.n_val).apply(target.volumes);
  std::vector<std::string> held_out;
  for (auto& v : target.volumes) {
    if (v.split != Split::Train) held_out.push_back(v.id);
    (v.split == Split::Train ? b.train : v.split == Split::Val ? b.val : b.test).push_back(std::move(v));
  }
  b.sealed = target.sealed.restrict_to(held_out);
  return b;
}

FalconConfig variant_config(const FalconConfig& base, const AblationVariant& v, std::uint64_t seed) {
  FalconConfig c = base;
  c.train.seg_loss = v.seg_loss;
  c.train.adversarial = v.adversarial;
  c.network.relation_module = v.relation_module;
  c.train.seed = seed;
  return c;
}

MetricsReport run_variant(const Benchmark& bench, const FalconConfig& cfg, const TrainState& meta, std::ostream* log) {
  TrainState state = meta;
  TrainConfig tc = cfg.train;
  tc.phase = Phase::Baaf;
  ValidationSet val{bench.val, bench.sealed.restrict_to([&] {
                      std::vector<std::string> ids;
                      for (const auto& v : bench.val) ids.push_back(v.id);
                      return ids;
                    }()),
                    cfg.network.support_size, cfg.eval};
  baaf_finetune(bench.train, state, tc, bench.val.empty() ? nullptr : &val, log);

  std::vector<const PatientVolume*> test;
  for (const auto& v : bench.test) test.push_back(&v);
  const auto tasks = build_test_tasks(test, cfg.network.support_size, cfg.eval.n_tasks, cfg.train.seed);
  auto rep = evaluate_tasks(state.model, bench.test, tasks, bench.sealed, cfg.eval);
  rep.config_digest = config_digest(cfg);
  rep.seed = cfg.train.seed;
  rep.task_construction = "round-robin over test patients; first visit uniform support, repeats seeded random";
  return rep;
}

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw Error(ErrorKind::InvalidArgument, "no ablation row '" + name + "'");
}

namespace {

std::string num(double v, const char* f = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string AblationTable::to_csv() const {
  std::string out = "config,label,dsc_mean,dsc_std,hd95_mean,hd95_std,seeds\n";
  for (const auto& r : rows)
    out += r.name + "," + r.label + "," + num(r.dsc_summary.mean, "%.17g") + "," + num(r.dsc_summary.std, "%.17g") + "," +
           num(r.hd95_summary.mean, "%.17g") + "," + num(r.hd95_summary.std, "%.17g") + "," +
           std::to_string(seeds.size()) + "\n";
  return out;
}

std::string AblationTable::to_markdown() const {
  std::string out = "| Model | DSC (mean ± std) | HD95 px (mean ± std) |\n|---|---|---|\n";
  for (const auto& r : rows)
    out += "| " + r.label + " | " + num(r.dsc_summary.mean) + " ± " + num(r.dsc_summary.std) + " | " +
           num(r.hd95_summary.mean, "%.3f") + " ± " + num(r.hd95_summary.std, "%.3f") + " |\n";
  return out;
}

std::string AblationTable::to_json() const {
  json j;
  j["seeds"] = seeds;
  j["seconds"] = seconds;
  j["rows"] = json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"config", r.name},
                         {"label", r.label},
                         {"dsc", r.dsc},
                         {"hd95", r.hd95},
                         {"dsc_mean", r.dsc_summary.mean},
                         {"dsc_std", r.dsc_summary.std},
                         {"hd95_mean", r.hd95_summary.mean},
                         {"hd95_std", r.hd95_summary.std}});
  return j.dump(2) + "\n";
}

AblationTable AblationTable::from_json(const std::string& text) {
  AblationTable t;
  try {
    const auto j = json::parse(text);
    t.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    t.seconds = j.value("seconds", 0.0);
    for (const auto& r : j.at("rows")) {
      AblationRow row;
      row.name = r.at("config").get<std::string>();
      row.label = r.at("label").get<std::string>();
      row.dsc = r.at("dsc").get<std::vector<double>>();
      row.hd95 = r.at("hd95").get<std::vector<double>>();
      row.dsc_summary = aggregate(row.dsc);
      row.hd95_summary = aggregate(row.hd95);
      t.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed ablation table: ") + e.what());
  }
  return t;
}

AblationTable run_ablation_suite(const FalconConfig& base, const std::vector<AblationVariant>& variants,
                                 const std::vector<std::uint64_t>& seeds, std::ostream* progress) {
  base.validate();
  if (variants.empty() || seeds.empty()) throw Error(ErrorKind::InvalidArgument, "ablation needs configs and seeds");
  const auto t0 = std::chrono::steady_clock::now();
  AblationTable table;
  table.seeds = seeds;
  for (const auto& v : variants) table.rows.push_back({v.name, v.label, {}, {}, {}, {}});

  for (const auto seed : seeds) {
    const Benchmark bench = make_benchmark(base.data, seed);
    // meta-training depends only on the network configuration, so variants share it
    std::map<bool, TrainState> meta;
    for (std::size_t i = 0; i < variants.size(); ++i) {
      const auto cfg = variant_config(base, variants[i], seed);
      auto it = meta.find(cfg.network.relation_module);
      if (it == meta.end()) {
        TrainConfig tc = cfg.train;
        tc.phase = Phase::MetaTrain;
        it = meta.emplace(cfg.network.relation_module, meta_train(bench.source, cfg.network, tc)).first;
      }
      const auto rep = run_variant(bench, cfg, it->second);
      table.rows[i].dsc.push_back(rep.dsc.mean);
      table.rows[i].hd95.push_back(rep.hd95.mean);
      if (progress)
        *progress << "seed " << seed << " " << variants[i].name << " dsc " << num(rep.dsc.mean) << " hd95 "
                  << num(rep.hd95.mean, "%.3f") << std::endl;
    }
  }
  for (auto& r : table.rows) {
    r.dsc_summary = aggregate(r.dsc);
    r.hd95_summary = aggregate(r.hd95);
  }
  table.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return table;
}

}  // namespace falcon
