// falcon: synth / train / finetune / infer / eval / eval-masks / ablate / report.
//
// Exit codes: 0 ok, 2 usage, 3 data, 4 config, 5 runtime.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "falcon/ablation.hpp"
#include "falcon/config.hpp"
#include "falcon/data_io.hpp"
#include "falcon/episodes.hpp"
#include "falcon/inference.hpp"
#include "falcon/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace falcon;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kConfig = 4, kRuntime = 5 };

// Raised for anything that went wrong while resolving configuration.
struct ConfigFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::UnknownConfigKey:
    case ErrorKind::ConfigMismatch:
    case ErrorKind::IncompatibleVersion:
      return kConfig;
    case ErrorKind::IoError:
      return kRuntime;
    default:
      return kData;
  }
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_config_flags(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--set", c.sets, "override, key.path=value (repeatable)");
  sub->add_option("--seed", c.seed, "run seed (default: FALCON_SEED, then config)");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("FALCON_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || s[0] == '-') throw UsageFailure(std::string("FALCON_SEED is not a seed: '") + s + "'");
  return v;
}

// defaults < FALCON_SEED < file < --set < --seed
FalconConfig resolve(const Common& c) {
  try {
    std::optional<fs::path> file;
    if (!c.config.empty()) file = c.config;
    std::vector<std::string> overrides;
    if (const auto env = env_seed()) {
      bool file_sets_seed = false;
      if (file) {
        std::ifstream in(*file);
        if (in) {
          const auto j = json::parse(in, nullptr, false);
          file_sets_seed = j.is_object() && j.contains("train") && j["train"].is_object() && j["train"].contains("seed");
        }
      }
      if (!file_sets_seed) overrides.push_back("train.seed=" + std::to_string(*env));
    }
    overrides.insert(overrides.end(), c.sets.begin(), c.sets.end());
    if (c.seed) overrides.push_back("train.seed=" + std::to_string(*c.seed));
    return resolve_config(file, overrides);
  } catch (const UsageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigFailure(e.what());
  }
}

fs::path prepare_out(const std::string& out, const FalconConfig& cfg) {
  const fs::path p(out);
  fs::create_directories(p);
  write_config_snapshot(cfg, p / "config.json");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

IngestResult load_target(const std::string& dir, const FalconConfig& cfg) {
  return ingest_patients(dir, IngestOptions{cfg.network.height, cfg.network.width, cfg.data.drop_empty_masks});
}

std::vector<PatientVolume> with_split(const std::vector<PatientVolume>& all, Split s) {
  std::vector<PatientVolume> out;
  for (const auto& v : all)
    if (v.split == s) out.push_back(v);
  return out;
}

std::vector<std::string> ids_of(const std::vector<PatientVolume>& v) {
  std::vector<std::string> out;
  for (const auto& p : v) out.push_back(p.id);
  return out;
}

std::string fmt(double v, const char* f = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slice_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d.png", index);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string domain = "target";
  int patients = -1, slices = -1, size = -1, classes = -1, samples = -1;
  double fraction = -1;
  int n_train = -1, n_val = -1;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  auto cfg = resolve(c);
  auto& d = cfg.data;
  if (a.patients > 0) d.patients = a.patients;
  if (a.slices > 0) d.slices = a.slices;
  if (a.size > 0) d.size = a.size;
  if (a.classes > 0) d.source_classes = a.classes;
  if (a.samples > 0) d.source_samples = a.samples;
  if (a.fraction > 0) d.labeled_fraction = a.fraction;
  const auto out = prepare_out(c.out, cfg);
  const auto seed = cfg.train.seed;
  if (a.domain == "source") {
    export_source(out, "synthetic_source", synth_source(d.source_classes, d.source_samples, d.size, seed));
    std::cout << "wrote " << d.source_classes << " classes x " << d.source_samples << " samples to " << out.string() << "\n";
    return kOk;
  }
  auto t = synth_patients(d.patients, d.slices, d.labeled_fraction, d.size, seed);
  const int n_train = a.n_train >= 0 ? a.n_train : std::min(d.n_train, d.patients);
  const int n_val = a.n_val >= 0 ? a.n_val : std::min(d.n_val, d.patients - n_train);
  SplitSpec::sequential(t.volumes, n_train, n_val).apply(t.volumes);
  export_patients(out, "synthetic_target", t.volumes, &t.sealed);
  std::cout << "wrote " << d.patients << " patients (" << n_train << " train, " << n_val << " val, "
            << d.patients - n_train - n_val << " test) to " << out.string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string source;
  std::string resume;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  auto cfg = resolve(c);
  cfg.train.phase = Phase::MetaTrain;
  const auto out = prepare_out(c.out, cfg);
  const SourceDataset src = a.source.empty()
                                ? synth_source(cfg.data.source_classes, cfg.data.source_samples, cfg.network.height,
                                               derive_seed(cfg.train.seed, 10))
                                : ingest_source(a.source, cfg.network.height, cfg.network.width);
  TrainState state = a.resume.empty() ? init_state(cfg.network, cfg.train) : load_checkpoint(a.resume, &cfg.network);
  std::ofstream log(out / "train_log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  meta_train(src, state, cfg.train, &log);
  save_checkpoint(state, out / "checkpoint.ckpt");
  const auto& h = state.history;
  std::cout << "meta-trained " << state.episode << " episodes";
  if (!h.empty()) std::cout << ", last bce " << fmt(h.back().total);
  std::cout << "\ncheckpoint " << (out / "checkpoint.ckpt").string() << "\n";
  return kOk;
}

struct ModelArgs {
  std::string checkpoint;
  std::string data;
  std::string predictions;
};

int cmd_finetune(const Common& c, const ModelArgs& a) {
  auto cfg = resolve(c);
  cfg.train.phase = Phase::Baaf;
  const auto out = prepare_out(c.out, cfg);
  TrainState state = load_checkpoint(a.checkpoint, &cfg.network);
  const auto data = load_target(a.data, cfg);
  const auto train = with_split(data.volumes, Split::Train);
  const auto val_vols = with_split(data.volumes, Split::Val);
  ValidationSet val{val_vols, data.sealed.restrict_to(ids_of(val_vols)), cfg.network.support_size, cfg.eval};
  std::ofstream log(out / "finetune_log.jsonl");
  baaf_finetune(train, state, cfg.train, val_vols.empty() ? nullptr : &val, &log);
  save_checkpoint(state, out / "checkpoint.ckpt");
  std::cout << "fine-tuned " << state.epoch << " epochs on " << train.size() << " patients";
  if (state.has_best) std::cout << ", best val HD95 " << fmt(state.best_val_hd95, "%.3f") << " at epoch " << state.best_epoch;
  std::cout << "\ncheckpoint " << (out / "checkpoint.ckpt").string() << "\n";
  return kOk;
}

int cmd_infer(const Common& c, const ModelArgs& a) {
  auto cfg = resolve(c);
  const auto out = prepare_out(c.out, cfg);
  const TrainState state = load_checkpoint(a.checkpoint, &cfg.network);
  const auto data = load_target(a.data, cfg);
  std::vector<InferenceTask> tasks;
  for (const auto& v : data.volumes) {
    if (v.split == Split::Train) continue;
    const auto task = build_inference_task(v, cfg.network.support_size);
    const auto res = infer_patient(state.model, v, task, cfg.eval.threshold);
    for (std::size_t q = 0; q < res.query.size(); ++q)
      write_png_mask(out / v.id / slice_name(v.acquisition[res.query[q]]), res.masks[q]);
    tasks.push_back(task);
  }
  if (tasks.empty()) throw Error(ErrorKind::InsufficientSlices, "no val or test patients in " + a.data);
  write_text(out / "tasks.jsonl", to_jsonl(tasks));
  std::cout << "segmented " << tasks.size() << " patients into " << out.string() << "\n";
  return kOk;
}

int cmd_eval(const Common& c, const ModelArgs& a) {
  auto cfg = resolve(c);
  if (a.checkpoint.empty() == a.predictions.empty())
    throw UsageFailure("eval needs exactly one of --checkpoint or --predictions");
  const auto out = prepare_out(c.out, cfg);
  const auto data = load_target(a.data, cfg);
  MetricsReport rep;
  std::vector<InferenceTask> tasks;
  if (!a.checkpoint.empty()) {
    const TrainState state = load_checkpoint(a.checkpoint, &cfg.network);
    const auto test = with_split(data.volumes, Split::Test);
    std::vector<const PatientVolume*> ptrs;
    for (const auto& v : test) ptrs.push_back(&v);
    if (ptrs.empty()) throw Error(ErrorKind::InsufficientSlices, "no test patients in " + a.data);
    tasks = build_test_tasks(ptrs, cfg.network.support_size, cfg.eval.n_tasks, cfg.train.seed);
    rep = evaluate_tasks(state.model, test, tasks, data.sealed, cfg.eval);
    rep.task_construction = "round-robin over test patients; first visit uniform support, repeats seeded random";
  } else {
    tasks = inference_tasks_from_jsonl(read_text(fs::path(a.predictions) / "tasks.jsonl"));
    std::map<std::string, const PatientVolume*> by_id;
    for (const auto& v : data.volumes) by_id[v.id] = &v;
    std::vector<SegmentationResult> results;
    for (const auto& t : tasks) {
      const auto it = by_id.find(t.patient_id);
      if (it == by_id.end()) throw Error(ErrorKind::MissingFile, "patient " + t.patient_id + " not in " + a.data);
      SegmentationResult r;
      r.patient_id = t.patient_id;
      r.support = t.support;
      r.query = t.query;
      r.threshold = cfg.eval.threshold;
      for (int q : t.query)
        r.masks.push_back(read_png_mask(fs::path(a.predictions) / t.patient_id / slice_name(it->second->acquisition.at(q))));
      results.push_back(std::move(r));
    }
    rep = evaluate_predictions(results, data.sealed, cfg.eval);
    rep.task_construction = "one uniform-support task per patient, read from predictions";
    const auto cc = count_params_flops(cfg.network);
    rep.params = cc.params;
    rep.flops = cc.flops;
  }
  rep.name = "eval";
  rep.seed = cfg.train.seed;
  rep.config_digest = config_digest(cfg);
  write_text(out / "metrics.csv", rep.to_csv());
  write_text(out / "metrics.json", rep.to_json());
  write_text(out / "tasks.jsonl", to_jsonl(tasks));
  std::cout << "tasks " << rep.rows.size() << "  DSC " << fmt(rep.dsc.mean) << " ± " << fmt(rep.dsc.std) << "  HD95 "
            << fmt(rep.hd95.mean, "%.3f") << " ± " << fmt(rep.hd95.std, "%.3f") << "\n";
  return kOk;
}

struct MaskArgs {
  std::string pred, gt;
  std::string symmetrization = "max";
};

int cmd_eval_masks(const MaskArgs& a) {
  const auto pred = read_png_mask(a.pred);
  const auto gt = read_png_mask(a.gt);
  const auto how = a.symmetrization == "mean" ? Symmetrization::Mean : Symmetrization::Max;
  const auto m = slice_metrics(pred, gt, how);
  json j = {{"dsc", m.dsc},
            {"hd95_pred_to_gt", m.hd95_pred_gt},
            {"hd95_gt_to_pred", m.hd95_gt_pred},
            {"hd95", m.hd95},
            {"symmetrization", a.symmetrization},
            {"empty_prediction", m.empty_prediction},
            {"both_empty", m.both_empty}};
  if (m.empty_prediction && !m.both_empty) j["sentinel"] = sentinel_distance(pred.rows(), pred.cols());
  std::cout << j.dump(2) << "\n";
  return kOk;
}

struct AblateArgs {
  int seeds = 5;
  std::uint64_t first_seed = 1;
  std::vector<std::string> configs;
};

int cmd_ablate(const Common& c, const AblateArgs& a) {
  const auto cfg = resolve(c);
  const auto all = default_ablation_variants();
  std::vector<AblationVariant> variants;
  if (a.configs.empty())
    variants = all;
  else
    for (const auto& n : a.configs) variants.push_back(find_variant(all, n));
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.seeds; ++i) seeds.push_back(a.first_seed + std::uint64_t(i));
  const auto out = prepare_out(c.out, cfg);
  const auto table = run_ablation_suite(cfg, variants, seeds, &std::cerr);
  write_text(out / "ablation.csv", table.to_csv());
  write_text(out / "ablation.md", table.to_markdown());
  write_text(out / "ablation.json", table.to_json());
  std::cout << table.to_markdown() << "seeds " << seeds.size() << ", " << fmt(table.seconds, "%.1f") << " s\n";
  return kOk;
}

struct ReportArgs {
  std::string ablation, metrics, out;
};

std::string ablation_report(const AblationTable& t) {
  std::string s = "## Ablation (" + std::to_string(t.seeds.size()) + " seeds)\n\n" + t.to_markdown();
  auto has = [&](const char* n) {
    for (const auto& r : t.rows)
      if (r.name == n) return true;
    return false;
  };
  if (has("falcon_full") && has("baseline_bce") && has("hd_only") && has("falcon_no_rm")) {
    const auto& f = t.row("falcon_full");
    const auto& b = t.row("baseline_bce");
    const auto& h = t.row("hd_only");
    const auto& n = t.row("falcon_no_rm");
    auto line = [](bool ok, const std::string& what) { return std::string(ok ? "- holds: " : "- does not hold: ") + what + "\n"; };
    s += "\nDirectional checks on mean test scores:\n\n";
    s += line(f.hd95_summary.mean < b.hd95_summary.mean, "FALCON HD95 < baseline HD95");
    s += line(f.hd95_summary.mean <= h.hd95_summary.mean, "FALCON HD95 <= Hausdorff-only HD95");
    s += line(f.dsc_summary.mean >= b.dsc_summary.mean, "FALCON DSC >= baseline DSC");
    s += line(f.hd95_summary.mean <= n.hd95_summary.mean, "FALCON HD95 <= without-relation-module HD95");
  }
  s += "\nPublished reference row (CHAOS-CT, full-size data and backbone): DSC 93.86, HD 10.78. Not comparable at this scale.\n";
  return s;
}

std::string metrics_report(const MetricsReport& r) {
  std::string s = "## Evaluation\n\n| task | patient | slices | DSC | HD95 | empty |\n|---|---|---|---|---|---|\n";
  for (const auto& row : r.rows)
    s += "| " + std::to_string(row.task) + " | " + row.patient_id + " | " + std::to_string(row.slices) + " | " +
         fmt(row.dsc) + " | " + fmt(row.hd95, "%.3f") + " | " + std::to_string(row.empty_predictions) + " |\n";
  s += "\nMean over tasks: DSC " + fmt(r.dsc.mean) + " ± " + fmt(r.dsc.std) + ", HD95 " + fmt(r.hd95.mean, "%.3f") +
       " ± " + fmt(r.hd95.std, "%.3f") + " px.\n";
  s += "Model: " + std::to_string(r.params) + " parameters, " + fmt(double(r.flops) / 1e9, "%.3f") +
       " GFLOPs per forward. Seed " + std::to_string(r.seed) + ", config " + r.config_digest + ", threshold " +
       fmt(r.threshold, "%.2f") + ".\n";
  if (!r.task_construction.empty()) s += "Tasks: " + r.task_construction + ".\n";
  return s;
}

int cmd_report(const ReportArgs& a) {
  if (a.ablation.empty() && a.metrics.empty()) throw UsageFailure("report needs --ablation and/or --metrics");
  std::string s = "# FALCON run report\n";
  if (!a.metrics.empty()) s += "\n" + metrics_report(MetricsReport::from_json(read_text(a.metrics)));
  if (!a.ablation.empty()) s += "\n" + ablation_report(AblationTable::from_json(read_text(a.ablation)));
  if (a.out.empty())
    std::cout << s;
  else
    write_text(a.out, s);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain few-shot segmentation with boundary-aware adversarial fine-tuning"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Common common;
  auto fraction_check = CLI::Validator(
      [](std::string& s) -> std::string {
        try {
          const double v = std::stod(s);
          return v > 0 && v < 1 ? "" : "fraction must be in (0,1), got " + s;
        } catch (...) {
          return "not a number: " + s;
        }
      },
      "(0,1)");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic source or target dataset");
  add_config_flags(s_synth, common);
  s_synth->add_option("--out", common.out, "output directory")->required();
  s_synth->add_option("--domain", synth.domain, "source or target")->check(CLI::IsMember({"source", "target"}));
  s_synth->add_option("--patients", synth.patients, "target patients")->check(CLI::PositiveNumber);
  s_synth->add_option("--slices", synth.slices, "slices per patient")->check(CLI::Range(2, 100000));
  s_synth->add_option("--fraction", synth.fraction, "labeled fraction of slices")->check(fraction_check);
  s_synth->add_option("--size", synth.size, "image side in pixels")->check(CLI::Range(16, 4096));
  s_synth->add_option("--classes", synth.classes, "source classes")->check(CLI::Range(2, 100000));
  s_synth->add_option("--samples", synth.samples, "samples per source class")->check(CLI::PositiveNumber);
  s_synth->add_option("--train", synth.n_train, "patients assigned to train")->check(CLI::NonNegativeNumber);
  s_synth->add_option("--val", synth.n_val, "patients assigned to val")->check(CLI::NonNegativeNumber);

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "episodic meta-training on the source domain");
  add_config_flags(s_train, common);
  s_train->add_option("--out", common.out, "output directory")->required();
  s_train->add_option("--source", train.source, "source dataset directory (synthesised when omitted)")
      ->check(CLI::ExistingDirectory);
  s_train->add_option("--resume", train.resume, "checkpoint to continue from");

  ModelArgs ft;
  auto* s_ft = app.add_subcommand("finetune", "boundary-aware adversarial fine-tuning on target patients");
  add_config_flags(s_ft, common);
  s_ft->add_option("--out", common.out, "output directory")->required();
  s_ft->add_option("--checkpoint", ft.checkpoint, "meta-trained checkpoint")->required();
  s_ft->add_option("--data", ft.data, "target dataset directory")->required();

  ModelArgs inf;
  auto* s_inf = app.add_subcommand("infer", "gradient-free segmentation of val and test patients");
  add_config_flags(s_inf, common);
  s_inf->add_option("--out", common.out, "output directory")->required();
  s_inf->add_option("--checkpoint", inf.checkpoint, "fine-tuned checkpoint")->required();
  s_inf->add_option("--data", inf.data, "target dataset directory")->required();

  ModelArgs ev;
  auto* s_ev = app.add_subcommand("eval", "DSC and HD95 over test tasks");
  add_config_flags(s_ev, common);
  s_ev->add_option("--out", common.out, "output directory")->required();
  s_ev->add_option("--data", ev.data, "target dataset directory")->required();
  s_ev->add_option("--checkpoint", ev.checkpoint, "model to evaluate on round-robin test tasks");
  s_ev->add_option("--predictions", ev.predictions, "output directory of a previous infer run");

  MaskArgs masks;
  auto* s_masks = app.add_subcommand("eval-masks", "metrics between two mask rasters");
  s_masks->add_option("pred", masks.pred, "predicted mask PNG")->required();
  s_masks->add_option("gt", masks.gt, "ground-truth mask PNG")->required();
  s_masks->add_option("--symmetrization", masks.symmetrization, "max or mean")->check(CLI::IsMember({"max", "mean"}));

  AblateArgs abl;
  auto* s_abl = app.add_subcommand("ablate", "loss and relation-module ablation on the synthetic benchmark");
  add_config_flags(s_abl, common);
  s_abl->add_option("--out", common.out, "output directory")->required();
  s_abl->add_option("--seeds", abl.seeds, "number of seeds")->check(CLI::PositiveNumber);
  s_abl->add_option("--first-seed", abl.first_seed, "first seed");
  s_abl->add_option("--configs", abl.configs, "subset of baseline_bce dice_only hd_only falcon_full falcon_no_rm")
      ->delimiter(',');

  ReportArgs rep;
  auto* s_rep = app.add_subcommand("report", "markdown summary of metrics.json and ablation.json");
  s_rep->add_option("--ablation", rep.ablation, "ablation.json from ablate");
  s_rep->add_option("--metrics", rep.metrics, "metrics.json from eval");
  s_rep->add_option("--out", rep.out, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*s_synth) return cmd_synth(common, synth);
    if (*s_train) return cmd_train(common, train);
    if (*s_ft) return cmd_finetune(common, ft);
    if (*s_inf) return cmd_infer(common, inf);
    if (*s_ev) return cmd_eval(common, ev);
    if (*s_masks) return cmd_eval_masks(masks);
    if (*s_abl) return cmd_ablate(common, abl);
    if (*s_rep) return cmd_report(rep);
  } catch (const UsageFailure& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigFailure& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
