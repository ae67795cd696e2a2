// Acceptance run: one PASS/FAIL line per criterion.
//
//   falcon_acceptance [criteria...] [--report FILE]
//
// With no criteria listed, all nine run. Exit status is 0 only when every
// selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "falcon/ablation.hpp"
#include "falcon/config.hpp"
#include "falcon/data_io.hpp"
#include "falcon/inference.hpp"
#include "falcon/losses.hpp"
#include "falcon/network.hpp"
#include "falcon/training.hpp"
#include "oracles.hpp"
#include "tmpdir.hpp"

using namespace falcon;

namespace {

// Tolerances.
constexpr double kDistTol = 1e-9;
constexpr double kPercentileTol = 1e-12;
constexpr double kFdStep = 1e-4;
constexpr double kFdRelTol = 1e-4;
constexpr double kPerfectLossTol = 1e-5;
constexpr double kPixelTol = 1.0 / 255.0;
constexpr double kUnlabeledTol = 0.02;
constexpr int kMasksPerSize = 200;
constexpr int kLossInstances = 20;
constexpr int kAblationSeeds = 5;
constexpr double kGeometryBudget = 30, kNetworkBudget = 120, kReplicationBudget = 30 * 60;

struct Result {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename S>
FeatureMap<S> random_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeatureMap<S> img(3, h, w);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = S(u(rng));
  return img;
}

bool bit_equal(const ProbMap<float>& a, const ProbMap<float>& b) { return (a.grid() == b.grid()).all(); }

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

void geometry(Result& r) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_dt = 0, worst_dsc = 0, worst_hd = 0, worst_p = 0;
  int boundary_mismatch = 0, cases = 0;
  for (int n : {4, 8, 16}) {
    for (int i = 0; i < kMasksPerSize; ++i) {
      const double density = std::uniform_real_distribution<double>(0.02, 0.6)(rng);
      auto a = oracle::random_mask(rng, n, n, density);
      auto b = oracle::random_mask(rng, n, n, density);
      // every tenth mask stays empty to exercise the sentinel
      if (i % 10 != 0) a.set(int(rng() % n), int(rng() % n), true);
      b.set(int(rng() % n), int(rng() % n), true);
      ++cases;

      worst_dt = std::max(worst_dt, (distance_transform(a).grid - oracle::brute_force_dt(a)).abs().maxCoeff());
      if (a.empty()) continue;
      worst_dsc = std::max(worst_dsc, std::abs(dsc(a, b) - oracle::brute_force_dsc(a, b)));

      const auto ba = boundary_pixels(a), bb = boundary_pixels(b);
      if (!(ba == oracle::brute_force_boundary(a))) ++boundary_mismatch;
      const auto ra = oracle::brute_force_boundary(a), rb = oracle::brute_force_boundary(b);
      worst_hd = std::max(worst_hd, std::abs(hd_directed(ba, bb) - oracle::brute_force_hd(ra, rb)));
      worst_hd = std::max(worst_hd, std::abs(hd_directed(bb, ba) - oracle::brute_force_hd(rb, ra)));
      const double ref95 = oracle::reference_percentile(oracle::brute_force_min_distances(ra, rb), 95);
      worst_p = std::max(worst_p, std::abs(hd95(ba, bb) - ref95));
      std::vector<double> v(1 + rng() % 40);
      for (auto& x : v) x = std::uniform_real_distribution<double>(0, 20)(rng);
      const double q = std::uniform_real_distribution<double>(0, 100)(rng);
      worst_p = std::max(worst_p, std::abs(percentile(v, q) - oracle::reference_percentile(v, q)));
    }
  }
  const double secs = seconds_since(t0);
  r.require(worst_dt <= kDistTol, "distance transform error " + fmt("%.3g", worst_dt));
  r.require(worst_dsc <= kDistTol, "dsc error " + fmt("%.3g", worst_dsc));
  r.require(worst_hd <= kDistTol, "directed HD error " + fmt("%.3g", worst_hd));
  r.require(worst_p <= kPercentileTol, "percentile error " + fmt("%.3g", worst_p));
  r.require(boundary_mismatch == 0, std::to_string(boundary_mismatch) + " boundary mismatches");
  r.require(secs < kGeometryBudget, "runtime " + fmt("%.1f", secs) + " s");
  r.detail << (r.pass ? "" : " | ") << cases << " masks over sizes 4/8/16, max errors dt " << fmt("%.2g", worst_dt)
           << " hd " << fmt("%.2g", worst_hd) << " p95 " << fmt("%.2g", worst_p) << ", " << fmt("%.2f", secs) << " s";
}

void loss_gradients(Result& r) {
  std::mt19937_64 rng(202);
  const LossConfig cfg;
  auto random_pred = [&] {
    std::uniform_real_distribution<double> u(0.02, 0.98);
    Grid<double> g(8, 8);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
    return ProbMap<double>(g);
  };
  auto nonempty = [&] {
    auto m = oracle::random_mask(rng, 8, 8, 0.3);
    m.set(int(rng() % 8), int(rng() % 8), true);
    return m;
  };
  std::vector<std::pair<int, int>> all;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) all.emplace_back(i, j);

  double w_hd = 0, w_dice = 0, w_bce = 0, worst_perfect = 0;
  auto worst = [&](const Grid<double>& analytic, const std::function<double(const Eigen::ArrayXXd&)>& f,
                   const Grid<double>& x) {
    const auto fd = oracle::central_differences(f, x, all, kFdStep);
    double w = 0;
    for (std::size_t k = 0; k < all.size(); ++k)
      w = std::max(w, oracle::relative_error(analytic(all[k].first, all[k].second), fd[k]));
    return w;
  };
  for (int i = 0; i < kLossInstances; ++i) {
    const auto gt = nonempty();
    const auto p = random_pred();
    const auto dgt = distance_transform(gt);
    const auto dpred = distance_transform(binarize(p, cfg.prob_threshold));
    w_hd = std::max(w_hd, worst(hausdorff_loss(p, gt, dgt, dpred, cfg).grad, [&](const Eigen::ArrayXXd& x) {
      return hausdorff_loss(ProbMap<double>(x), gt, dgt, dpred, cfg).value.total;
    }, p.grid()));
    w_dice = std::max(w_dice, worst(dice_loss_with_grad(p, gt, cfg.epsilon).grad, [&](const Eigen::ArrayXXd& x) {
      return dice_loss(ProbMap<double>(x), gt, cfg.epsilon);
    }, p.grid()));
    w_bce = std::max(w_bce, worst(bce_loss_with_grad(p, gt).grad,
                                  [&](const Eigen::ArrayXXd& x) { return bce_loss(ProbMap<double>(x), gt); }, p.grid()));
    worst_perfect = std::max(worst_perfect, hausdorff_loss(ProbMap<double>(gt.as<double>()), gt, cfg).value.total);
  }
  r.require(w_hd < kFdRelTol, "hausdorff rel err " + fmt("%.3g", w_hd));
  r.require(w_dice < kFdRelTol, "dice rel err " + fmt("%.3g", w_dice));
  r.require(w_bce < kFdRelTol, "bce rel err " + fmt("%.3g", w_bce));
  r.require(worst_perfect < kPerfectLossTol, "perfect-prediction loss " + fmt("%.3g", worst_perfect));
  r.detail << (r.pass ? "" : " | ") << kLossInstances << " instances of 8x8, max rel err hausdorff "
           << fmt("%.2g", w_hd) << " dice " << fmt("%.2g", w_dice) << " bce " << fmt("%.2g", w_bce)
           << ", perfect-prediction loss " << fmt("%.2g", worst_perfect);
}

void network_invariants(Result& r) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  const auto cfg = NetworkConfig::toy();
  Segmenter<float> net(cfg);
  net.init(rng);
  const auto q = random_image<float>(rng, cfg.height, cfg.width);
  int perms = 0;
  for (int k : {2, 3, 5}) {
    std::vector<FeatureMap<float>> sup;
    for (int i = 0; i < k; ++i) sup.push_back(random_image<float>(rng, cfg.height, cfg.width));
    const auto ref = forward<float>(net, q, sup);
    r.require(ref.rows() == cfg.height && ref.cols() == cfg.width, "output shape");
    r.require((ref.grid() >= 0).all() && (ref.grid() <= 1).all(), "output outside [0,1]");
    std::vector<int> order(k);
    for (int i = 0; i < k; ++i) order[i] = i;
    int seen = 0;
    do {
      if (k == 5 && seen++ % 7 != 0) continue;  // every 7th of the 120 orderings
      std::vector<FeatureMap<float>> permuted;
      for (int i : order) permuted.push_back(sup[i]);
      r.require(bit_equal(forward<float>(net, q, permuted), ref), "K=" + std::to_string(k) + " not permutation invariant");
      ++perms;
    } while (std::next_permutation(order.begin(), order.end()));
  }

  // gradient flow through every parameter group
  Segmenter<float> grad(cfg);
  grad.zero();
  std::vector<FeatureMap<float>> sup;
  for (int i = 0; i < cfg.support_size; ++i) sup.push_back(random_image<float>(rng, cfg.height, cfg.width));
  BinaryMask gt(cfg.height, cfg.width);
  for (int i = 8; i < 20; ++i)
    for (int j = 10; j < 24; ++j) gt.set(i, j, true);
  const auto sp = forward_support<float>(net, sup, true);
  const auto qp = forward_query<float>(net, q, sp.prototype, true);
  const auto hl = hausdorff_loss(to_prob_map(qp.prob, cfg.height, cfg.width), gt, LossConfig{});
  const auto d = backward_query<float>(net, qp, from_grid(hl.grad), grad);
  backward_support<float>(net, sp, d, grad);
  int groups = 0;
  for (const auto& p : grad.params()) {
    ++groups;
    r.require(p.value->cwiseAbs().maxCoeff() > 0.0f, "no gradient reaches " + p.name);
  }

  // ablation: output independent of the support set
  auto ab = cfg;
  ab.relation_module = false;
  Segmenter<float> no_rm(ab);
  no_rm.init(rng);
  std::vector<FeatureMap<float>> other{random_image<float>(rng, cfg.height, cfg.width)};
  r.require(bit_equal(forward<float>(no_rm, q, sup), forward<float>(no_rm, q, other)),
            "ablated output depends on the support");
  const double secs = seconds_since(t0);
  r.require(secs < kNetworkBudget, "runtime " + fmt("%.1f", secs) + " s");
  r.detail << (r.pass ? "" : " | ") << perms << " support orderings for K in {2,3,5} bit-identical, " << groups
           << " parameter groups with gradient, ablated output support-independent, " << fmt("%.2f", secs) << " s";
}

void determinism(Result& r) {
  const auto source = synth_source(10, 8, 32, 404);
  TrainConfig tc;
  tc.seed = 9;
  TempDir tmp("accept_det");
  tc.episodes = 60;
  auto a = meta_train(source, NetworkConfig::toy(), tc);
  auto b = meta_train(source, NetworkConfig::toy(), tc);
  save_checkpoint(a, tmp.path / "a.ckpt");
  save_checkpoint(b, tmp.path / "b.ckpt");
  r.require(read_bytes(tmp.path / "a.ckpt") == read_bytes(tmp.path / "b.ckpt"), "repeat run checkpoints differ");

  tc.episodes = 30;
  auto half = meta_train(source, NetworkConfig::toy(), tc);
  save_checkpoint(half, tmp.path / "half.ckpt");
  auto resumed = load_checkpoint(tmp.path / "half.ckpt");
  tc.episodes = 60;
  meta_train(source, resumed, tc);
  save_checkpoint(resumed, tmp.path / "resumed.ckpt");
  r.require(weight_checksum(resumed.model) == weight_checksum(a.model), "resumed weights differ");
  r.require(read_bytes(tmp.path / "resumed.ckpt") == read_bytes(tmp.path / "a.ckpt"), "resumed checkpoint differs");
  r.detail << (r.pass ? "" : " | ") << "60-episode runs byte-identical; resume at 30 matches the uninterrupted run";
}

void inference_contract(Result& r) {
  const auto bench = make_benchmark(DataConfig{}, 505);
  const auto cfg = NetworkConfig::toy();
  Segmenter<float> net(cfg);
  std::mt19937_64 rng(505);
  net.init(rng);
  const auto before = weight_checksum(net);
  for (const auto& v : bench.test) infer_patient(net, v, build_inference_task(v, cfg.support_size), 0.5);
  r.require(weight_checksum(net) == before, "infer_patient changed the weights");

  std::vector<const PatientVolume*> ps;
  for (const auto& v : bench.test) ps.push_back(&v);
  const auto tasks = build_test_tasks(ps, cfg.support_size, 10, 505);
  std::vector<SegmentationResult> oracle_results;
  for (const auto& t : tasks) {
    SegmentationResult s;
    s.patient_id = t.patient_id;
    s.support = t.support;
    s.query = t.query;
    for (int i : t.query) s.masks.push_back(bench.sealed.at(t.patient_id)[i]);
    oracle_results.push_back(s);
  }
  const auto rep = evaluate_predictions(oracle_results, bench.sealed, EvalConfig{});
  for (const auto& row : rep.rows)
    r.require(row.dsc == 1.0 && row.hd95 == 0.0, "task " + std::to_string(row.task) + " not perfect");
  r.require(rep.rows.size() == tasks.size(), "missing task rows");
  r.detail << (r.pass ? "" : " | ") << "checksum unchanged over " << bench.test.size() << " test patients; oracle scores DSC "
           << rep.dsc.mean << " HD95 " << rep.hd95.mean << " on " << rep.rows.size() << " tasks";
}

struct Replication {
  bool ran = false;
  AblationTable table;
  double seconds = 0;
};

Replication& replication() {
  static Replication rep;
  if (!rep.ran) {
    const auto t0 = Clock::now();
    std::vector<std::uint64_t> seeds;
    for (int s = 1; s <= kAblationSeeds; ++s) seeds.push_back(std::uint64_t(s));
    rep.table = run_ablation_suite(FalconConfig{}, default_ablation_variants(), seeds, &std::cerr);
    rep.seconds = seconds_since(t0);
    rep.ran = true;
    std::cout << rep.table.to_markdown();
  }
  return rep;
}

void loss_ordering(Result& r) {
  const auto& rep = replication();
  const auto& f = rep.table.row("falcon_full");
  const auto& b = rep.table.row("baseline_bce");
  const auto& h = rep.table.row("hd_only");
  r.require(f.hd95_summary.mean < b.hd95_summary.mean, "falcon_full HD95 " + fmt("%.3f", f.hd95_summary.mean) +
                                                           " not below baseline_bce " + fmt("%.3f", b.hd95_summary.mean));
  r.require(f.hd95_summary.mean <= h.hd95_summary.mean, "falcon_full HD95 " + fmt("%.3f", f.hd95_summary.mean) +
                                                            " above hd_only " + fmt("%.3f", h.hd95_summary.mean));
  r.require(f.dsc_summary.mean >= b.dsc_summary.mean, "falcon_full DSC " + fmt("%.4f", f.dsc_summary.mean) +
                                                          " below baseline_bce " + fmt("%.4f", b.dsc_summary.mean));
  r.require(rep.seconds < kReplicationBudget, "runtime " + fmt("%.0f", rep.seconds) + " s");
  r.detail << (r.pass ? "" : " | ") << kAblationSeeds << " seeds, HD95 falcon " << fmt("%.3f", f.hd95_summary.mean)
           << " baseline " << fmt("%.3f", b.hd95_summary.mean) << " hd_only " << fmt("%.3f", h.hd95_summary.mean)
           << ", DSC falcon " << fmt("%.4f", f.dsc_summary.mean) << " baseline " << fmt("%.4f", b.dsc_summary.mean)
           << ", " << fmt("%.0f", rep.seconds) << " s";
}

void relation_ablation(Result& r) {
  const auto& rep = replication();
  const auto& f = rep.table.row("falcon_full");
  const auto& n = rep.table.row("falcon_no_rm");
  r.require(f.hd95_summary.mean <= n.hd95_summary.mean, "falcon_full HD95 " + fmt("%.3f", f.hd95_summary.mean) +
                                                            " above falcon_no_rm " + fmt("%.3f", n.hd95_summary.mean));
  r.detail << (r.pass ? "" : " | ") << kAblationSeeds << " seeds, HD95 falcon " << fmt("%.3f", f.hd95_summary.mean)
           << " without relation module " << fmt("%.3f", n.hd95_summary.mean);
}

void compute(Result& r) {
  const auto toy = count_params_flops(NetworkConfig::toy());
  r.require(toy.params < 1000000, "toy has " + std::to_string(toy.params) + " params");
  nn::Conv2d<float> conv(3, 8, 3, 1);
  r.require(conv.param_count() == 224, "3->8 3x3 conv has " + std::to_string(conv.param_count()) + " params");
  const auto large = count_params_flops(NetworkConfig::large_backbone());
  r.detail << (r.pass ? "" : " | ") << "toy " << toy.params << " params " << fmt("%.2f", toy.flops / 1e6)
           << " MFLOPs; 3->8 conv 224 params; large_backbone " << fmt("%.2f", large.params / 1e6) << "M params "
           << fmt("%.2f", large.flops / 1e9) << " GFLOPs (reference 9.90M / 2.30 GFLOPs, not asserted)";
}

void data_pipeline(Result& r) {
  TempDir tmp("accept_data");
  auto t = synth_patients(3, 10, 0.4, 32, 909);
  SplitSpec::sequential(t.volumes, 1, 1).apply(t.volumes);
  export_patients(tmp.path / "ds", "roundtrip", t.volumes, &t.sealed);
  const auto in = ingest_patients(tmp.path / "ds", IngestOptions{32, 32, false});
  double worst_px = 0;
  bool masks_exact = in.volumes.size() == t.volumes.size();
  for (std::size_t p = 0; p < in.volumes.size() && masks_exact; ++p) {
    const auto &a = t.volumes[p], &b = in.volumes[p];
    masks_exact = a.size() == b.size() && a.masks.size() == b.masks.size();
    for (int i = 0; i < a.size() && masks_exact; ++i)
      worst_px = std::max(worst_px, double((a.slices[i].data - b.slices[i].data).cwiseAbs().maxCoeff()));
    for (const auto& [i, m] : a.masks) masks_exact = masks_exact && b.masks.count(i) && b.masks.at(i) == m;
    if (a.split != Split::Train)
      for (int i = 0; i < a.size(); ++i) masks_exact = masks_exact && in.sealed.at(a.id)[i] == t.sealed.at(a.id)[i];
  }
  r.require(worst_px <= kPixelTol, "pixel error " + fmt("%.4g", worst_px));
  r.require(masks_exact, "masks changed in the round trip");

  // zero-slice fixtures at known positions
  std::vector<Image> slices;
  std::set<int> black{0, 3, 4, 9};
  for (int i = 0; i < 10; ++i) {
    Image img(3, 8, 8);
    img.data.setConstant(black.count(i) ? 0.0f : 0.1f * float(i + 1));
    if (i == 5) img.data.setZero(), img.data(2, 17) = 0.01f;  // a single lit pixel keeps the slice
    slices.push_back(img);
  }
  const auto dr = drop_empty(slices);
  r.require(dr.dropped == std::vector<int>(black.begin(), black.end()), "drop_empty dropped the wrong slices");
  r.require(dr.kept.size() == 6, "drop_empty kept " + std::to_string(dr.kept.size()));

  double worst_frac = 0;
  for (double f : {0.2, 0.4, 0.5}) {
    const auto s = synth_patients(8, 30, f, 32, 910);
    double unl = 0, all = 0;
    for (const auto& v : s.volumes) unl += v.unlabeled().size(), all += v.size();
    worst_frac = std::max(worst_frac, std::abs(unl / all - (1.0 - f)));
  }
  r.require(worst_frac <= kUnlabeledTol, "unlabeled fraction off by " + fmt("%.4f", worst_frac));
  r.detail << (r.pass ? "" : " | ") << "round trip max pixel error " << fmt("%.2g", worst_px)
           << ", masks exact; drop_empty removed {0,3,4,9}; unlabeled fraction within " << fmt("%.4f", worst_frac);
}

struct Criterion {
  int id;
  const char* title;
  std::function<void(Result&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "geometry matches brute-force oracles", geometry},
      {2, "loss gradients match central differences", loss_gradients},
      {3, "network invariants", network_invariants},
      {4, "determinism and resume", determinism},
      {5, "inference contract", inference_contract},
      {6, "HD95/DSC ordering against the BCE baseline and Hausdorff-only", loss_ordering},
      {7, "relation module does not raise HD95", relation_ablation},
      {8, "compute accounting", compute},
      {9, "data pipeline", data_pipeline},
  };
  std::set<int> selected;
  std::string report;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--report" && i + 1 < argc) {
      report = argv[++i];
    } else {
      try {
        selected.insert(std::stoi(a));
      } catch (...) {
        std::cerr << "usage: falcon_acceptance [1-9 ...] [--report FILE]\n";
        return 2;
      }
    }
  }
  std::ostringstream lines;
  bool ok = true;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Result r;
    try {
      c.run(r);
    } catch (const std::exception& e) {
      r.require(false, std::string("threw ") + e.what());
    }
    ok = ok && r.pass;
    const std::string line =
        std::string(r.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + ": " + c.title + " (" +
        r.detail.str() + ")";
    std::cout << line << std::endl;
    lines << line << "\n";
  }
  if (!report.empty()) std::ofstream(report) << lines.str();
  return ok ? 0 : 1;
}
