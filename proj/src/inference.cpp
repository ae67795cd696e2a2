#include "falcon/inference.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace falcon {

using json = nlohmann::json;

void EvalConfig::validate() const {
  if (!(threshold > 0 && threshold < 1)) throw Error(ErrorKind::InvalidArgument, "eval.threshold must be in (0,1)");
  if (n_tasks < 1) throw Error(ErrorKind::InvalidArgument, "eval.n_tasks must be >= 1");
}

SegmentationResult infer_patient(const Segmenter<float>& model, const PatientVolume& patient, const InferenceTask& task,
                                 double threshold) {
  if (task.patient_id != patient.id)
    throw Error(ErrorKind::InvalidArgument, "task for " + task.patient_id + " given patient " + patient.id);
  for (int i : task.support)
    if (i < 0 || i >= patient.size()) throw Error(ErrorKind::InvalidArgument, "support index out of range");
  for (int i : task.query)
    if (i < 0 || i >= patient.size()) throw Error(ErrorKind::InvalidArgument, "query index out of range");
  auto& probe = const_cast<Segmenter<float>&>(model);  // checksum reads parameters only
  const auto before = weight_checksum(probe);

  std::vector<FeatureMap<float>> support;
  for (int i : task.support) support.push_back(patient.slices[i]);
  const auto sp = forward_support<float>(model, support, false);

  SegmentationResult res;
  res.patient_id = patient.id;
  res.support = task.support;
  res.query = task.query;
  res.threshold = threshold;
  for (int i : task.query) {
    const auto qp = forward_query<float>(model, patient.slices[i], sp.prototype, false);
    auto pm = to_prob_map(qp.prob, model.config.height, model.config.width);
    res.masks.push_back(binarize(pm, threshold));
    res.probs.push_back(std::move(pm));
  }
  if (weight_checksum(probe) != before) throw Error(ErrorKind::InvalidArgument, "model weights changed during inference");
  return res;
}

SliceMetrics slice_metrics(const BinaryMask& pred, const BinaryMask& gt, Symmetrization how) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw Error(ErrorKind::ShapeMismatch, "prediction and ground truth differ in shape");
  SliceMetrics m;
  const bool pe = pred.empty(), ge = gt.empty();
  m.empty_prediction = pe;
  if (pe && ge) {
    m.both_empty = true;
    m.dsc = 1.0;
    return m;
  }
  if (pe || ge) {
    const double s = sentinel_distance(gt.rows(), gt.cols());
    m.dsc = 0.0;
    m.hd95 = m.hd95_pred_gt = m.hd95_gt_pred = s;
    return m;
  }
  const auto bp = boundary_pixels(pred), bg = boundary_pixels(gt);
  m.dsc = dsc(pred, gt);
  m.hd95_pred_gt = hd95(bp, bg);
  m.hd95_gt_pred = hd95(bg, bp);
  m.hd95 = how == Symmetrization::Max ? std::max(m.hd95_pred_gt, m.hd95_gt_pred)
                                      : 0.5 * (m.hd95_pred_gt + m.hd95_gt_pred);
  return m;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  double ss = 0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / double(values.size()));
  return a;
}

void MetricsReport::recompute() {
  if (pooled) {
    dsc = aggregate(slice_dsc);
    hd95 = aggregate(slice_hd95);
    return;
  }
  std::vector<double> d, h;
  for (const auto& r : rows) {
    d.push_back(r.dsc);
    h.push_back(r.hd95);
  }
  dsc = aggregate(d);
  hd95 = aggregate(h);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::string out = "task,patient_id,slices,dsc,hd95,hd95_pred_to_gt,hd95_gt_to_pred,empty_predictions\n";
  for (const auto& r : rows)
    out += std::to_string(r.task) + "," + r.patient_id + "," + std::to_string(r.slices) + "," + fmt(r.dsc) + "," +
           fmt(r.hd95) + "," + fmt(r.hd95_pred_gt) + "," + fmt(r.hd95_gt_pred) + "," +
           std::to_string(r.empty_predictions) + "\n";
  return out;
}

std::string MetricsReport::to_json() const {
  json j;
  j["name"] = name;
  j["rows"] = json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"task", r.task},
                         {"patient_id", r.patient_id},
                         {"slices", r.slices},
                         {"dsc", r.dsc},
                         {"hd95", r.hd95},
                         {"hd95_pred_to_gt", r.hd95_pred_gt},
                         {"hd95_gt_to_pred", r.hd95_gt_pred},
                         {"empty_predictions", r.empty_predictions}});
  j["aggregate"] = {{"dsc_mean", dsc.mean}, {"dsc_std", dsc.std}, {"hd95_mean", hd95.mean}, {"hd95_std", hd95.std},
                    {"pooled", pooled}};
  if (pooled) j["slices"] = {{"dsc", slice_dsc}, {"hd95", slice_hd95}};
  j["params"] = params;
  j["flops"] = flops;
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  j["threshold"] = threshold;
  j["task_construction"] = task_construction;
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport m;
  try {
    const auto j = json::parse(text);
    m.name = j.value("name", "");
    for (const auto& r : j.at("rows"))
      m.rows.push_back({r.at("task").get<int>(), r.at("patient_id").get<std::string>(), r.at("slices").get<int>(),
                        r.at("dsc").get<double>(), r.at("hd95").get<double>(), r.at("hd95_pred_to_gt").get<double>(),
                        r.at("hd95_gt_to_pred").get<double>(), r.at("empty_predictions").get<int>()});
    const auto& a = j.at("aggregate");
    m.dsc = {a.at("dsc_mean").get<double>(), a.at("dsc_std").get<double>()};
    m.hd95 = {a.at("hd95_mean").get<double>(), a.at("hd95_std").get<double>()};
    m.pooled = a.value("pooled", false);
    if (j.contains("slices")) {
      m.slice_dsc = j["slices"].at("dsc").get<std::vector<double>>();
      m.slice_hd95 = j["slices"].at("hd95").get<std::vector<double>>();
    }
    m.params = j.value("params", 0LL);
    m.flops = j.value("flops", 0LL);
    m.config_digest = j.value("config_digest", "");
    m.seed = j.value("seed", std::uint64_t(0));
    m.threshold = j.value("threshold", 0.5);
    m.task_construction = j.value("task_construction", "");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed metrics report: ") + e.what());
  }
  return m;
}

MetricsReport evaluate_predictions(const std::vector<SegmentationResult>& results, const SealedMasks& sealed,
                                   const EvalConfig& cfg) {
  MetricsReport rep;
  rep.pooled = cfg.pooled;
  rep.threshold = cfg.threshold;
  for (std::size_t t = 0; t < results.size(); ++t) {
    const auto& res = results[t];
    const auto& gt = sealed.at(res.patient_id);
    TaskRow row;
    row.task = int(t);
    row.patient_id = res.patient_id;
    row.slices = int(res.query.size());
    if (res.query.empty()) throw Error(ErrorKind::InvalidArgument, "task " + std::to_string(t) + " has no query slices");
    for (std::size_t q = 0; q < res.query.size(); ++q) {
      const int idx = res.query[q];
      if (idx < 0 || idx >= int(gt.size()))
        throw Error(ErrorKind::MissingGroundTruth, res.patient_id + ": no ground truth for slice " + std::to_string(idx));
      const auto m = slice_metrics(res.masks[q], gt[std::size_t(idx)], cfg.symmetrization);
      row.dsc += m.dsc;
      row.hd95 += m.hd95;
      row.hd95_pred_gt += m.hd95_pred_gt;
      row.hd95_gt_pred += m.hd95_gt_pred;
      row.empty_predictions += m.empty_prediction && !m.both_empty ? 1 : 0;
      rep.slice_dsc.push_back(m.dsc);
      rep.slice_hd95.push_back(m.hd95);
    }
    const double n = double(res.query.size());
    row.dsc /= n;
    row.hd95 /= n;
    row.hd95_pred_gt /= n;
    row.hd95_gt_pred /= n;
    rep.rows.push_back(row);
  }
  rep.recompute();
  return rep;
}

MetricsReport evaluate_tasks(const Segmenter<float>& model, const std::vector<PatientVolume>& volumes,
                             const std::vector<InferenceTask>& tasks, const SealedMasks& sealed, const EvalConfig& cfg) {
  cfg.validate();
  std::map<std::string, const PatientVolume*> by_id;
  for (const auto& v : volumes) by_id[v.id] = &v;
  std::vector<SegmentationResult> results;
  for (const auto& t : tasks) {
    auto it = by_id.find(t.patient_id);
    if (it == by_id.end()) throw Error(ErrorKind::InvalidArgument, "task names unknown patient " + t.patient_id);
    if (!sealed.contains(t.patient_id))
      throw Error(ErrorKind::MissingGroundTruth, "no sealed ground truth for patient " + t.patient_id);
    results.push_back(infer_patient(model, *it->second, t, cfg.threshold));
  }
  auto rep = evaluate_predictions(results, sealed, cfg);
  const auto cc = count_params_flops(model.config);
  rep.params = cc.params;
  rep.flops = cc.flops;
  return rep;
}

}  // namespace falcon
