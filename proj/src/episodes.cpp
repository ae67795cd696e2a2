#include "falcon/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace falcon {

using json = nlohmann::json;

SplitSpec SplitSpec::sequential(const std::vector<PatientVolume>& volumes, int n_train, int n_val) {
  if (n_train < 0 || n_val < 0 || n_train + n_val > int(volumes.size()))
    throw Error(ErrorKind::InvalidArgument, "split counts exceed the number of patients");
  SplitSpec s;
  for (int i = 0; i < int(volumes.size()); ++i) {
    const auto& v = volumes[i];
    s.assignment[v.id] = i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test;
    s.labeled[v.id] = v.labeled();
  }
  return s;
}

void SplitSpec::validate(const std::vector<PatientVolume>& volumes) const {
  std::set<std::string> ids;
  for (const auto& v : volumes) {
    ids.insert(v.id);
    if (!assignment.count(v.id)) throw Error(ErrorKind::InvalidArgument, "patient " + v.id + " has no split");
    if (auto it = labeled.find(v.id); it != labeled.end())
      for (int i : it->second)
        if (i < 0 || i >= v.size()) throw Error(ErrorKind::InvalidArgument, "labeled index out of range for " + v.id);
  }
  for (const auto& [id, s] : assignment)
    if (!ids.count(id)) throw Error(ErrorKind::InvalidArgument, "split names unknown patient " + id);
}

void SplitSpec::apply(std::vector<PatientVolume>& volumes) const {
  validate(volumes);
  for (auto& v : volumes) v.split = assignment.at(v.id);
}

double SplitSpec::labeled_fraction(Split which, const std::vector<PatientVolume>& volumes) const {
  long long total = 0, lab = 0;
  for (const auto& v : volumes) {
    if (assignment.at(v.id) != which) continue;
    total += v.size();
    if (auto it = labeled.find(v.id); it != labeled.end()) lab += (long long)it->second.size();
  }
  return total == 0 ? 0.0 : double(lab) / double(total);
}

SourceEpisode sample_source_episode(const SourceDataset& data, int k, int q, Rng& rng) {
  if (k < 1 || q < 1) throw Error(ErrorKind::InvalidArgument, "episodes need K >= 1 and Q >= 1");
  if (data.samples.empty()) throw Error(ErrorKind::InsufficientSamples, "source dataset is empty");
  const int n_classes = int(data.samples.size());
  const int c = int(std::uniform_int_distribution<int>(0, n_classes - 1)(rng));
  const int n = int(data.samples[c].size());
  if (n < k + q)
    throw Error(ErrorKind::InsufficientSamples, "class " + std::to_string(c) + " has " + std::to_string(n) +
                                                    " samples, episode needs " + std::to_string(k + q));
  // partial Fisher-Yates: the first k + q entries are a uniform draw without replacement
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k + q; ++i) {
    const int j = int(std::uniform_int_distribution<int>(i, n - 1)(rng));
    std::swap(idx[i], idx[j]);
  }
  SourceEpisode ep;
  ep.class_id = c;
  ep.support.assign(idx.begin(), idx.begin() + k);
  ep.query.assign(idx.begin() + k, idx.begin() + k + q);
  return ep;
}

SourceSampler::SourceSampler(const SourceDataset& data, int k, int q, std::uint64_t seed)
    : data_(&data), k_(k), q_(q), rng_(seed) {}

std::vector<int> uniform_spacing(int n, int k) {
  if (k < 1 || k > n) throw Error(ErrorKind::InvalidArgument, "uniform spacing needs 1 <= k <= n");
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(int((long long)i * n / k));
  return out;
}

std::vector<int> uniform_spacing_inclusive(int n, int k) {
  if (k < 1 || k > n) throw Error(ErrorKind::InvalidArgument, "uniform spacing needs 1 <= k <= n");
  if (k == 1) return {n / 2};
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(int(std::lround(double(i) * (n - 1) / (k - 1))));
  return out;
}

namespace {

std::vector<int> random_subset(int n, int k, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[std::uniform_int_distribution<int>(i, n - 1)(rng)]);
  std::vector<int> out(idx.begin(), idx.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TargetTask build_target_task(const PatientVolume& patient, int k, SupportSelection sel, Rng* rng) {
  const auto unl = patient.unlabeled();
  const auto lab = patient.labeled();
  if (k < 1 || int(unl.size()) < k)
    throw Error(ErrorKind::InsufficientUnlabeled, "patient " + patient.id + " has " + std::to_string(unl.size()) +
                                                      " unlabeled slices, support needs " + std::to_string(k));
  if (lab.empty()) throw Error(ErrorKind::NoLabeledQuery, "patient " + patient.id + " has no labeled slice");
  TargetTask t;
  t.patient_id = patient.id;
  std::vector<int> pick;
  if (sel == SupportSelection::Random) {
    if (!rng) throw Error(ErrorKind::InvalidArgument, "random support selection needs an rng");
    pick = random_subset(int(unl.size()), k, *rng);
  } else {
    pick = uniform_spacing(int(unl.size()), k);
  }
  for (int i : pick) t.support.push_back(unl[i]);
  t.query = lab;
  return t;
}

InferenceTask build_inference_task(const PatientVolume& patient, int k) {
  if (patient.split == Split::Train)
    throw Error(ErrorKind::InvalidArgument, "inference tasks are built on held-out patients, " + patient.id + " is train");
  if (k < 1 || patient.size() < k)
    throw Error(ErrorKind::InsufficientSlices, "patient " + patient.id + " has " + std::to_string(patient.size()) +
                                                   " slices, support needs " + std::to_string(k));
  InferenceTask t;
  t.patient_id = patient.id;
  t.support = uniform_spacing_inclusive(patient.size(), k);
  t.query.resize(patient.size());
  std::iota(t.query.begin(), t.query.end(), 0);
  return t;
}

InferenceTask build_inference_task(const PatientVolume& patient, int k, std::uint64_t seed) {
  InferenceTask t = build_inference_task(patient, k);
  Rng rng(seed);
  t.support = random_subset(patient.size(), k, rng);
  t.seed = seed;
  return t;
}

std::vector<InferenceTask> build_test_tasks(const std::vector<const PatientVolume*>& patients, int k, int n_tasks,
                                            std::uint64_t seed) {
  if (patients.empty()) throw Error(ErrorKind::InvalidArgument, "no test patients");
  std::vector<InferenceTask> out;
  for (int t = 0; t < n_tasks; ++t) {
    const auto& p = *patients[std::size_t(t) % patients.size()];
    if (t < int(patients.size()))
      out.push_back(build_inference_task(p, k));
    else
      out.push_back(build_inference_task(p, k, derive_seed(seed, 5000 + std::uint64_t(t))));
  }
  return out;
}

std::string to_jsonl(const std::vector<InferenceTask>& tasks) {
  std::string out;
  for (const auto& t : tasks)
    out += json{{"patient_id", t.patient_id}, {"support", t.support}, {"query", t.query}, {"seed", t.seed}}.dump() + "\n";
  return out;
}

std::string to_jsonl(const std::vector<TargetTask>& tasks, std::uint64_t seed) {
  std::string out;
  for (const auto& t : tasks)
    out += json{{"patient_id", t.patient_id}, {"support", t.support}, {"query", t.query}, {"seed", seed}}.dump() + "\n";
  return out;
}

std::string to_jsonl(const std::vector<SourceEpisode>& episodes, std::uint64_t seed) {
  std::string out;
  for (const auto& e : episodes)
    out += json{{"class_id", e.class_id}, {"support", e.support}, {"query", e.query}, {"seed", seed}}.dump() + "\n";
  return out;
}

std::vector<InferenceTask> inference_tasks_from_jsonl(const std::string& text) {
  std::vector<InferenceTask> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("patient_id").get<std::string>(), j.at("support").get<std::vector<int>>(),
                     j.at("query").get<std::vector<int>>(), j.value("seed", std::uint64_t(0))});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidArgument, std::string("malformed task record: ") + e.what());
    }
  }
  return out;
}

}  // namespace falcon
