#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "falcon/episodes.hpp"

using namespace falcon;

namespace {

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

// n slices of size 4x4; `labeled` positions carry a one-pixel mask.
PatientVolume patient(const std::string& id, int n, const std::vector<int>& labeled, Split split = Split::Train) {
  PatientVolume v;
  v.id = id;
  v.split = split;
  for (int i = 0; i < n; ++i) {
    Image img(3, 4, 4);
    img.data.setConstant(float(i) / float(n));
    v.slices.push_back(img);
    v.acquisition.push_back(i);
  }
  for (int l : labeled) {
    BinaryMask m(4, 4);
    m.set(1, 1, true);
    v.masks[l] = m;
  }
  return v;
}

SourceDataset tiny_source(int classes, int per_class) {
  SourceDataset d;
  for (int c = 0; c < classes; ++c) {
    d.classes.push_back("c" + std::to_string(c));
    d.samples.emplace_back();
    for (int i = 0; i < per_class; ++i) {
      Image img(3, 4, 4);
      img.data.setConstant(0.5f);
      BinaryMask m(4, 4);
      m.set(0, 0, true);
      d.samples.back().push_back({img, m});
    }
  }
  return d;
}

}  // namespace

TEST_CASE("uniform spacing rules") {
  CHECK(uniform_spacing(10, 5) == std::vector<int>{0, 2, 4, 6, 8});
  CHECK(uniform_spacing(7, 7) == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
  CHECK(uniform_spacing_inclusive(20, 4) == std::vector<int>{0, 6, 13, 19});
  CHECK(uniform_spacing_inclusive(21, 1) == std::vector<int>{10});
  CHECK(uniform_spacing_inclusive(20, 1) == std::vector<int>{10});
  CHECK(uniform_spacing_inclusive(9, 2) == std::vector<int>{0, 8});
}

TEST_CASE("uniform spacing: strictly increasing and in range") {
  for (int n = 1; n <= 40; ++n) {
    for (int k = 1; k <= n; ++k) {
      for (const auto& s : {uniform_spacing(n, k), uniform_spacing_inclusive(n, k)}) {
        REQUIRE(int(s.size()) == k);
        CHECK(s.front() >= 0);
        CHECK(s.back() < n);
        CHECK(std::adjacent_find(s.begin(), s.end(), std::greater_equal<int>()) == s.end());
      }
    }
  }
}

TEST_CASE("sample_source_episode: exhausting a class stays disjoint") {
  const auto d = tiny_source(3, 6);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto ep = sample_source_episode(d, 5, 1, rng);
    std::set<int> all(ep.support.begin(), ep.support.end());
    all.insert(ep.query.begin(), ep.query.end());
    CHECK(all.size() == 6);
    CHECK(*all.rbegin() == 5);
  }
  CHECK(kind_of([&] { sample_source_episode(d, 6, 1, rng); }) == ErrorKind::InsufficientSamples);
}

TEST_CASE("sample_source_episode: same seed, same episodes") {
  const auto d = tiny_source(10, 8);
  SourceSampler a(d, 5, 2, 77), b(d, 5, 2, 77);
  std::vector<SourceEpisode> ea, eb;
  for (int i = 0; i < 100; ++i) {
    ea.push_back(a.next());
    eb.push_back(b.next());
  }
  CHECK(ea == eb);
  CHECK(to_jsonl(ea, 77) == to_jsonl(eb, 77));
}

TEST_CASE("sample_source_episode: class frequency within 3 sigma of uniform") {
  const auto d = tiny_source(10, 6);
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    std::vector<int> count(10, 0);
    for (int i = 0; i < 1000; ++i) ++count[sample_source_episode(d, 5, 1, rng).class_id];
    const double sigma = std::sqrt(1000 * 0.1 * 0.9);
    for (int c : count) CHECK(std::abs(c - 100.0) <= 3 * sigma);
  }
}

TEST_CASE("build_target_task: uniform spacing over the unlabeled ordering") {
  // labeled at 1,4,7,10,13 leaves 10 unlabeled: 0,2,3,5,6,8,9,11,12,14
  const auto p = patient("p", 15, {1, 4, 7, 10, 13});
  const auto t = build_target_task(p, 5);
  CHECK(t.patient_id == "p");
  CHECK(t.support == std::vector<int>{0, 3, 6, 9, 12});
  CHECK(t.query == std::vector<int>{1, 4, 7, 10, 13});

  const auto all = build_target_task(p, 10);
  CHECK(all.support == p.unlabeled());
}

TEST_CASE("build_target_task: support and query never overlap") {
  Rng gen(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 4 + int(gen() % 30);
    std::vector<int> labeled;
    for (int i = 0; i < n; ++i)
      if (gen() % 3 == 0) labeled.push_back(i);
    if (labeled.empty() || int(labeled.size()) == n) continue;
    const auto p = patient("p", n, labeled);
    const int k = 1 + int(gen() % (n - int(labeled.size())));
    for (auto sel : {SupportSelection::Uniform, SupportSelection::Random}) {
      const auto t = build_target_task(p, k, sel, &gen);
      CHECK(int(t.support.size()) == k);
      for (int s : t.support) CHECK(std::find(t.query.begin(), t.query.end(), s) == t.query.end());
      CHECK(t.query == labeled);
    }
  }
}

TEST_CASE("build_target_task: precondition errors") {
  CHECK(kind_of([] { build_target_task(patient("p", 6, {0, 1, 2}), 4); }) == ErrorKind::InsufficientUnlabeled);
  CHECK(kind_of([] { build_target_task(patient("p", 6, {}), 4); }) == ErrorKind::NoLabeledQuery);
}

TEST_CASE("build_inference_task: support spacing and full-volume query") {
  const auto p = patient("t", 20, {}, Split::Test);
  const auto t = build_inference_task(p, 4);
  CHECK(t.support == std::vector<int>{0, 6, 13, 19});
  CHECK(t.query.size() == 20);
  CHECK(build_inference_task(p, 1).support == std::vector<int>{10});
  CHECK(kind_of([] { build_inference_task(patient("t", 3, {}, Split::Test), 4); }) == ErrorKind::InsufficientSlices);
  CHECK(kind_of([] { build_inference_task(patient("t", 9, {}, Split::Train), 4); }) == ErrorKind::InvalidArgument);

  const auto r1 = build_inference_task(p, 5, 99), r2 = build_inference_task(p, 5, 99);
  CHECK(r1 == r2);
  CHECK(r1.seed == 99);
  CHECK(std::is_sorted(r1.support.begin(), r1.support.end()));
}

TEST_CASE("build_test_tasks: round robin, uniform first visit, reproducible stream") {
  const auto a = patient("a", 20, {}, Split::Test), b = patient("b", 25, {}, Split::Test),
             c = patient("c", 30, {}, Split::Test);
  const std::vector<const PatientVolume*> ps{&a, &b, &c};
  const auto tasks = build_test_tasks(ps, 5, 10, 3);
  REQUIRE(tasks.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(tasks[i].patient_id == ps[i % 3]->id);
  for (int i = 0; i < 3; ++i) CHECK(tasks[i] == build_inference_task(*ps[i], 5));
  std::set<std::uint64_t> seeds;
  for (int i = 3; i < 10; ++i) seeds.insert(tasks[i].seed);
  CHECK(seeds.size() == 7);

  const auto again = build_test_tasks(ps, 5, 10, 3);
  CHECK(to_jsonl(tasks) == to_jsonl(again));
  CHECK(inference_tasks_from_jsonl(to_jsonl(tasks)) == tasks);
}

TEST_CASE("split spec: partition and labeled fraction") {
  std::vector<PatientVolume> vols;
  for (int i = 0; i < 5; ++i) vols.push_back(patient("p" + std::to_string(i), 10, {0, 5, 9, 3}));
  const auto spec = SplitSpec::sequential(vols, 2, 1);
  spec.apply(vols);
  CHECK(vols[1].split == Split::Train);
  CHECK(vols[2].split == Split::Val);
  CHECK(vols[4].split == Split::Test);
  CHECK(spec.labeled_fraction(Split::Train, vols) == doctest::Approx(0.4));
  CHECK_THROWS_AS(SplitSpec::sequential(vols, 4, 2), Error);
}
