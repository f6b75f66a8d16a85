#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fslab/data.hpp"

using namespace fslab;

TEST_CASE("build_pools takes the first K per class and splits are disjoint") {
  auto ds = synth_dataset(10, 40, 8, 0);
  CHECK(ds.train.size() + ds.val.size() == 400);

  auto pools = build_pools(ds, 20);
  CHECK(pools.train_pool.size() == 200);
  CHECK(pools.test_pool.size() == 200);

  std::set<std::string> train_ids, test_ids;
  for (const auto& img : pools.train_pool) train_ids.insert(img.source_id);
  for (const auto& img : pools.test_pool) test_ids.insert(img.source_id);
  for (const auto& id : test_ids) CHECK(train_ids.count(id) == 0);

  auto single = build_pools(ds, 1);
  CHECK(single.train_pool.size() == 10);
  CHECK(single.test_pool.size() == 10);
}

TEST_CASE("build_pools names the class that is too small") {
  auto ds = synth_dataset(4, 10, 8, 1);  // 5 train / 5 val per class
  try {
    build_pools(ds, 20);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class_000") != std::string::npos);
  }
}

TEST_CASE("episodes are seeded, disjoint, and sized n_shot per class") {
  auto ds = synth_dataset(10, 40, 8, 0);
  auto pools = build_pools(ds, 20);

  auto ep1 = sample_episode(pools, 3, Rng(42));
  auto ep2 = sample_episode(pools, 3, Rng(42));
  auto ep3 = sample_episode(pools, 3, Rng(43));
  CHECK(ep1.support.size() == 30);
  REQUIRE(ep1.support.size() == ep2.support.size());
  bool same = true, differs = false;
  for (size_t i = 0; i < ep1.support.size(); ++i) {
    same = same && ep1.support[i].source_id == ep2.support[i].source_id;
    differs = differs || ep1.support[i].source_id != ep3.support[i].source_id;
  }
  CHECK(same);
  CHECK(differs);

  CHECK(ep1.query.size() == pools.test_pool.size());
  std::set<std::string> support_ids;
  for (const auto& img : ep1.support) support_ids.insert(img.source_id);
  for (const auto& img : ep1.query) CHECK(support_ids.count(img.source_id) == 0);

  // n_shot equal to the pool depth uses the whole pool regardless of seed
  auto full_a = sample_episode(pools, 20, Rng(1));
  auto full_b = sample_episode(pools, 20, Rng(999));
  std::set<std::string> ids_a, ids_b;
  for (const auto& img : full_a.support) ids_a.insert(img.source_id);
  for (const auto& img : full_b.support) ids_b.insert(img.source_id);
  CHECK(ids_a == ids_b);
  CHECK(ids_a.size() == 200);

  CHECK_THROWS_AS(sample_episode(pools, 21, Rng(0)), DataError);
}

TEST_CASE("stratified batches hold exact per-class counts") {
  // 10 classes, 5 samples each
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 5; ++i) labels.push_back(c);
  }
  auto plan = stratified_batches(labels, 8, 3, Rng(0));
  CHECK(plan.kind == SamplerKind::Stratified);
  REQUIRE(!plan.batches.empty());
  for (const auto& batch : plan.batches) {
    CHECK(batch.size() == 24);  // 8 classes x 3 instances
    std::map<int, int> counts;
    for (int idx : batch) counts[labels[idx]]++;
    CHECK(counts.size() == 8);
    for (const auto& [cls, count] : counts) CHECK(count == 3);
    // positive-pair predicate: every included class has >= 2 instances
    for (const auto& [cls, count] : counts) CHECK(count >= 2);
  }
}

TEST_CASE("stratified batches cover every class each epoch and balance draws") {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 5; ++i) labels.push_back(c);
  }
  auto plan = stratified_batches(labels, 8, 3, Rng(7));
  std::set<int> classes_seen;
  std::map<int, int> sample_counts;
  for (const auto& batch : plan.batches) {
    for (int idx : batch) {
      classes_seen.insert(labels[idx]);
      sample_counts[idx]++;
    }
  }
  CHECK(classes_seen.size() == 10);
  // within one epoch no sample should lag far behind its classmates
  for (int c = 0; c < 10; ++c) {
    int lo = 1 << 30, hi = 0;
    for (int i = 0; i < 50; ++i) {
      if (labels[i] != c) continue;
      const int n = sample_counts.count(i) ? sample_counts[i] : 0;
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("stratified sampler rejects bad configurations") {
  std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  CHECK_THROWS_AS(stratified_batches(labels, 2, 1, Rng(0)), ConfigError);
  CHECK_THROWS_AS(stratified_batches(labels, 4, 2, Rng(0)), ConfigError);
  std::vector<int> skewed = {0, 0, 0, 1};
  CHECK_THROWS_AS(stratified_batches(skewed, 2, 2, Rng(0)), ConfigError);
}

TEST_CASE("random batches partition the indices") {
  auto plan = random_batches(30, 8, Rng(3));
  REQUIRE(plan.batches.size() == 4);
  CHECK(plan.batches[0].size() == 8);
  CHECK(plan.batches[1].size() == 8);
  CHECK(plan.batches[2].size() == 8);
  CHECK(plan.batches[3].size() == 6);

  std::set<int> seen;
  for (const auto& batch : plan.batches) {
    for (int idx : batch) CHECK(seen.insert(idx).second);
  }
  CHECK(seen.size() == 30);

  auto again = random_batches(30, 8, Rng(3));
  CHECK(again.batches == plan.batches);
}

TEST_CASE("augment level none is deterministic, others are seeded") {
  auto ds = synth_dataset(2, 2, 16, 5);
  const auto& img = ds.train[0];

  Rng r1(0), r2(0);
  auto a = augment(img, AugmentLevel::None, r1);
  auto b = augment(img, AugmentLevel::None, r2);
  CHECK(a.pixels->data == b.pixels->data);
  CHECK(a.pixels->shape == img.pixels->shape);

  Rng h1(9), h2(9), h3(10);
  auto x = augment(img, AugmentLevel::High, h1);
  auto y = augment(img, AugmentLevel::High, h2);
  auto z = augment(img, AugmentLevel::High, h3);
  CHECK(x.pixels->data == y.pixels->data);
  CHECK(x.pixels->data != z.pixels->data);
}

TEST_CASE("augment keeps shape and range over many draws") {
  auto ds = synth_dataset(3, 4, 12, 1);
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto& img = ds.train[trial % ds.train.size()];
    const auto level = trial % 2 == 0 ? AugmentLevel::Low : AugmentLevel::High;
    auto out = augment(img, level, rng);
    REQUIRE(out.pixels->shape == img.pixels->shape);
    for (double v : out.pixels->data) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("grayscale branch equalizes channels with the luminance weights") {
  // constant images: the gray value is fb * (0.299 r + 0.587 g + 0.114 b),
  // so channel ratios expose the luminance constants without knowing fb
  auto constant_image = [](double r, double g, double b) {
    const int s = 8;
    std::vector<double> px(3 * s * s);
    for (int p = 0; p < s * s; ++p) {
      px[p] = r;
      px[s * s + p] = g;
      px[2 * s * s + p] = b;
    }
    LabeledImage img;
    img.pixels = Tensor::make({3, s, s}, std::move(px));
    img.class_id = 0;
    img.source_id = "const";
    return img;
  };

  // find a seed whose draw sequence triggers the grayscale branch
  int gray_seed = -1;
  for (int seed = 0; seed < 200 && gray_seed < 0; ++seed) {
    Rng probe(seed);
    auto out = augment(constant_image(1.0, 0.0, 0.0), AugmentLevel::High, probe);
    const size_t plane = 64;
    bool equal = true;
    for (size_t p = 0; p < plane && equal; ++p) {
      equal = out.pixels->data[p] == out.pixels->data[plane + p] &&
              out.pixels->data[p] == out.pixels->data[2 * plane + p];
    }
    if (equal && out.pixels->data[0] > 0.0) gray_seed = seed;
  }
  REQUIRE(gray_seed >= 0);

  Rng ra(gray_seed), rb(gray_seed), rc(gray_seed);
  const double vr = augment(constant_image(1, 0, 0), AugmentLevel::High, ra).pixels->data[0];
  const double vg = augment(constant_image(0, 1, 0), AugmentLevel::High, rb).pixels->data[0];
  const double vb = augment(constant_image(0, 0, 1), AugmentLevel::High, rc).pixels->data[0];
  const double total = vr + vg + vb;
  CHECK(vr / total == doctest::Approx(0.299).epsilon(1e-9));
  CHECK(vg / total == doctest::Approx(0.587).epsilon(1e-9));
  CHECK(vb / total == doctest::Approx(0.114).epsilon(1e-9));
}

TEST_CASE("synthetic classes are distinct and same-class images vary") {
  auto ds = synth_dataset(6, 10, 16, 0);
  CHECK(ds.train.size() + ds.val.size() == 60);

  // same class, different images
  CHECK(ds.train[0].class_id == ds.train[1].class_id);
  CHECK(ds.train[0].pixels->data != ds.train[1].pixels->data);

  // class-mean images pairwise distinct
  std::map<int, std::vector<double>> means;
  std::map<int, int> counts;
  for (const auto& img : ds.train) {
    auto& m = means[img.class_id];
    if (m.empty()) m.assign(img.pixels->data.size(), 0.0);
    for (size_t i = 0; i < m.size(); ++i) m[i] += img.pixels->data[i];
    counts[img.class_id]++;
  }
  for (auto& [c, m] : means) {
    for (auto& v : m) v /= counts[c];
  }
  for (int a = 0; a < 6; ++a) {
    for (int b = a + 1; b < 6; ++b) {
      double dist = 0.0;
      for (size_t i = 0; i < means[a].size(); ++i) {
        const double d = means[a][i] - means[b][i];
        dist += d * d;
      }
      CHECK(std::sqrt(dist / means[a].size()) > 0.01);
    }
  }
}

TEST_CASE("nearest-class-mean on raw pixels beats chance") {
  auto ds = synth_dataset(6, 20, 16, 0);
  auto pools = build_pools(ds, 10);
  auto episode = sample_episode(pools, 5, Rng(0));

  std::map<int, std::vector<double>> means;
  std::map<int, int> counts;
  for (const auto& img : episode.support) {
    auto& m = means[img.class_id];
    if (m.empty()) m.assign(img.pixels->data.size(), 0.0);
    for (size_t i = 0; i < m.size(); ++i) m[i] += img.pixels->data[i];
    counts[img.class_id]++;
  }
  for (auto& [c, m] : means) {
    for (auto& v : m) v /= counts[c];
  }
  int correct = 0;
  for (const auto& img : episode.query) {
    int best = -1;
    double best_dist = 1e300;
    for (const auto& [c, m] : means) {
      double dist = 0.0;
      for (size_t i = 0; i < m.size(); ++i) {
        const double d = m[i] - img.pixels->data[i];
        dist += d * d;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    correct += best == img.class_id;
  }
  const double acc = static_cast<double>(correct) / episode.query.size();
  CHECK(acc > 1.0 / 6.0);
}

TEST_CASE("ppm round trip within quantization") {
  auto ds = synth_dataset(2, 2, 12, 3);
  const auto path = std::string("fslab_test_img.ppm");
  write_ppm(path, ds.train[0].pixels);
  auto loaded = read_ppm(path);
  REQUIRE(loaded->shape == ds.train[0].pixels->shape);
  for (size_t i = 0; i < loaded->data.size(); ++i) {
    CHECK(std::fabs(loaded->data[i] - ds.train[0].pixels->data[i]) <= 1.0 / 255.0);
  }
  std::remove(path.c_str());
}

TEST_CASE("ppm rejects malformed input") {
  const auto path = std::string("fslab_test_bad.ppm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n2 2\n255\n";
  }
  CHECK_THROWS_AS(read_ppm(path), DataError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n2 2\n65535\n";
  }
  CHECK_THROWS_AS(read_ppm(path), DataError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n2 2\n255\n";
    out.write("abc", 3);  // truncated payload
  }
  CHECK_THROWS_AS(read_ppm(path), DataError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_ppm("missing_file.ppm"), DataError);
}

TEST_CASE("manifest validation") {
  namespace fs = std::filesystem;
  const auto dir = fs::path("fslab_test_manifest");
  fs::create_directories(dir);

  {
    std::ofstream out(dir / "empty.csv");
    out << "path,label,split\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "empty.csv").string(), 8), DataError);

  {
    std::ofstream out(dir / "badsplit.csv");
    out << "path,label,split\nimg.ppm,cat,test\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "badsplit.csv").string(), 8), DataError);

  {
    std::ofstream out(dir / "noheader.csv");
    out << "img.ppm,cat,train\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "noheader.csv").string(), 8), DataError);

  {
    std::ofstream out(dir / "missingfile.csv");
    out << "path,label,split\nnot_there.ppm,cat,train\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "missingfile.csv").string(), 8), DataError);

  fs::remove_all(dir);
}

TEST_CASE("emit then load round trips the dataset") {
  namespace fs = std::filesystem;
  auto ds = synth_dataset(3, 6, 10, 11);
  const auto dir = std::string("fslab_test_emit");
  emit_dataset(ds, dir);
  auto loaded = load_manifest(dir + "/manifest.csv", 10);
  CHECK(loaded.num_classes == 3);
  CHECK(loaded.train.size() == ds.train.size());
  CHECK(loaded.val.size() == ds.val.size());
  for (size_t i = 0; i < loaded.train.size(); ++i) {
    CHECK(loaded.train[i].class_id == ds.train[i].class_id);
    for (size_t p = 0; p < loaded.train[i].pixels->data.size(); ++p) {
      CHECK(std::fabs(loaded.train[i].pixels->data[p] - ds.train[i].pixels->data[p]) <=
            1.0 / 255.0);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("resize_image identity and downscale") {
  auto ds = synth_dataset(2, 2, 16, 2);
  auto same = resize_image(ds.train[0].pixels, 16);
  CHECK(same->data == ds.train[0].pixels->data);
  auto smaller = resize_image(ds.train[0].pixels, 8);
  CHECK(smaller->shape == Shape{3, 8, 8});
}
