#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cdis/error.hpp"
#include "cdis/eval.hpp"
#include "doctest.h"
#include "metric_oracle.hpp"
#include "test_support.hpp"
#include "train_support.hpp"

using namespace cdis;
using namespace cdis::testing;

namespace {

std::vector<int> random_ids(Rng& rng, std::size_t n, int k) {
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
  return v;
}

std::vector<int> relabel(const std::vector<int>& ids, Rng& rng) {
  const int top = *std::max_element(ids.begin(), ids.end()) + 1;
  std::vector<int> map(static_cast<std::size_t>(top));
  std::iota(map.begin(), map.end(), 100);
  rng.shuffle(std::span<int>(map));
  std::vector<int> out;
  for (int x : ids) out.push_back(map[static_cast<std::size_t>(x)]);
  return out;
}

double within_ss(const std::vector<std::vector<double>>& pts, const std::vector<int>& assign, int k) {
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    std::vector<double> mean(pts[0].size(), 0.0);
    int n = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (assign[i] == c) {
        ++n;
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += pts[i][j];
      }
    if (n == 0) continue;
    for (auto& m : mean) m /= n;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (assign[i] == c)
        for (std::size_t j = 0; j < mean.size(); ++j) total += std::pow(pts[i][j] - mean[j], 2);
  }
  return total;
}

Tensor from_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({rows.size(), rows[0].size()}, flat);
}

}  // namespace

TEST_CASE("kmeans co-clusters two separated pairs at the optimal inertia") {
  const std::vector<std::vector<double>> pts{{0, 0}, {10, 0}, {0, 1}, {10, 1}};
  auto r = kmeans(from_rows(pts), 2, 1);
  CHECK(r.assignments[0] == r.assignments[2]);
  CHECK(r.assignments[1] == r.assignments[3]);
  CHECK(r.assignments[0] != r.assignments[1]);
  // brute force over every 2-partition
  double best = INFINITY;
  for (int mask = 1; mask < 15; ++mask) {
    std::vector<int> a(4);
    for (int i = 0; i < 4; ++i) a[static_cast<std::size_t>(i)] = (mask >> i) & 1;
    best = std::min(best, within_ss(pts, a, 2));
  }
  CHECK(r.inertia == doctest::Approx(best).epsilon(1e-12));
  CHECK(r.inertia == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kmeans edge cases k = 1 and k = M") {
  Rng rng(2);
  std::vector<std::vector<double>> pts(12);
  for (auto& p : pts) p = random_values(rng, 3, -5, 5);
  auto one = kmeans(from_rows(pts), 1, 3);
  CHECK(std::ranges::all_of(one.assignments, [](int a) { return a == 0; }));
  CHECK(one.inertia == doctest::Approx(within_ss(pts, std::vector<int>(12, 0), 1)).epsilon(1e-12));
  auto all = kmeans(from_rows(pts), 12, 3);
  CHECK(all.inertia == 0.0);
  CHECK_THROWS_AS(kmeans(from_rows(pts), 13, 3), ContractError);
  CHECK_THROWS_AS(kmeans(from_rows(pts), 0, 3), ContractError);
}

TEST_CASE("kmeans re-seeds empty clusters on duplicated points") {
  const std::vector<std::vector<double>> pts{{1, 1}, {1, 1}, {1, 1}, {4, 4}, {4, 4}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto r = kmeans(from_rows(pts), 4, seed);
    std::vector<int> sizes(4, 0);
    for (int a : r.assignments) {
      REQUIRE((a >= 0 && a < 4));
      ++sizes[static_cast<std::size_t>(a)];
    }
    CHECK(std::ranges::all_of(sizes, [](int s) { return s > 0; }));
    CHECK(r.inertia == 0.0);
  }
}

TEST_CASE("kmeans inertia never increases across Lloyd iterations") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 20 + rng.uniform_int(80);
    auto pts = random_tensor(rng, {m, 2 + rng.uniform_int(4)}, -3, 3);
    const int k = 2 + static_cast<int>(rng.uniform_int(6));
    auto run = kmeans_single(pts, k, rng);
    for (std::size_t i = 1; i < run.inertia_trace.size(); ++i) {
      // allow only floating-point rounding of the sums
      CHECK(run.inertia_trace[i] <= run.inertia_trace[i - 1] * (1 + 1e-12));
    }
    CHECK(run.result.inertia <= run.inertia_trace.back() * (1 + 1e-12));
  }
}

TEST_CASE("kmeans is deterministic per seed") {
  Rng rng(5);
  auto pts = random_tensor(rng, {60, 3});
  auto a = kmeans(pts, 4, 9), b = kmeans(pts, 4, 9);
  CHECK(a.assignments == b.assignments);
  CHECK(a.inertia == b.inertia);
}

TEST_CASE("metrics on the [0,0,1,1] vs [0,1,0,1] oracle") {
  const std::vector<int> l{0, 0, 1, 1}, p{0, 1, 0, 1};
  CHECK(nmi(l, p) == 0.0);
  CHECK(ari(l, p) == -0.5);
  CHECK(ari_pairs(l, p) == -0.5);
  CHECK(acc(l, p) == 0.5);
  CHECK(acc_bruteforce(l, p) == 0.5);
}

TEST_CASE("metrics score perfect and relabeled agreement as 1") {
  Rng rng(6);
  auto l = random_ids(rng, 200, 7);
  auto p = relabel(l, rng);
  CHECK(nmi(l, l) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(nmi(l, p) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ari(l, p) == 1.0);
  CHECK(acc(l, p) == 1.0);
  const std::vector<int> swapped{1, 1, 0, 0, 1};
  CHECK(acc(std::vector<int>{0, 0, 1, 1, 0}, swapped) == 1.0);
}

TEST_CASE("metrics are exactly invariant under relabeling of predictions") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(300);
    auto l = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(8)));
    auto p = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(8)));
    auto q = relabel(p, rng);
    CHECK(nmi(l, p) == nmi(l, q));
    CHECK(ari(l, p) == ari(l, q));
    CHECK(acc(l, p) == acc(l, q));
  }
}

TEST_CASE("nmi matches the direct formula and stays in range") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(200);
    auto l = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(6)));
    auto p = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(6)));
    const double v = nmi(l, p);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(nmi_direct(l, p)).epsilon(1e-12).scale(1));
  }
  CHECK(nmi(std::vector<int>{3, 3}, std::vector<int>{1, 1}) == 1.0);
  CHECK(nmi(std::vector<int>{3, 3}, std::vector<int>{1, 2}) == 0.0);
  CHECK_THROWS_AS(nmi(std::vector<int>{1}, std::vector<int>{1, 2}), ContractError);
}

TEST_CASE("ari equals explicit pair enumeration") {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(49);
    auto l = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(6)));
    auto p = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(6)));
    CHECK(ari(l, p) == ari_pairs(l, p));
  }
  CHECK_THROWS_AS(ari(std::vector<int>{1}, std::vector<int>{1}), ContractError);
}

TEST_CASE("ari of random predictions is near zero") {
  Rng rng(10);
  auto l = random_ids(rng, 10000, 10);
  auto p = random_ids(rng, 10000, 10);
  CHECK(std::abs(ari(l, p)) < 0.02);
}

TEST_CASE("acc equals the best matching found by brute force") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(60);
    auto l = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(6)));
    auto p = random_ids(rng, n, 1 + static_cast<int>(rng.uniform_int(6)));
    CHECK(acc(l, p) == acc_bruteforce(l, p));
  }
  std::vector<int> balanced{0, 1, 2, 0, 1, 2}, constant(6, 0);
  CHECK(acc(balanced, constant) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("hungarian matches brute force on real-valued costs") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(6);
    std::vector<std::vector<double>> cost(n);
    for (auto& row : cost) row = random_values(rng, n, -5, 5);
    auto match = hungarian_min_cost(cost);
    double got = 0.0;
    for (std::size_t i = 0; i < n; ++i) got += cost[i][match[i]];
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = INFINITY;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += cost[i][perm[i]];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
    std::sort(match.begin(), match.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(match[i] == i);
  }
}

TEST_CASE("kmeans on raw mixtures: null and well-separated cases") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto null_ds = gen_gaussian_mixture(4, 250, 8, 0.0, seed);
    auto r = evaluate_embeddings(null_ds.samples.all(), null_ds, Stage::backbone, seed);
    CHECK(r.nmi < 0.05);
  }
  auto ds = gen_gaussian_mixture(4, 100, 8, 10.0, 1);
  auto r = evaluate_embeddings(ds.samples.all(), ds, Stage::backbone, 1);
  CHECK(r.nmi > 0.95);
}

TEST_CASE("class-separated embeddings score perfectly") {
  std::vector<double> e;
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) {
      e.push_back(10.0 * c);
      e.push_back(-5.0 * c + 0.01 * i);
      labels.push_back(c);
    }
  LabeledDataset ds{SampleSet(SampleShape::vector(2), e), labels, 3};
  auto r = evaluate_embeddings(ds.samples.all(), ds, Stage::final_output, 0);
  CHECK(r.nmi == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.ari == 1.0);
  CHECK(r.acc == 1.0);
}

TEST_CASE("untrained model on a null mixture scores near zero") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = gen_gaussian_mixture(4, 100, 6, 0.0, seed);
    auto setup = small_setup(6, 16, 1);
    setup.train.seeds = SeedStreams::derive(seed);
    TrainState state(setup);
    CHECK(evaluate_model(state, ds, Stage::final_output, seed).nmi < 0.05);
  }
}

TEST_CASE("stages embed at different depths and export deterministically") {
  auto ds = gen_gaussian_mixture(3, 20, 6, 3.0, 2);
  TrainState state(small_setup(6, 16, 1));
  auto h = embed(state, ds.samples, Stage::backbone);
  auto y = embed(state, ds.samples, Stage::final_output);
  CHECK(h.shape() == Shape{60, 8});
  CHECK(y.shape() == Shape{60, 16});
  CHECK(state.model.mode() == Mode::train);

  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = dir / "cdis_emb_1.csv", p2 = dir / "cdis_emb_2.csv";
  export_embeddings(state, ds, Stage::backbone, p1);
  export_embeddings(state, ds, Stage::backbone, p2);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const auto text = slurp(p1);
  CHECK(text == slurp(p2));
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "e0,e1,e2,e3,e4,e5,e6,e7,label");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 8);
  }
  CHECK(rows == 60);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);

  auto setup = small_setup(6, 16, 1);
  setup.train.use_feature_head = false;
  TrainState no_head(setup);
  CHECK(embed(no_head, ds.samples, Stage::final_output).shape() == Shape{60, 4});
}

TEST_CASE("report csv and stage names") {
  CHECK(report_csv({{Stage::backbone, 0.5, 0.25, 0.75}}) ==
        "stage,nmi,ari,acc\nbackbone,0.5,0.25,0.75\n");
  CHECK(parse_stage("final_output") == Stage::final_output);
  CHECK_THROWS_AS(parse_stage("middle"), ConfigError);
}
