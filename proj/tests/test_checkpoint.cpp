#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "fslab/checkpoint.hpp"
#include "fslab/linalg.hpp"

using namespace fslab;

namespace {

std::string temp_path(const char* name) {
  return std::string("fslab_test_") + name + ".fslw";
}

}  // namespace

TEST_CASE("fslw round trip is exact") {
  NamedTensors saved;
  saved.add("alpha", Tensor::make({2, 3}, {1.5, -2.25, 3.0, 0.0, -0.0, 1e-300}));
  saved.add("beta.weight", Tensor::make({4}, {0.1, 0.2, 0.3, 0.4}));

  const auto path = temp_path("roundtrip");
  save_fslw(path, saved);
  auto loaded = load_fslw(path);
  REQUIRE(loaded.entries.size() == 2);
  CHECK(loaded.entries[0].first == "alpha");
  CHECK(loaded.require("alpha")->shape == Shape{2, 3});
  CHECK(loaded.require("alpha")->data == saved.require("alpha")->data);
  CHECK(loaded.require("beta.weight")->data == saved.require("beta.weight")->data);
  CHECK(loaded.find("missing") == nullptr);
  CHECK_THROWS_AS(loaded.require("missing"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("fslw rejects bad magic and truncation") {
  const auto path = temp_path("corrupt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTFSLW___";
  }
  CHECK_THROWS_AS(load_fslw(path), DataError);

  NamedTensors t;
  t.add("x", Tensor::make({8}, std::vector<double>(8, 1.0)));
  save_fslw(path, t);
  // chop the file mid-payload
  {
    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size() - 12));
  }
  CHECK_THROWS_AS(load_fslw(path), DataError);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_fslw("does_not_exist.fslw"), DataError);
}

TEST_CASE("duplicate names rejected") {
  NamedTensors t;
  t.add("w", Tensor::make({1}, {1.0}));
  CHECK_THROWS_AS(t.add("w", Tensor::make({1}, {2.0})), DataError);
}

TEST_CASE("jacobi eigendecomposition on a known matrix") {
  // [[2,1],[1,2]] has eigenvalues 3 and 1
  auto eig = jacobi_eigh({2, 1, 1, 2}, 2);
  CHECK(eig.values[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eig.values[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("singular values of a rank-1 matrix") {
  // outer product of (1,2) and (3,4,5): singular value = |u| * |v|
  std::vector<double> m = {3, 4, 5, 6, 8, 10};
  auto sv = singular_values(m, 2, 3);
  CHECK(sv[0] == doctest::Approx(std::sqrt(5.0) * std::sqrt(50.0)).epsilon(1e-9));
  for (size_t i = 1; i < sv.size(); ++i) CHECK(sv[i] < 1e-9);
}

TEST_CASE("pca projects onto the dominant direction") {
  // points spread along (1,1,0) with tiny noise in other axes
  std::vector<std::vector<double>> rows;
  for (int i = -3; i <= 3; ++i) {
    rows.push_back({static_cast<double>(i), static_cast<double>(i), 0.01 * i * i});
  }
  auto proj = pca_2d(rows);
  REQUIRE(proj.size() == rows.size());
  // first component should order the points monotonically
  for (size_t i = 1; i < proj.size(); ++i) CHECK(proj[i][0] > proj[i - 1][0]);
}
