#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "robustbias/data.hpp"

using namespace robustbias;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("robustbias_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("pcg64 is reproducible and streams differ") {
  Pcg64 a(42, 7), b(42, 7), c(42, 8);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
    differs |= x != c.next();
  }
  CHECK(differs);
  Pcg64 u(1, 1);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(u.below(7) < 7u);
  }
}

TEST_CASE("teacher draws") {
  const DistributionSpec full{4, SparsitySpec::sparse(4), SparsitySpec::dense()};
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (double v : gen_teacher(full, s)) CHECK((v == 1.0 || v == -1.0));
  }
  const DistributionSpec sparse{512, SparsitySpec::sparse(4), SparsitySpec::dense()};
  double count = 0, count_sq = 0;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const Vector w = gen_teacher(sparse, static_cast<std::uint64_t>(s));
    double nz = 0;
    for (double v : w) nz += v != 0.0;
    count += nz;
    count_sq += nz * nz;
  }
  const double mean = count / draws;
  const double se = std::sqrt((count_sq / draws - mean * mean) / draws);
  // the all-zero redraw shifts the mean by 4 * P(all zero) ~ 0.07, well inside 3 se
  CHECK(std::abs(mean - 4.0) <= 3.0 * se + 0.08);

  const DistributionSpec dense{512, SparsitySpec::dense(), SparsitySpec::dense()};
  double sq = 0;
  for (int s = 0; s < 200; ++s) {
    for (double v : gen_teacher(dense, static_cast<std::uint64_t>(s))) sq += v * v;
  }
  CHECK(std::abs(sq / 200.0 - 512.0) < 3.0 * std::sqrt(2.0 * 512.0 / 200.0));
}

TEST_CASE("datasets are labelled by the teacher and reproducible") {
  const DistributionSpec spec{512, SparsitySpec::dense(), SparsitySpec::dense()};
  const Dataset a = gen_dataset(spec, 64, 3);
  CHECK(a.m() == 64);
  CHECK(a.d() == 512);
  for (std::size_t i = 0; i < a.m(); ++i) {
    const double s = dot(*a.teacher, a.samples.row(i));
    CHECK(s != 0.0);
    CHECK(a.labels[i] == (s > 0 ? 1.0 : -1.0));
  }
  const Dataset b = gen_dataset(spec, 64, 3);
  CHECK(a.samples == b.samples);
  CHECK(a.labels == b.labels);
  CHECK(!(gen_dataset(spec, 64, 4).samples == a.samples));

  // trinary data may hit <w, x> = 0; those draws are resampled
  const DistributionSpec tri{8, SparsitySpec::sparse(1), SparsitySpec::sparse(2)};
  const Dataset t = gen_dataset(tri, 200, 1);
  for (std::size_t i = 0; i < t.m(); ++i) CHECK(dot(*t.teacher, t.samples.row(i)) * t.labels[i] > 0.0);

  CHECK_THROWS(gen_dataset(DistributionSpec{4, SparsitySpec::sparse(5), SparsitySpec::dense()}, 3, 0));
}

TEST_CASE("test sets") {
  const DistributionSpec spec{16, SparsitySpec::dense(), SparsitySpec::sparse(3)};
  const Dataset t = gen_test_set(spec, 9);
  CHECK(t.m() == 256);
  CHECK(*t.teacher == gen_teacher(spec, 9));
  CHECK(gen_test_set(spec, 9).samples == t.samples);
  TestSetStream stream(spec, 9);
  CHECK(stream.total() == 256);
  Matrix joined;
  for (;;) {
    const Dataset c = stream.next_chunk(100);
    if (c.m() == 0) break;
    for (std::size_t i = 0; i < c.m(); ++i) joined.append_row(c.samples.row(i));
  }
  CHECK(joined == t.samples);
  CHECK(TestSetStream(DistributionSpec{512, SparsitySpec::dense(), SparsitySpec::dense()}, 0).total() == 262144);
}

TEST_CASE("idx reader") {
  const fs::path dir = scratch_dir("idx");
  // six 2x2 images with labels 2, 7, 3, 7, 2, 2
  std::vector<std::uint8_t> pixels;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) pixels.push_back(static_cast<std::uint8_t>(i * 40 + j));
  }
  pixels[0] = 255;
  const std::vector<std::uint8_t> labels = {2, 7, 3, 7, 2, 2};
  write_idx_images(dir / "img", 2, 2, pixels);
  write_idx_labels(dir / "lab", labels);
  {
    std::ifstream in(dir / "img", std::ios::binary);
    unsigned char head[4];
    in.read(reinterpret_cast<char*>(head), 4);
    CHECK(head[2] == 0x08);
    CHECK(head[3] == 0x03);
  }

  const Dataset all = load_mnist_idx(dir / "img", dir / "lab", {2, 7}, 0, 0);
  CHECK(all.m() == 5);
  CHECK(all.d() == 4);
  CHECK(all.samples(0, 0) == 1.0);
  CHECK(all.labels == Vector{-1, 1, 1, -1, -1});
  CHECK(!all.teacher);

  const Dataset sub = load_mnist_idx(dir / "img", dir / "lab", {2, 7}, 3, 11);
  CHECK(sub.m() == 3);
  CHECK(load_mnist_idx(dir / "img", dir / "lab", {2, 7}, 3, 11).samples == sub.samples);
  for (double y : sub.labels) CHECK((y == 1.0 || y == -1.0));

  CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "lab", {2, 7}, 6, 0), DataSizeError);
  CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "lab", {2, 9}, 1, 0), EmptyClassError);
  CHECK_THROWS_AS(load_mnist_idx(dir / "lab", dir / "lab", {2, 7}, 1, 0), DataFormatError);
  CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "img", {2, 7}, 1, 0), DataFormatError);
  CHECK_THROWS_AS(load_mnist_idx(dir / "missing", dir / "lab", {2, 7}, 1, 0), DataFormatError);
  {
    std::ofstream trunc(dir / "short", std::ios::binary);
    trunc.write("\x00\x00\x08\x03\x00\x00\x00\x09", 8);
  }
  CHECK_THROWS_AS(load_mnist_idx(dir / "short", dir / "lab", {2, 7}, 1, 0), DataFormatError);
}

TEST_CASE("dataset csv round trip") {
  const fs::path dir = scratch_dir("csv");
  const DistributionSpec spec{5, SparsitySpec::sparse(2), SparsitySpec::dense()};
  const Dataset a = gen_dataset(spec, 7, 21);
  write_dataset_csv(a, dir / "a.csv");
  const Dataset b = read_dataset_csv(dir / "a.csv");
  CHECK(b.samples == a.samples);
  CHECK(b.labels == a.labels);
  CHECK(*b.teacher == *a.teacher);
  CHECK(std::get<DistributionSpec>(b.source) == spec);
  CHECK(b.seed == 21);
}
