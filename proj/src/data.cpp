#include "robustbias/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace robustbias {

namespace {

const std::uint64_t kTeacherStream = hash_tag("teacher");
const std::uint64_t kTrainStream = hash_tag("train");
const std::uint64_t kTestStream = hash_tag("test");
const std::uint64_t kSubsetStream = hash_tag("idx-subset");

double trinary(Pcg64& rng, std::size_t k, std::size_t d) {
  const double half = static_cast<double>(k) / (2.0 * static_cast<double>(d));
  const double u = rng.uniform();
  if (u < half) return -1.0;
  if (u < 2.0 * half) return 1.0;
  return 0.0;
}

void draw_vector(Pcg64& rng, const SparsitySpec& sparsity, std::span<double> out) {
  const std::size_t d = out.size();
  for (double& v : out) v = sparsity.is_dense() ? rng.normal() : trinary(rng, sparsity.k, d);
}

// Draws one labelled sample, resampling while <teacher, x> == 0.
double draw_labelled(Pcg64& rng, const SparsitySpec& sparsity, const Vector& teacher, std::span<double> x) {
  for (;;) {
    draw_vector(rng, sparsity, x);
    const double s = dot(teacher, x);
    if (s != 0.0) return sign(s);
  }
}

std::string sparsity_key(const SparsitySpec& s) {
  return s.is_dense() ? std::string("dense") : std::to_string(s.k);
}

nlohmann::json sparsity_json(const SparsitySpec& s) {
  if (s.is_dense()) return {{"mode", "dense"}};
  return {{"mode", "k-sparse"}, {"k", s.k}};
}

SparsitySpec sparsity_from_json(const nlohmann::json& j) {
  if (j.at("mode").get<std::string>() == "dense") return SparsitySpec::dense();
  return SparsitySpec::sparse(j.at("k").get<std::size_t>());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw DataFormatError("truncated IDX header in " + path.string());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

void SparsitySpec::validate(std::size_t d) const {
  if (is_dense()) return;
  if (k == 0 || k > d) {
    throw std::invalid_argument("k-sparse spec needs 1 <= k <= d (k=" + std::to_string(k) + ", d=" +
                                std::to_string(d) + ")");
  }
}

void DistributionSpec::validate() const {
  if (d == 0) throw std::invalid_argument("distribution dimension must be positive");
  teacher.validate(d);
  data.validate(d);
}

std::string DistributionSpec::key() const {
  return "d" + std::to_string(d) + "_w" + sparsity_key(teacher) + "_x" + sparsity_key(data);
}

double Dataset::max_linf() const {
  double b = 0.0;
  for (double v : samples.data()) b = std::max(b, std::abs(v));
  return b;
}

double Dataset::max_l2() const {
  double b = 0.0;
  for (std::size_t i = 0; i < m(); ++i) b = std::max(b, std::sqrt(dot(samples.row(i), samples.row(i))));
  return b;
}

Vector gen_teacher(const DistributionSpec& spec, std::uint64_t seed) {
  spec.validate();
  Pcg64 rng(seed, kTeacherStream);
  Vector w(spec.d);
  for (;;) {
    draw_vector(rng, spec.teacher, w);
    if (std::any_of(w.begin(), w.end(), [](double v) { return v != 0.0; })) return w;
  }
}

Dataset gen_dataset(const DistributionSpec& spec, std::size_t m, std::uint64_t seed) {
  return gen_dataset(spec, gen_teacher(spec, seed), m, seed);
}

Dataset gen_dataset(const DistributionSpec& spec, const Vector& teacher, std::size_t m, std::uint64_t seed) {
  spec.validate();
  if (m == 0) throw std::invalid_argument("gen_dataset: m must be >= 1");
  if (teacher.size() != spec.d) throw std::invalid_argument("gen_dataset: teacher dimension mismatch");
  Pcg64 rng(combine_seed(seed, m), kTrainStream);
  Dataset out;
  out.samples = Matrix(m, spec.d);
  out.labels.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.labels[i] = draw_labelled(rng, spec.data, teacher, out.samples.row(i));
  out.teacher = teacher;
  out.source = spec;
  out.seed = seed;
  return out;
}

TestSetStream::TestSetStream(const DistributionSpec& spec, std::uint64_t seed, std::optional<std::size_t> size)
    : spec_(spec),
      teacher_(gen_teacher(spec, seed)),
      rng_(seed, kTestStream),
      seed_(seed),
      total_(size.value_or(spec.d * spec.d)) {}

Dataset TestSetStream::next_chunk(std::size_t max_rows) {
  const std::size_t n = std::min(max_rows, total_ - produced_);
  Dataset out;
  out.samples = Matrix(n, spec_.d);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = draw_labelled(rng_, spec_.data, teacher_, out.samples.row(i));
  produced_ += n;
  out.teacher = teacher_;
  out.source = spec_;
  out.seed = seed_;
  return out;
}

Dataset gen_test_set(const DistributionSpec& spec, std::uint64_t seed, std::optional<std::size_t> size) {
  TestSetStream stream(spec, seed, size);
  return stream.next_chunk(stream.total());
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       const std::set<int>& classes, std::size_t m, std::uint64_t seed) {
  if (classes.size() != 2) throw std::invalid_argument("load_mnist_idx: exactly two classes are required");

  const auto images = read_bytes(images_path);
  const auto labels = read_bytes(labels_path);
  if (const auto magic = read_be32(images, 0, images_path); magic != 2051) {
    throw DataFormatError("bad IDX image magic " + std::to_string(magic) + " in " + images_path.string());
  }
  if (const auto magic = read_be32(labels, 0, labels_path); magic != 2049) {
    throw DataFormatError("bad IDX label magic " + std::to_string(magic) + " in " + labels_path.string());
  }
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  const std::size_t d = rows * cols;
  if (n != n_labels) throw DataFormatError("IDX image/label counts differ");
  if (images.size() < 16 + n * d) throw DataFormatError("truncated IDX image payload in " + images_path.string());
  if (labels.size() < 8 + n) throw DataFormatError("truncated IDX label payload in " + labels_path.string());

  const int low = *classes.begin();
  std::vector<std::size_t> keep;
  std::size_t low_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[8 + i];
    if (classes.count(label)) {
      keep.push_back(i);
      low_count += (label == low);
    }
  }
  for (int c : classes) {
    const bool empty = (c == low) ? low_count == 0 : keep.size() == low_count;
    if (empty) throw EmptyClassError("class " + std::to_string(c) + " not present in " + labels_path.string());
  }
  if (m > keep.size()) {
    throw DataSizeError("requested " + std::to_string(m) + " rows but only " + std::to_string(keep.size()) +
                        " match the classes");
  }

  std::size_t take = keep.size();
  if (m > 0) {
    Pcg64 rng(seed, kSubsetStream);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(keep.size() - i));
      std::swap(keep[i], keep[j]);
    }
    take = m;
  }

  Dataset out;
  out.samples = Matrix(take, d);
  out.labels.resize(take);
  for (std::size_t r = 0; r < take; ++r) {
    const std::size_t i = keep[r];
    auto row = out.samples.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] = images[16 + i * d + j] / 255.0;
    out.labels[r] = labels[8 + i] == low ? -1.0 : 1.0;
  }
  out.source = "idx:" + images_path.filename().string();
  out.seed = seed;
  return out;
}

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
  if (rows * cols == 0 || pixels.size() % (rows * cols) != 0) {
    throw std::invalid_argument("write_idx_images: pixel count is not a multiple of rows*cols");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  put_be32(out, 2051);
  put_be32(out, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  put_be32(out, 2049);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["m"] = data.m();
  meta["d"] = data.d();
  meta["seed"] = data.seed;
  if (const auto* spec = std::get_if<DistributionSpec>(&data.source)) {
    meta["distribution"] = {{"d", spec->d}, {"teacher", sparsity_json(spec->teacher)}, {"data", sparsity_json(spec->data)}};
  } else {
    meta["source"] = std::get<std::string>(data.source);
  }
  meta["teacher"] = data.teacher ? nlohmann::json(*data.teacher) : nlohmann::json(nullptr);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# " << meta.dump() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < data.m(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", data.labels[i]);
    out << buf;
    for (double v : data.samples.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw DataFormatError("missing JSON metadata header in " + path.string());
  }
  const auto meta = nlohmann::json::parse(line.substr(2));
  Dataset out;
  const std::size_t d = meta.at("d").get<std::size_t>();
  out.samples = Matrix(0, 0);
  std::vector<double> row;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    row.clear();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != d + 1) throw DataFormatError("row width mismatch in " + path.string());
    out.labels.push_back(row[0]);
    out.samples.append_row(std::span<const double>(row).subspan(1));
  }
  if (out.labels.size() != meta.at("m").get<std::size_t>()) throw DataFormatError("row count mismatch in " + path.string());
  out.seed = meta.at("seed").get<std::uint64_t>();
  if (meta.contains("distribution")) {
    const auto& dj = meta["distribution"];
    out.source = DistributionSpec{dj.at("d").get<std::size_t>(), sparsity_from_json(dj.at("teacher")),
                                  sparsity_from_json(dj.at("data"))};
  } else {
    out.source = meta.value("source", std::string("csv"));
  }
  if (!meta.at("teacher").is_null()) out.teacher = meta["teacher"].get<Vector>();
  return out;
}

}  // namespace robustbias
