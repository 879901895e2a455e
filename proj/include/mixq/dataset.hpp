#pragma once
// In-memory labelled datasets: seeded synthetic Gaussian blobs, CSV with a
// "label" column, and IDX image/label pairs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mixq/error.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

struct Dataset {
  Tensor features;  // [N, sample_shape...]
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  Shape sample_shape() const {
    if (features.rank() == 0) return {};
    return Shape(features.shape().begin() + 1, features.shape().end());
  }
  std::size_t sample_volume() const { return shape_volume(sample_shape()); }

  void validate() const {
    if (features.rank() < 2 || features.dim(0) != labels.size())
      throw DataError("dataset features/labels length mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  }

  // Rows [begin, end) of the given order as a batch.
  std::pair<Tensor, std::vector<int>> gather(std::span<const std::size_t> order, std::size_t begin,
                                             std::size_t end) const {
    const std::size_t vol = sample_volume();
    Shape s = sample_shape();
    s.insert(s.begin(), end - begin);
    Tensor x(std::move(s));
    std::vector<int> y(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t src = order[i];
      std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(src * vol), vol,
                  x.data().begin() + static_cast<std::ptrdiff_t>((i - begin) * vol));
      y[i - begin] = labels[src];
    }
    return {std::move(x), std::move(y)};
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    auto [x, y] = gather(idx, 0, idx.size());
    return Dataset{std::move(x), std::move(y), num_classes};
  }

  std::vector<std::size_t> identity_order() const {
    std::vector<std::size_t> o(size());
    std::iota(o.begin(), o.end(), std::size_t{0});
    return o;
  }
};

// ---------------------------------------------------------------------------
// Synthetic blobs

struct BlobConfig {
  std::size_t classes = 10;
  std::size_t dim = 64;
  std::size_t samples_per_class = 600;
  double center_spread = 1.0;  // std of class centres
  double noise = 1.0;          // within-class std
  std::uint64_t seed = 1;
};

inline Dataset make_blobs(const BlobConfig& cfg) {
  if (cfg.classes < 2 || cfg.dim == 0 || cfg.samples_per_class == 0)
    throw UsageError("synthetic dataset needs >= 2 classes, dim > 0 and samples > 0");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> centres(cfg.classes * cfg.dim);
  for (double& c : centres) c = cfg.center_spread * nd(rng);
  const std::size_t n = cfg.classes * cfg.samples_per_class;
  Dataset d{Tensor(Shape{n, cfg.dim}), std::vector<int>(n), cfg.classes};
  // Interleave classes so any prefix is roughly balanced.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % cfg.classes;
    d.labels[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < cfg.dim; ++j)
      d.features[i * cfg.dim + j] = centres[k * cfg.dim + j] + cfg.noise * nd(rng);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Split and normalization

struct Split {
  Dataset train;
  Dataset test;
};

inline Split split_dataset(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must be in (0, 1)");
  auto order = d.identity_order();
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(d.size())));
  if (n_test == 0 || n_test >= d.size()) throw DataError("split leaves an empty partition");
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {d.subset(train_idx), d.subset(test_idx)};
}

// Per-feature affine normalization x' = (x - mean) / std.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Normalization fit(const Dataset& d) {
    const std::size_t vol = d.sample_volume(), n = d.size();
    Normalization z{std::vector<double>(vol, 0.0), std::vector<double>(vol, 0.0)};
    if (n == 0) return z;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < vol; ++j) z.mean[j] += d.features[i * vol + j];
    for (double& m : z.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < vol; ++j) {
        const double c = d.features[i * vol + j] - z.mean[j];
        z.stddev[j] += c * c;
      }
    for (double& s : z.stddev) {
      s = std::sqrt(s / static_cast<double>(n));
      if (s < 1e-12) s = 1.0;
    }
    return z;
  }

  void apply(Dataset& d) const {
    const std::size_t vol = d.sample_volume();
    if (vol != mean.size()) throw DataError("normalization constants do not match feature count");
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < vol; ++j) {
        double& v = d.features[i * vol + j];
        v = (v - mean[j]) / stddev[j];
      }
  }
};

// ---------------------------------------------------------------------------
// CSV: header row, numeric feature columns and one integer column "label".

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV dataset '" + path.string() + "' is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      out.push_back(cell);
    }
    return out;
  };
  const auto header = split(line);
  const auto label_it = std::find(header.begin(), header.end(), "label");
  if (label_it == header.end()) throw DataError("CSV dataset has no 'label' column");
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t dim = header.size() - 1;
  std::vector<double> feats;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw DataError("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      try {
        std::size_t used = 0;
        if (c == label_col) {
          const int y = std::stoi(cells[c], &used);
          if (used != cells[c].size()) throw std::invalid_argument("label");
          labels.push_back(y);
        } else {
          const double v = std::stod(cells[c], &used);
          if (used != cells[c].size() || !std::isfinite(v)) throw std::invalid_argument("value");
          feats.push_back(v);
        }
      } catch (const std::exception&) {
        throw DataError("CSV row " + std::to_string(row) + ": bad value '" + cells[c] + "'");
      }
    }
  }
  if (labels.empty()) throw DataError("CSV dataset has no rows");
  const int max_label = *std::max_element(labels.begin(), labels.end());
  Dataset d{Tensor(Shape{labels.size(), dim}, std::move(feats)), std::move(labels),
            static_cast<std::size_t>(max_label) + 1};
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// IDX: big-endian 32-bit magic and dimensions, unsigned byte payload.

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("truncated IDX header in " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace detail

// Pixels scaled to [0, 1]; images keep a leading channel axis: [N, 1, rows, cols].
inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels_path,
                        std::size_t limit = 0) {
  std::ifstream fi(images, std::ios::binary);
  if (!fi) throw DataError("cannot open IDX images '" + images.string() + "'");
  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw DataError("cannot open IDX labels '" + labels_path.string() + "'");
  if (detail::read_be32(fi, images.string()) != kIdxImagesMagic)
    throw DataError("'" + images.string() + "' is not an IDX image file (magic 0x00000803)");
  if (detail::read_be32(fl, labels_path.string()) != kIdxLabelsMagic)
    throw DataError("'" + labels_path.string() + "' is not an IDX label file (magic 0x00000801)");
  std::size_t n = detail::read_be32(fi, images.string());
  const std::size_t rows = detail::read_be32(fi, images.string());
  const std::size_t cols = detail::read_be32(fi, images.string());
  const std::size_t nl = detail::read_be32(fl, labels_path.string());
  if (n != nl) throw DataError("IDX image and label counts differ");
  if (limit > 0) n = std::min(n, limit);
  const std::size_t vol = rows * cols;
  std::vector<unsigned char> pix(n * vol), lab(n);
  if (!fi.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size())))
    throw DataError("truncated IDX image payload");
  if (!fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size())))
    throw DataError("truncated IDX label payload");
  Dataset d{Tensor(Shape{n, 1, rows, cols}), std::vector<int>(n), 0};
  for (std::size_t i = 0; i < pix.size(); ++i) d.features[i] = pix[i] / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = static_cast<std::size_t>(max_label) + 1;
  d.validate();
  return d;
}

}  // namespace mixq
