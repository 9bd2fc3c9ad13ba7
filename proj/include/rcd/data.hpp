#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rcd/core.hpp"

namespace rcd {

/// A labeled sample collection. `is_test` marks samples reserved for the
/// test phase; ids are unique within a corpus and survive splitting.
struct Dataset {
  Matrix X;                      // one sample per row
  std::vector<int> labels;
  std::vector<std::int64_t> ids;
  std::vector<std::uint8_t> is_test;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(X.cols()); }

  Dataset select(const std::vector<int>& rows) const {
    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    out.labels.reserve(rows.size());
    out.ids.reserve(rows.size());
    out.is_test.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.X.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
      out.labels.push_back(labels[rows[i]]);
      out.ids.push_back(ids[rows[i]]);
      out.is_test.push_back(is_test[rows[i]]);
    }
    return out;
  }
};

/// The four partitions every experiment runs on. Known-class labels are
/// remapped to [0,k); test_unknown keeps its original labels.
struct OpenSetSplits {
  Dataset train_known;
  Dataset val_known;
  Dataset test_known;
  Dataset test_unknown;

  int k() const {
    int mx = -1;
    for (int y : train_known.labels) mx = std::max(mx, y);
    return mx + 1;
  }
};

struct SplitSpec {
  std::vector<int> known_class_ids;    // order defines the remapping to 0..k-1
  std::vector<int> unknown_class_ids;  // ignored in the cross-dataset setting
  enum class Setting { standard, cross_dataset };
  Setting setting = Setting::standard;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

namespace detail {
inline std::vector<int> remap_table(const std::vector<int>& class_ids) {
  std::vector<int> ids = class_ids;
  std::sort(ids.begin(), ids.end());
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
          "SplitSpec: duplicate class id");
  return ids;
}

inline void carve_validation(Dataset train, double fraction, std::uint64_t seed,
                             Dataset& out_train, Dataset& out_val) {
  require(fraction > 0.0 && fraction < 1.0, "SplitSpec: validation_fraction must be in (0,1)");
  const int n = train.size();
  require(n >= 2, "split: need at least two known training samples");
  int n_val = static_cast<int>(std::lround(fraction * n));
  n_val = std::clamp(n_val, 1, n - 1);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  out_val = train.select({order.begin(), order.begin() + n_val});
  out_train = train.select({order.begin() + n_val, order.end()});
}
}  // namespace detail

/// Standard-setting split: knowns and unknowns come from one corpus.
/// Train/validation use only non-test known samples; the test partitions
/// use the test-tagged rows of their class lists.
inline OpenSetSplits split(const Dataset& dataset, const SplitSpec& spec) {
  require(!spec.known_class_ids.empty(), "SplitSpec: empty known class list");
  detail::remap_table(spec.known_class_ids);
  if (spec.setting == SplitSpec::Setting::standard) {
    std::set<int> known(spec.known_class_ids.begin(), spec.known_class_ids.end());
    for (int c : spec.unknown_class_ids)
      require(!known.count(c), "SplitSpec: overlapping known/unknown class ids");
  }

  auto known_index = [&](int label) {
    auto it = std::find(spec.known_class_ids.begin(), spec.known_class_ids.end(), label);
    return it == spec.known_class_ids.end()
               ? -1
               : static_cast<int>(it - spec.known_class_ids.begin());
  };
  std::set<int> unknown(spec.unknown_class_ids.begin(), spec.unknown_class_ids.end());

  std::vector<int> train_rows, test_known_rows, test_unknown_rows;
  for (int i = 0; i < dataset.size(); ++i) {
    const int ki = known_index(dataset.labels[i]);
    if (ki >= 0) {
      (dataset.is_test[i] ? test_known_rows : train_rows).push_back(i);
    } else if (unknown.count(dataset.labels[i]) && dataset.is_test[i]) {
      test_unknown_rows.push_back(i);
    }
  }

  OpenSetSplits out;
  Dataset train = dataset.select(train_rows);
  for (auto& y : train.labels) y = known_index(y);
  detail::carve_validation(std::move(train), spec.validation_fraction, spec.seed,
                           out.train_known, out.val_known);
  out.test_known = dataset.select(test_known_rows);
  for (auto& y : out.test_known.labels) y = known_index(y);
  out.test_unknown = dataset.select(test_unknown_rows);
  return out;
}

/// Cross-dataset setting: every sample of the second corpus becomes a
/// test-time unknown.
inline OpenSetSplits split(const Dataset& known_corpus, const Dataset& unknown_corpus,
                           SplitSpec spec) {
  require(unknown_corpus.dim() == known_corpus.dim(),
          "split: corpora have different feature widths");
  spec.setting = SplitSpec::Setting::cross_dataset;
  spec.unknown_class_ids.clear();
  OpenSetSplits out = split(known_corpus, spec);
  out.test_unknown = unknown_corpus;
  return out;
}

/// Synthetic confounded benchmark. Samples are [causal | confound] blocks:
/// the causal block is a class-conditional Gaussian cluster everywhere;
/// the confound block tracks the class at train time (offset scaled by
/// confound_strength) and is re-drawn independently of the class at test
/// time, so leaning on it generalizes badly.
struct SyntheticSpec {
  int k = 4;  ///< known classes
  int m = 2;  ///< unknown classes (test only)
  int causal_dims = 6;
  int confound_dims = 6;
  int train_size = 2000;
  int test_size = 500;
  double confound_strength = 3.0;
  double noise = 1.0;
  double separation = 4.0;  ///< scale of the causal class means
  std::uint64_t seed = 0;

  void validate() const {
    require(k >= 2 && m >= 0, "SyntheticSpec: need k >= 2, m >= 0");
    require(causal_dims >= 1 && confound_dims >= 0, "SyntheticSpec: bad dims");
    require(train_size >= k + m && test_size >= k + m, "SyntheticSpec: sizes below k+m");
    require(noise > 0.0 && separation > 0.0 && confound_strength >= 0.0,
            "SyntheticSpec: bad scales");
  }
};

struct SyntheticData {
  Dataset train;            ///< known classes, confounds correlated with class
  Dataset test;             ///< all classes, confounds decorrelated
  Dataset test_confounded;  ///< all classes, train-style confounding (diagnostics)
  int k = 0;
  int m = 0;
};

namespace detail {
/// Unit-norm class directions; orthonormal (guaranteed pairwise distance
/// sqrt(2)) whenever the space has room, normalized Gaussian rows otherwise.
inline Matrix class_directions(int classes, int dims, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  if (dims <= 0) return Matrix(classes, 0);
  Matrix g(dims, classes);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  if (dims >= classes) {
    Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix q = qr.householderQ() * Matrix::Identity(dims, classes);
    return q.transpose();
  }
  Matrix rows = g.transpose().topRows(classes);
  for (Eigen::Index r = 0; r < rows.rows(); ++r) rows.row(r).normalize();
  return rows;
}
}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int classes = spec.k + spec.m;
  const int dim = spec.causal_dims + spec.confound_dims;

  const Matrix causal_means =
      spec.separation * detail::class_directions(classes, spec.causal_dims, rng);
  const Matrix confound_offsets =
      detail::class_directions(classes, spec.confound_dims, rng);

  std::int64_t next_id = 0;
  std::uniform_int_distribution<int> any_class(0, classes - 1);
  auto fill = [&](Dataset& ds, int count, int label_classes, bool correlated, bool test_tag) {
    ds.X.resize(count, dim);
    ds.labels.resize(count);
    ds.ids.resize(count);
    ds.is_test.assign(count, test_tag ? 1 : 0);
    for (int i = 0; i < count; ++i) {
      const int c = i % label_classes;  // exact label histogram by construction
      ds.labels[i] = c;
      ds.ids[i] = next_id++;
      for (int j = 0; j < spec.causal_dims; ++j)
        ds.X(i, j) = causal_means(c, j) + spec.noise * normal(rng);
      const int source = correlated ? c : any_class(rng);
      for (int j = 0; j < spec.confound_dims; ++j)
        ds.X(i, spec.causal_dims + j) =
            spec.confound_strength * confound_offsets(source, j) + spec.noise * normal(rng);
    }
  };

  SyntheticData out;
  out.k = spec.k;
  out.m = spec.m;
  fill(out.train, spec.train_size, spec.k, /*correlated=*/true, /*test_tag=*/false);
  fill(out.test, spec.test_size, classes, /*correlated=*/false, /*test_tag=*/true);
  fill(out.test_confounded, spec.test_size, classes, /*correlated=*/true, /*test_tag=*/true);
  return out;
}

/// Per-dimension standardization fitted on the known training samples and
/// applied to every split; the usual input normalization step.
struct Standardizer {
  Vector mean;
  Vector scale;  // standard deviation floored at 1e-8

  static Standardizer fit(const Matrix& X) {
    require(X.rows() > 0, "Standardizer: empty fit set");
    Standardizer s;
    s.mean = X.colwise().mean();
    s.scale = ((X.rowwise() - s.mean.transpose()).array().square().colwise().mean())
                  .sqrt()
                  .matrix()
                  .transpose();
    s.scale = s.scale.cwiseMax(1e-8);
    return s;
  }

  Matrix apply(const Matrix& X) const {
    require(X.cols() == mean.size(), "Standardizer: width mismatch");
    return (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  void apply_in_place(OpenSetSplits& splits) const {
    for (Matrix* m :
         {&splits.train_known.X, &splits.val_known.X, &splits.test_known.X,
          &splits.test_unknown.X})
      if (m->rows() > 0) *m = apply(*m);
  }

  void save(const std::filesystem::path& file) const {
    std::ofstream os(file);
    require(os.good(), "Standardizer: cannot open " + file.string());
    os.precision(17);
    os << "rcd-standardizer v1\n" << mean.size() << "\n";
    for (Eigen::Index i = 0; i < mean.size(); ++i) os << mean[i] << ' ' << scale[i] << "\n";
  }

  static Standardizer load(const std::filesystem::path& file) {
    std::ifstream is(file);
    require(is.good(), "Standardizer: cannot open " + file.string());
    std::string magic, version;
    is >> magic >> version;
    require(magic == "rcd-standardizer", "Standardizer: bad magic");
    Eigen::Index n = 0;
    is >> n;
    Standardizer s;
    s.mean.resize(n);
    s.scale.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) is >> s.mean[i] >> s.scale[i];
    require(is.good(), "Standardizer: truncated file");
    return s;
  }
};

/// Fits on the training split and normalizes all four splits in place.
inline Standardizer standardize(OpenSetSplits& splits) {
  const Standardizer s = Standardizer::fit(splits.train_known.X);
  s.apply_in_place(splits);
  return s;
}

/// Splits synthetic data into the standard four partitions.
inline OpenSetSplits make_open_set_splits(const SyntheticData& data, double validation_fraction,
                                          std::uint64_t seed) {
  OpenSetSplits out;
  detail::carve_validation(data.train, validation_fraction, seed, out.train_known,
                           out.val_known);
  std::vector<int> known_rows, unknown_rows;
  for (int i = 0; i < data.test.size(); ++i)
    (data.test.labels[i] < data.k ? known_rows : unknown_rows).push_back(i);
  out.test_known = data.test.select(known_rows);
  out.test_unknown = data.test.select(unknown_rows);
  return out;
}

// ---------------------------------------------------------------------------
// On-disk formats: CSV records, raw binary with a shape manifest, and
// class-per-subdirectory image folders (PGM/PPM).

namespace detail {
inline void write_double(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}
}  // namespace detail

inline void save_dataset_csv(const std::filesystem::path& file, const Dataset& ds) {
  std::ofstream os(file);
  require(os.good(), "save_dataset_csv: cannot open " + file.string());
  os << "id,label,is_test";
  for (int j = 0; j < ds.dim(); ++j) os << ",f" << j;
  os << "\n";
  for (int i = 0; i < ds.size(); ++i) {
    os << ds.ids[i] << ',' << ds.labels[i] << ',' << int(ds.is_test[i]);
    for (int j = 0; j < ds.dim(); ++j) {
      os << ',';
      detail::write_double(os, ds.X(i, j));
    }
    os << "\n";
  }
}

inline Dataset load_dataset_csv(const std::filesystem::path& file) {
  std::ifstream is(file);
  require(is.good(), "load_dataset_csv: cannot open " + file.string());
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "load_dataset_csv: empty file");
  const int dim = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 2;
  require(dim >= 1, "load_dataset_csv: malformed header");

  std::vector<double> values;
  Dataset ds;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    ds.ids.push_back(std::stoll(cell));
    std::getline(ls, cell, ',');
    ds.labels.push_back(std::stoi(cell));
    std::getline(ls, cell, ',');
    ds.is_test.push_back(static_cast<std::uint8_t>(std::stoi(cell)));
    for (int j = 0; j < dim; ++j) {
      require(static_cast<bool>(std::getline(ls, cell, ',')), "load_dataset_csv: short row");
      values.push_back(std::stod(cell));
    }
  }
  const int n = static_cast<int>(ds.labels.size());
  ds.X.resize(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) ds.X(i, j) = values[static_cast<std::size_t>(i) * dim + j];
  return ds;
}

inline void save_dataset_binary(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.txt");
    os << "rcd-dataset v1\nrows " << ds.size() << "\ncols " << ds.dim() << "\n";
  }
  std::ofstream os(dir / "samples.bin", std::ios::binary);
  require(os.good(), "save_dataset_binary: cannot open " + dir.string());
  for (int i = 0; i < ds.size(); ++i) {
    const std::int64_t id = ds.ids[i];
    const std::int32_t label = ds.labels[i];
    const std::int32_t tag = ds.is_test[i];
    os.write(reinterpret_cast<const char*>(&id), sizeof(id));
    os.write(reinterpret_cast<const char*>(&label), sizeof(label));
    os.write(reinterpret_cast<const char*>(&tag), sizeof(tag));
    for (int j = 0; j < ds.dim(); ++j) {
      const double v = ds.X(i, j);
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

inline Dataset load_dataset_binary(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.txt");
  require(ms.good(), "load_dataset_binary: missing manifest in " + dir.string());
  std::string magic, version, word;
  int rows = 0, cols = 0;
  ms >> magic >> version >> word >> rows >> word >> cols;
  require(magic == "rcd-dataset" && rows >= 0 && cols >= 1,
          "load_dataset_binary: bad manifest");
  std::ifstream is(dir / "samples.bin", std::ios::binary);
  require(is.good(), "load_dataset_binary: missing samples.bin");
  Dataset ds;
  ds.X.resize(rows, cols);
  ds.labels.resize(rows);
  ds.ids.resize(rows);
  ds.is_test.resize(rows);
  for (int i = 0; i < rows; ++i) {
    std::int64_t id;
    std::int32_t label, tag;
    is.read(reinterpret_cast<char*>(&id), sizeof(id));
    is.read(reinterpret_cast<char*>(&label), sizeof(label));
    is.read(reinterpret_cast<char*>(&tag), sizeof(tag));
    ds.ids[i] = id;
    ds.labels[i] = label;
    ds.is_test[i] = static_cast<std::uint8_t>(tag);
    for (int j = 0; j < cols; ++j) {
      double v;
      is.read(reinterpret_cast<char*>(&v), sizeof(v));
      ds.X(i, j) = v;
    }
    require(is.good(), "load_dataset_binary: truncated samples.bin");
  }
  return ds;
}

namespace detail {
// Minimal PGM/PPM reader (P2/P3/P5/P6), pixels normalized to [0,1].
inline std::vector<double> read_pnm(const std::filesystem::path& file, int& h, int& w) {
  std::ifstream is(file, std::ios::binary);
  require(is.good(), "read_pnm: cannot open " + file.string());
  std::string magic;
  is >> magic;
  require(magic == "P2" || magic == "P3" || magic == "P5" || magic == "P6",
          "read_pnm: unsupported format in " + file.string());
  auto next_int = [&is]() {
    int v;
    while (true) {
      is >> std::ws;
      if (is.peek() == '#') {
        std::string comment;
        std::getline(is, comment);
        continue;
      }
      is >> v;
      break;
    }
    return v;
  };
  w = next_int();
  h = next_int();
  const int maxval = next_int();
  require(w > 0 && h > 0 && maxval > 0 && maxval < 65536, "read_pnm: bad header");
  const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(w) * h * channels;
  std::vector<double> raw(count);
  if (magic == "P5" || magic == "P6") {
    is.get();  // the single whitespace after maxval
    if (maxval < 256) {
      std::vector<unsigned char> bytes(count);
      is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
      require(is.gcount() == static_cast<std::streamsize>(count), "read_pnm: truncated data");
      for (std::size_t i = 0; i < count; ++i) raw[i] = bytes[i] / double(maxval);
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        const int hi = is.get(), lo = is.get();
        require(lo != EOF, "read_pnm: truncated data");
        raw[i] = ((hi << 8) | lo) / double(maxval);
      }
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) raw[i] = next_int() / double(maxval);
  }
  if (channels == 1) return raw;
  // interleaved RGB -> channel-major planes, matching the conv layout
  std::vector<double> planes(count);
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) planes[c * plane + p] = raw[p * 3 + c];
  return planes;
}
}  // namespace detail

/// Loads a class-per-subdirectory folder of PGM/PPM images. Class ids
/// follow the sorted subdirectory names. Without explicit train/ and
/// test/ top-level folders, a deterministic per-class holdout of
/// `test_fraction` is tagged as test data.
inline Dataset load_image_folder(const std::filesystem::path& root, double test_fraction = 0.2,
                                 std::uint64_t seed = 0) {
  require(std::filesystem::is_directory(root), "load_image_folder: not a directory");
  const bool phased = std::filesystem::is_directory(root / "train") &&
                      std::filesystem::is_directory(root / "test");

  struct Item {
    std::filesystem::path file;
    int label;
    std::uint8_t test_tag;
  };
  std::vector<Item> items;
  auto scan = [&](const std::filesystem::path& base, std::uint8_t tag_or_unsplit) {
    std::vector<std::filesystem::path> class_dirs;
    for (const auto& e : std::filesystem::directory_iterator(base))
      if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::directory_iterator(class_dirs[c])) {
        const auto ext = e.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) items.push_back({f, static_cast<int>(c), tag_or_unsplit});
    }
  };
  if (phased) {
    scan(root / "train", 0);
    scan(root / "test", 1);
  } else {
    scan(root, 0);
    Rng rng(seed ^ 0xf01dULL);
    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * items.size()));
    for (std::size_t i = 0; i < n_test && i < order.size(); ++i) items[order[i]].test_tag = 1;
  }
  require(!items.empty(), "load_image_folder: no .pgm/.ppm files found");

  Dataset ds;
  int h0 = -1, w0 = -1;
  std::vector<std::vector<double>> rows;
  for (const auto& item : items) {
    int h = 0, w = 0;
    rows.push_back(detail::read_pnm(item.file, h, w));
    if (h0 < 0) {
      h0 = h;
      w0 = w;
    }
    require(h == h0 && w == w0 && rows.back().size() == rows.front().size(),
            "load_image_folder: images must share dimensions");
    ds.labels.push_back(item.label);
    ds.ids.push_back(static_cast<std::int64_t>(ds.labels.size()) - 1);
    ds.is_test.push_back(item.test_tag);
  }
  ds.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      ds.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return ds;
}

}  // namespace rcd
