#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rcd/core.hpp"
#include "rcd/model.hpp"

// Checkpoints: flat binary tensors (params.bin) next to a plain-text
// manifest recording step, seed, hyper-parameters, architecture, and
// tensor shapes. Round-trips are bit-exact.

namespace rcd {

struct ManifestInfo {
  int step = 0;
  std::uint64_t seed = 0;
  std::string hyper;  // free-form key=value summary
};

namespace detail {

inline void write_tensor_blob(const std::filesystem::path& file,
                              const std::vector<const Matrix*>& tensors) {
  std::ofstream os(file, std::ios::binary);
  require(os.good(), "write_tensor_blob: cannot open " + file.string());
  for (const Matrix* m : tensors)
    os.write(reinterpret_cast<const char*>(m->data()),
             static_cast<std::streamsize>(sizeof(double) * m->size()));
}

inline void read_tensor_blob(const std::filesystem::path& file,
                             const std::vector<Matrix*>& tensors) {
  std::ifstream is(file, std::ios::binary);
  require(is.good(), "read_tensor_blob: cannot open " + file.string());
  for (Matrix* m : tensors) {
    is.read(reinterpret_cast<char*>(m->data()),
            static_cast<std::streamsize>(sizeof(double) * m->size()));
    require(is.gcount() == static_cast<std::streamsize>(sizeof(double) * m->size()),
            "read_tensor_blob: truncated " + file.string());
  }
}

struct Manifest {
  ManifestInfo info;
  std::string backbone_config;
  int head_rows = 0, head_cols = 0;  // zero when the dir holds a bare extractor
  std::vector<std::pair<int, int>> shapes;
};

inline void write_manifest(const std::filesystem::path& file, const Manifest& m) {
  std::ofstream os(file);
  require(os.good(), "write_manifest: cannot open " + file.string());
  os << "rcd-checkpoint v1\n";
  os << "step " << m.info.step << "\n";
  os << "seed " << m.info.seed << "\n";
  os << "hyper " << m.info.hyper << "\n";
  os << "backbone " << m.backbone_config << "\n";
  if (m.head_rows > 0) os << "head " << m.head_rows << ' ' << m.head_cols << "\n";
  for (const auto& [r, c] : m.shapes) os << "tensor " << r << ' ' << c << "\n";
}

inline Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  require(is.good(), "read_manifest: cannot open " + file.string());
  Manifest m;
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line == "rcd-checkpoint v1",
          "read_manifest: bad magic in " + file.string());
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "step") ls >> m.info.step;
    else if (key == "seed") ls >> m.info.seed;
    else if (key == "hyper") std::getline(ls >> std::ws, m.info.hyper);
    else if (key == "backbone") std::getline(ls >> std::ws, m.backbone_config);
    else if (key == "head") ls >> m.head_rows >> m.head_cols;
    else if (key == "tensor") {
      int r = 0, c = 0;
      ls >> r >> c;
      m.shapes.emplace_back(r, c);
    }
  }
  require(!m.backbone_config.empty(), "read_manifest: missing backbone line");
  return m;
}

inline void check_shapes(const std::vector<const Matrix*>& tensors,
                         const std::vector<std::pair<int, int>>& shapes,
                         const std::string& where) {
  require(tensors.size() == shapes.size(), "load: tensor count mismatch in " + where);
  for (std::size_t i = 0; i < tensors.size(); ++i)
    require(tensors[i]->rows() == shapes[i].first && tensors[i]->cols() == shapes[i].second,
            "load: tensor shape mismatch in " + where);
}

}  // namespace detail

inline void save_extractor(const std::filesystem::path& dir, const FeatureExtractor& fx,
                           const ManifestInfo& info) {
  std::filesystem::create_directories(dir);
  detail::Manifest m;
  m.info = info;
  m.backbone_config = fx.config_line();
  const auto tensors = fx.parameters();
  for (const Matrix* t : tensors)
    m.shapes.emplace_back(static_cast<int>(t->rows()), static_cast<int>(t->cols()));
  detail::write_manifest(dir / "manifest.txt", m);
  detail::write_tensor_blob(dir / "params.bin", tensors);
}

inline std::unique_ptr<FeatureExtractor> load_extractor(const std::filesystem::path& dir) {
  const auto m = detail::read_manifest(dir / "manifest.txt");
  auto fx = make_backbone_from_config(m.backbone_config);
  detail::check_shapes(std::as_const(*fx).parameters(), m.shapes, dir.string());
  detail::read_tensor_blob(dir / "params.bin", fx->parameters());
  return fx;
}

inline void save_model(const std::filesystem::path& dir, const Model& model,
                       const ManifestInfo& info) {
  std::filesystem::create_directories(dir);
  detail::Manifest m;
  m.info = info;
  m.backbone_config = model.backbone->config_line();
  m.head_rows = static_cast<int>(model.head.A.rows());
  m.head_cols = static_cast<int>(model.head.A.cols());
  auto tensors = std::as_const(*model.backbone).parameters();
  tensors.push_back(&model.head.A);
  for (const Matrix* t : tensors)
    m.shapes.emplace_back(static_cast<int>(t->rows()), static_cast<int>(t->cols()));
  detail::write_manifest(dir / "manifest.txt", m);
  detail::write_tensor_blob(dir / "params.bin", tensors);
}

inline Model load_model(const std::filesystem::path& dir) {
  const auto m = detail::read_manifest(dir / "manifest.txt");
  require(m.head_rows > 0, "load_model: directory holds no classifier head");
  Model model;
  model.backbone = make_backbone_from_config(m.backbone_config);
  model.head.A.resize(m.head_rows, m.head_cols);
  auto tensors = model.backbone->parameters();
  tensors.push_back(&model.head.A);
  detail::check_shapes({tensors.begin(), tensors.end()}, m.shapes, dir.string());
  detail::read_tensor_blob(dir / "params.bin", tensors);
  return model;
}

}  // namespace rcd
