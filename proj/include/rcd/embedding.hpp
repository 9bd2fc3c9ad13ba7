#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rcd/core.hpp"

// Deterministic neighbor embedding (plain O(n^2) t-SNE) for feature
// visualization, plus a dependency-free SVG scatter writer.

namespace rcd {

struct EmbeddingOptions {
  double perplexity = 30.0;  // clamped for tiny inputs
  int iterations = 400;
  double learning_rate = 100.0;
  std::uint64_t seed = 0;
};

/// Embeds the rows of X into 2 dimensions. Deterministic under a fixed
/// seed: same input and options give bit-identical coordinates.
inline Matrix embed_2d(const Matrix& X, const EmbeddingOptions& opt = {}) {
  const int n = static_cast<int>(X.rows());
  require(n >= 2, "embed_2d: need at least two points");
  require(X.allFinite(), "embed_2d: non-finite input");

  Matrix d2(n, n);  // pairwise squared distances
  for (int i = 0; i < n; ++i) {
    d2(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double d = (X.row(i) - X.row(j)).squaredNorm();
      d2(i, j) = d;
      d2(j, i) = d;
    }
  }

  const double perplexity =
      std::min(opt.perplexity, std::max(2.0, (static_cast<double>(n) - 1.0) / 3.0));
  const double target_entropy = std::log(perplexity);

  // Conditional affinities with per-point bandwidth found by bisection.
  Matrix p = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    Vector row(n);
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        row[j] = (j == i) ? 0.0 : std::exp(-beta * d2(i, j));
        sum += row[j];
      }
      if (sum <= 0.0) sum = kLogEps;
      double entropy = 0.0;
      for (int j = 0; j < n; ++j) {
        const double q = row[j] / sum;
        if (q > 1e-14) entropy -= q * std::log(q);
      }
      if (std::abs(entropy - target_entropy) < 1e-5) break;
      if (entropy > target_entropy) {
        beta_lo = beta;
        beta = std::isfinite(beta_hi) ? 0.5 * (beta + beta_hi) : beta * 2.0;
      } else {
        beta_hi = beta;
        beta = 0.5 * (beta + beta_lo);
      }
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      row[j] = (j == i) ? 0.0 : std::exp(-beta * d2(i, j));
      sum += row[j];
    }
    if (sum <= 0.0) sum = kLogEps;
    p.row(i) = row.transpose() / sum;
  }
  p = (p + p.transpose()).eval() / (2.0 * n);
  p = p.cwiseMax(1e-12);

  Rng rng(opt.seed ^ 0x75e2ULL);
  std::normal_distribution<double> normal(0.0, 1e-2);
  Matrix y(n, 2), velocity = Matrix::Zero(n, 2);
  for (int i = 0; i < n; ++i) {
    y(i, 0) = normal(rng);
    y(i, 1) = normal(rng);
  }

  const int exaggeration_iters = std::min(100, opt.iterations / 4);
  for (int iter = 0; iter < opt.iterations; ++iter) {
    const double exaggeration = iter < exaggeration_iters ? 12.0 : 1.0;
    const double momentum = iter < exaggeration_iters ? 0.5 : 0.8;

    Matrix w(n, n);  // student-t kernel
    double wsum = 0.0;
    for (int i = 0; i < n; ++i) {
      w(i, i) = 0.0;
      for (int j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        w(i, j) = v;
        w(j, i) = v;
        wsum += 2.0 * v;
      }
    }

    Matrix grad = Matrix::Zero(n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(w(i, j) / wsum, 1e-12);
        const double coeff = 4.0 * (exaggeration * p(i, j) - q) * w(i, j);
        grad.row(i) += coeff * (y.row(i) - y.row(j));
      }

    velocity = momentum * velocity - opt.learning_rate * grad;
    y += velocity;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

/// Writes a fixed-palette scatter plot. `groups` select the color and the
/// legend label of each point; ids outside the palette reuse it cyclically.
inline void write_scatter_svg(const std::filesystem::path& file, const Matrix& xy,
                              const std::vector<int>& groups,
                              const std::vector<std::string>& group_names,
                              const std::string& title = "") {
  require(xy.cols() == 2 && xy.rows() == static_cast<Eigen::Index>(groups.size()),
          "write_scatter_svg: coordinate/group mismatch");
  static const char* kPalette[] = {"#1f77b4", "#2ca02c", "#e6b417", "#d62728",
                                   "#9467bd", "#8c564b"};
  constexpr int kColors = 6;
  const double w = 720, h = 560, margin = 40;
  const double xmin = xy.col(0).minCoeff(), xmax = xy.col(0).maxCoeff();
  const double ymin = xy.col(1).minCoeff(), ymax = xy.col(1).maxCoeff();
  const double xspan = std::max(xmax - xmin, 1e-9), yspan = std::max(ymax - ymin, 1e-9);

  std::ofstream os(file);
  require(os.good(), "write_scatter_svg: cannot open " + file.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty())
    os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
       << title << "</text>\n";
  for (Eigen::Index i = 0; i < xy.rows(); ++i) {
    const double px = margin + (xy(i, 0) - xmin) / xspan * (w - 2 * margin);
    const double py = h - margin - (xy(i, 1) - ymin) / yspan * (h - 2 * margin);
    os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"2.5\" fill=\""
       << kPalette[groups[static_cast<std::size_t>(i)] % kColors] << "\" fill-opacity=\"0.7\"/>\n";
  }
  for (std::size_t g = 0; g < group_names.size(); ++g) {
    const double ly = 30.0 + 18.0 * static_cast<double>(g);
    os << "<circle cx=\"" << w - 160 << "\" cy=\"" << ly << "\" r=\"4\" fill=\""
       << kPalette[g % kColors] << "\"/>\n";
    os << "<text x=\"" << w - 150 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
       << group_names[g] << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace rcd
