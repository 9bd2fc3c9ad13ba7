#pragma once

#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rcd/core.hpp"

namespace rcd {

/// Everything that parameterizes a run. Defaults follow the reference
/// configuration (lambda1 = lambda2 = 1, T = 2) at desk scale (u = 32).
struct HyperParams {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int u = 32;      ///< expanded logit dimensions reserved for unknowns
  int T = 2;       ///< maximum recursion step
  double theta = std::numeric_limits<double>::quiet_NaN();  ///< NaN: calibrate on validation
  int k = 2;       ///< known classes
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  int epochs_pretrain = 20;  ///< plain-CE warm start standing in for a pretrained backbone
  int epochs_phase1 = 5;
  int epochs_phase2 = 20;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    require(lambda1 >= 0.0 && lambda2 >= 0.0, "HyperParams: lambda1/lambda2 must be >= 0");
    require(u >= 0, "HyperParams: u must be >= 0");
    require(T >= 1, "HyperParams: T must be >= 1");
    require(k >= 2, "HyperParams: k must be >= 2");
    require(lr > 0.0 && weight_decay >= 0.0 && momentum >= 0.0 && momentum < 1.0,
            "HyperParams: bad optimizer settings");
    require(epochs_pretrain >= 0 && epochs_phase1 >= 1 && epochs_phase2 >= 1 &&
                batch_size >= 1,
            "HyperParams: bad schedule");
  }
};

/// Trainable map from raw inputs (one sample per row) to d-dimensional
/// features. Implementations are value types behind clone().
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual std::string kind() const = 0;
  virtual int input_dim() const = 0;
  virtual int feature_dim() const = 0;

  /// Inference forward pass; throws on input width mismatch.
  virtual Matrix extract(const Matrix& inputs) const = 0;

  /// Cached activations from a training forward pass.
  struct Tape {
    std::vector<Matrix> acts;
  };

  virtual Matrix forward(const Matrix& inputs, Tape& tape) const = 0;

  /// Accumulates dLoss/dParam (aligned with parameters()) given
  /// dLoss/dFeatures for the batch recorded on the tape.
  virtual void backward(const Tape& tape, const Matrix& grad_features,
                        std::vector<Matrix>& grad_params) const = 0;

  virtual std::vector<Matrix*> parameters() = 0;
  virtual std::vector<const Matrix*> parameters() const = 0;

  virtual std::unique_ptr<FeatureExtractor> clone() const = 0;

  /// One-line architecture description, parseable by make_backbone_from_config.
  virtual std::string config_line() const = 0;
};

/// Fully-connected backbone with tanh hidden activations and a linear
/// output layer. Desk-scale stand-in for a large pretrained extractor.
class MlpBackbone final : public FeatureExtractor {
 public:
  /// dims = {input, hidden..., feature}; at least one hidden layer.
  MlpBackbone(std::vector<int> dims, Rng& rng) : dims_(std::move(dims)) {
    require(dims_.size() >= 2, "MlpBackbone: need input and feature dims");
    for (int d : dims_) require(d >= 1, "MlpBackbone: non-positive layer width");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const double limit = std::sqrt(6.0 / (dims_[l] + dims_[l + 1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Matrix w(dims_[l + 1], dims_[l]);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
      weights_.push_back(std::move(w));
      biases_.push_back(Matrix::Zero(1, dims_[l + 1]));
    }
  }

  /// Default toy architecture: input -> 64 -> 32 -> 16.
  static std::unique_ptr<MlpBackbone> make_default(int input_dim, Rng& rng) {
    return std::make_unique<MlpBackbone>(std::vector<int>{input_dim, 64, 32, 16}, rng);
  }

  std::string kind() const override { return "mlp"; }
  int input_dim() const override { return dims_.front(); }
  int feature_dim() const override { return dims_.back(); }

  Matrix extract(const Matrix& inputs) const override {
    Tape tape;
    return forward(inputs, tape);
  }

  Matrix forward(const Matrix& inputs, Tape& tape) const override {
    require(inputs.cols() == dims_.front(), "MlpBackbone: input width mismatch");
    require(inputs.allFinite(), "MlpBackbone: non-finite inputs");
    tape.acts.clear();
    tape.acts.push_back(inputs);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Matrix z = tape.acts.back() * weights_[l].transpose();
      z.rowwise() += biases_[l].row(0);
      if (l + 1 < weights_.size()) z = z.array().tanh();
      tape.acts.push_back(std::move(z));
    }
    return tape.acts.back();
  }

  void backward(const Tape& tape, const Matrix& grad_features,
                std::vector<Matrix>& grad_params) const override {
    require(tape.acts.size() == weights_.size() + 1, "MlpBackbone: stale tape");
    grad_params.assign(2 * weights_.size(), Matrix());
    Matrix d_act = grad_features;
    for (std::size_t l = weights_.size(); l-- > 0;) {
      Matrix d_z = (l + 1 == weights_.size())
                       ? std::move(d_act)
                       : Matrix((1.0 - tape.acts[l + 1].array().square()) * d_act.array());
      grad_params[2 * l] = d_z.transpose() * tape.acts[l];
      grad_params[2 * l + 1] = d_z.colwise().sum();
      if (l > 0) d_act = d_z * weights_[l];
    }
  }

  std::vector<Matrix*> parameters() override {
    std::vector<Matrix*> p;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      p.push_back(&weights_[l]);
      p.push_back(&biases_[l]);
    }
    return p;
  }

  std::vector<const Matrix*> parameters() const override {
    std::vector<const Matrix*> p;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      p.push_back(&weights_[l]);
      p.push_back(&biases_[l]);
    }
    return p;
  }

  std::unique_ptr<FeatureExtractor> clone() const override {
    return std::make_unique<MlpBackbone>(*this);
  }

  std::string config_line() const override {
    std::ostringstream os;
    os << "mlp";
    for (int d : dims_) os << ' ' << d;
    return os.str();
  }

 private:
  std::vector<int> dims_;
  std::vector<Matrix> weights_;  // dims_[l+1] x dims_[l]
  std::vector<Matrix> biases_;   // 1 x dims_[l+1]
};

/// Linear classifier without bias: logits = A * feature, A of shape
/// (k+u) x d. The missing bias is what makes the causal effect and the
/// causal feature formulations coincide.
struct ClassifierHead {
  Matrix A;

  static ClassifierHead init(int out_dim, int feature_dim, Rng& rng) {
    require(out_dim >= 1 && feature_dim >= 1, "ClassifierHead: bad shape");
    const double limit = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    ClassifierHead head;
    head.A.resize(out_dim, feature_dim);
    for (Eigen::Index i = 0; i < head.A.size(); ++i) head.A.data()[i] = dist(rng);
    return head;
  }

  Vector classify(const Vector& feature) const {
    require(feature.size() == A.cols(), "ClassifierHead: feature length mismatch");
    return A * feature;
  }

  Matrix classify(const Matrix& features) const {
    require(features.cols() == A.cols(), "ClassifierHead: feature width mismatch");
    return features * A.transpose();
  }
};

/// Backbone plus classifier head; the unit the recursion trains and clones.
struct Model {
  std::unique_ptr<FeatureExtractor> backbone;
  ClassifierHead head;

  Model() = default;
  Model(std::unique_ptr<FeatureExtractor> b, ClassifierHead h)
      : backbone(std::move(b)), head(std::move(h)) {}

  Model clone() const { return Model(backbone->clone(), head); }
  int logit_dim() const { return static_cast<int>(head.A.rows()); }
};

/// Stochastic gradient descent with classic momentum and L2 weight decay.
class Sgd {
 public:
  Sgd(double lr, double weight_decay, double momentum = 0.9)
      : lr_(lr), weight_decay_(weight_decay), momentum_(momentum) {
    require(lr > 0.0 && weight_decay >= 0.0 && momentum >= 0.0 && momentum < 1.0,
            "Sgd: bad settings");
  }

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
    require(params.size() == grads.size(), "Sgd: parameter/gradient count mismatch");
    if (velocity_.empty())
      for (const Matrix* p : params) velocity_.push_back(Matrix::Zero(p->rows(), p->cols()));
    require(velocity_.size() == params.size(), "Sgd: parameter set changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      require(params[i]->rows() == grads[i].rows() && params[i]->cols() == grads[i].cols(),
              "Sgd: gradient shape mismatch");
      velocity_[i] = momentum_ * velocity_[i] + grads[i] + weight_decay_ * *params[i];
      *params[i] -= lr_ * velocity_[i];
    }
  }

 private:
  double lr_, weight_decay_, momentum_;
  std::vector<Matrix> velocity_;
};

/// Small convolutional backbone for image inputs: three blocks of
/// 3x3 same-padded convolution, tanh, and 2x2 average pooling, then a
/// linear projection to the feature dimension. Inputs arrive flattened
/// row-wise as HxWxC with channel-major planes (all of channel 0, then 1, ...).
class ConvBackbone final : public FeatureExtractor {
 public:
  ConvBackbone(int height, int width, int in_channels, Rng& rng,
               std::vector<int> block_channels = {8, 12, 16}, int feature_dim = 16)
      : h_(height), w_(width), c_(in_channels), feature_dim_(feature_dim),
        block_channels_(std::move(block_channels)) {
    require(h_ >= 8 && w_ >= 8 && c_ >= 1, "ConvBackbone: image too small");
    require(!block_channels_.empty() && feature_dim_ >= 1, "ConvBackbone: bad architecture");
    int ch = c_, hh = h_, ww = w_;
    for (int out_ch : block_channels_) {
      const double limit = std::sqrt(6.0 / (9.0 * ch + 9.0 * out_ch));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Matrix kmat(out_ch, 9 * ch);
      for (Eigen::Index i = 0; i < kmat.size(); ++i) kmat.data()[i] = dist(rng);
      kernels_.push_back(std::move(kmat));
      kernel_bias_.push_back(Matrix::Zero(1, out_ch));
      ch = out_ch;
      hh /= 2;
      ww /= 2;
      require(hh >= 1 && ww >= 1, "ConvBackbone: too many blocks for image size");
    }
    flat_dim_ = hh * ww * ch;
    const double limit = std::sqrt(6.0 / (flat_dim_ + feature_dim_));
    std::uniform_real_distribution<double> dist(-limit, limit);
    proj_.resize(feature_dim_, flat_dim_);
    for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = dist(rng);
    proj_bias_ = Matrix::Zero(1, feature_dim_);
  }

  std::string kind() const override { return "conv"; }
  int input_dim() const override { return h_ * w_ * c_; }
  int feature_dim() const override { return feature_dim_; }

  Matrix extract(const Matrix& inputs) const override {
    Tape tape;
    return forward(inputs, tape);
  }

  Matrix forward(const Matrix& inputs, Tape& tape) const override {
    require(inputs.cols() == input_dim(), "ConvBackbone: input width mismatch");
    require(inputs.allFinite(), "ConvBackbone: non-finite inputs");
    tape.acts.clear();
    tape.acts.push_back(inputs);  // acts: [input, (cols, act, pooled) per block, features]
    int ch = c_, hh = h_, ww = w_;
    Matrix cur = inputs;
    for (std::size_t b = 0; b < kernels_.size(); ++b) {
      Matrix cols = im2col(cur, hh, ww, ch);                       // (n*hh*ww) x (9*ch)
      Matrix act = cols * kernels_[b].transpose();                 // (n*hh*ww) x out_ch
      act.rowwise() += kernel_bias_[b].row(0);
      act = act.array().tanh();
      tape.acts.push_back(cols);
      tape.acts.push_back(act);
      const int out_ch = static_cast<int>(kernels_[b].rows());
      Matrix pooled = avgpool2(act, static_cast<int>(cur.rows()), hh, ww, out_ch);
      hh /= 2;
      ww /= 2;
      ch = out_ch;
      cur = reshape_to_rows(pooled, static_cast<int>(inputs.rows()), hh * ww * ch);
      tape.acts.push_back(cur);
    }
    Matrix feats = cur * proj_.transpose();
    feats.rowwise() += proj_bias_.row(0);
    tape.acts.push_back(feats);
    return feats;
  }

  void backward(const Tape& tape, const Matrix& grad_features,
                std::vector<Matrix>& grad_params) const override {
    require(tape.acts.size() == 3 * kernels_.size() + 2, "ConvBackbone: stale tape");
    grad_params.assign(2 * kernels_.size() + 2, Matrix());
    const int n = static_cast<int>(tape.acts.front().rows());

    const Matrix& flat = tape.acts[3 * kernels_.size()];
    grad_params[2 * kernels_.size()] = grad_features.transpose() * flat;
    grad_params[2 * kernels_.size() + 1] = grad_features.colwise().sum();
    Matrix d_cur = grad_features * proj_;

    // Spatial dims entering each block.
    std::vector<int> hs(kernels_.size()), ws(kernels_.size()), cs(kernels_.size());
    int hh = h_, ww = w_, ch = c_;
    for (std::size_t b = 0; b < kernels_.size(); ++b) {
      hs[b] = hh;
      ws[b] = ww;
      cs[b] = ch;
      hh /= 2;
      ww /= 2;
      ch = static_cast<int>(kernels_[b].rows());
    }

    for (std::size_t b = kernels_.size(); b-- > 0;) {
      const Matrix& cols = tape.acts[1 + 3 * b];
      const Matrix& act = tape.acts[2 + 3 * b];
      const int out_ch = static_cast<int>(kernels_[b].rows());
      Matrix d_act = avgpool2_backward(d_cur, n, hs[b], ws[b], out_ch);
      d_act.array() *= 1.0 - act.array().square();
      grad_params[2 * b] = d_act.transpose() * cols;
      grad_params[2 * b + 1] = d_act.colwise().sum();
      Matrix d_cols = d_act * kernels_[b];
      d_cur = col2im(d_cols, n, hs[b], ws[b], cs[b]);
    }
  }

  std::vector<Matrix*> parameters() override {
    std::vector<Matrix*> p;
    for (std::size_t b = 0; b < kernels_.size(); ++b) {
      p.push_back(&kernels_[b]);
      p.push_back(&kernel_bias_[b]);
    }
    p.push_back(&proj_);
    p.push_back(&proj_bias_);
    return p;
  }

  std::vector<const Matrix*> parameters() const override {
    std::vector<const Matrix*> p;
    for (std::size_t b = 0; b < kernels_.size(); ++b) {
      p.push_back(&kernels_[b]);
      p.push_back(&kernel_bias_[b]);
    }
    p.push_back(&proj_);
    p.push_back(&proj_bias_);
    return p;
  }

  std::unique_ptr<FeatureExtractor> clone() const override {
    return std::make_unique<ConvBackbone>(*this);
  }

  std::string config_line() const override {
    std::ostringstream os;
    os << "conv " << h_ << ' ' << w_ << ' ' << c_ << ' ' << feature_dim_;
    for (int bc : block_channels_) os << ' ' << bc;
    return os.str();
  }

 private:
  // Patch rows for a 3x3 same-padded convolution. Sample-major layout:
  // row index = (sample * hh + y) * ww + x; column = (dy*3 + dx) * ch + c.
  static Matrix im2col(const Matrix& images, int hh, int ww, int ch) {
    const int n = static_cast<int>(images.rows());
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(n) * hh * ww, 9 * ch);
    for (int s = 0; s < n; ++s)
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x) {
          const Eigen::Index row = (static_cast<Eigen::Index>(s) * hh + y) * ww + x;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= hh || xx < 0 || xx >= ww) continue;
              const int tap = (dy + 1) * 3 + (dx + 1);
              for (int c = 0; c < ch; ++c)
                cols(row, tap * ch + c) = images(s, (c * hh + yy) * ww + xx);
            }
        }
    return cols;
  }

  static Matrix col2im(const Matrix& d_cols, int n, int hh, int ww, int ch) {
    Matrix d_img = Matrix::Zero(n, static_cast<Eigen::Index>(ch) * hh * ww);
    for (int s = 0; s < n; ++s)
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x) {
          const Eigen::Index row = (static_cast<Eigen::Index>(s) * hh + y) * ww + x;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= hh || xx < 0 || xx >= ww) continue;
              const int tap = (dy + 1) * 3 + (dx + 1);
              for (int c = 0; c < ch; ++c)
                d_img(s, (c * hh + yy) * ww + xx) += d_cols(row, tap * ch + c);
            }
        }
    return d_img;
  }

  // 2x2 average pooling with stride 2 on sample-major activation rows;
  // odd trailing rows/columns are dropped.
  static Matrix avgpool2(const Matrix& act, int n, int hh, int ww, int ch) {
    const int oh = hh / 2, ow = ww / 2;
    Matrix out = Matrix::Zero(n, static_cast<Eigen::Index>(ch) * oh * ow);
    for (int s = 0; s < n; ++s)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          for (int c = 0; c < ch; ++c) {
            double sum = 0.0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const Eigen::Index row =
                    (static_cast<Eigen::Index>(s) * hh + 2 * y + dy) * ww + 2 * x + dx;
                sum += act(row, c);
              }
            out(s, (c * oh + y) * ow + x) = 0.25 * sum;
          }
    return out;
  }

  static Matrix avgpool2_backward(const Matrix& d_out, int n, int hh, int ww, int ch) {
    const int oh = hh / 2, ow = ww / 2;
    Matrix d_act = Matrix::Zero(static_cast<Eigen::Index>(n) * hh * ww, ch);
    for (int s = 0; s < n; ++s)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          for (int c = 0; c < ch; ++c) {
            const double g = 0.25 * d_out(s, (c * oh + y) * ow + x);
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const Eigen::Index row =
                    (static_cast<Eigen::Index>(s) * hh + 2 * y + dy) * ww + 2 * x + dx;
                d_act(row, c) += g;
              }
          }
    return d_act;
  }

  static Matrix reshape_to_rows(const Matrix& m, int n, int width) {
    Matrix out(n, width);
    require(m.size() == static_cast<Eigen::Index>(n) * width, "ConvBackbone: reshape mismatch");
    // m is already sample-major (n rows); this is a plain copy today but
    // keeps the layout contract in one place.
    for (int s = 0; s < n; ++s) out.row(s) = m.row(s);
    return out;
  }

  int h_, w_, c_;
  int feature_dim_;
  int flat_dim_ = 0;
  std::vector<int> block_channels_;
  std::vector<Matrix> kernels_;      // out_ch x (9*in_ch)
  std::vector<Matrix> kernel_bias_;  // 1 x out_ch
  Matrix proj_;                      // feature_dim x flat_dim
  Matrix proj_bias_;                 // 1 x feature_dim
};

/// Rebuilds a backbone of the right architecture (freshly initialized
/// parameters) from a manifest config line.
inline std::unique_ptr<FeatureExtractor> make_backbone_from_config(const std::string& line) {
  std::istringstream is(line);
  std::string kind;
  is >> kind;
  if (kind == "mlp") {
    std::vector<int> dims;
    for (int d; is >> d;) dims.push_back(d);
    Rng rng(0);
    return std::make_unique<MlpBackbone>(dims, rng);
  }
  if (kind == "conv") {
    int h = 0, w = 0, c = 0, fd = 0;
    is >> h >> w >> c >> fd;
    std::vector<int> blocks;
    for (int d; is >> d;) blocks.push_back(d);
    Rng rng(0);
    return std::make_unique<ConvBackbone>(h, w, c, rng, blocks, fd);
  }
  throw std::invalid_argument("make_backbone_from_config: unknown kind '" + kind + "'");
}

/// Factory for the desk-scale backbones. "mlp" treats inputs as flat
/// vectors; "conv" expects square single-channel images.
inline std::unique_ptr<FeatureExtractor> make_backbone(const std::string& kind, int input_dim,
                                                       Rng& rng) {
  if (kind == "mlp") return MlpBackbone::make_default(input_dim, rng);
  if (kind == "conv") {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(input_dim))));
    require(side * side == input_dim,
            "make_backbone: conv backbone needs a square single-channel input");
    return std::make_unique<ConvBackbone>(side, side, 1, rng);
  }
  throw std::invalid_argument("make_backbone: unknown kind '" + kind + "'");
}

}  // namespace rcd
