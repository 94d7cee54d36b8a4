#pragma once

// Edge-aware attention: patch tokens, a Canny edge detector, per-token edge
// embeddings, and the attention kernel with its analytic gradients.

#include <raycal/core.hpp>
#include <raycal/image.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

namespace raycal {

/// Stack of N single-channel H x W images.
struct Volume {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Volume() = default;
  Volume(int n_, int h_, int w_, double fill = 0.0)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_, fill) {
    if (n_ <= 0 || h_ <= 0 || w_ <= 0) throw ParameterError("volume dimensions must be positive");
  }

  double& at(int k, int y, int x) { return data[(static_cast<std::size_t>(k) * h + y) * w + x]; }
  double at(int k, int y, int x) const { return data[(static_cast<std::size_t>(k) * h + y) * w + x]; }
};

/// L tokens of width dim, produced from an (n, h, w) volume with patch size p.
struct TokenGrid {
  int n = 0;
  int h = 0;
  int w = 0;
  int p = 0;
  Eigen::MatrixXd values;  // L x dim

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

/// Non-overlapping p x p blocks flattened row-major. Tokens are ordered by
/// image, then row-major over patches.
inline TokenGrid patchify(const Volume& images, int p) {
  if (p <= 0 || images.h % p != 0 || images.w % p != 0)
    throw ParameterError("patchify: image size " + std::to_string(images.h) + "x" + std::to_string(images.w) +
                         " is not divisible by patch size " + std::to_string(p));
  const int ph = images.h / p;
  const int pw = images.w / p;
  TokenGrid out{images.n, images.h, images.w, p, Eigen::MatrixXd(static_cast<Eigen::Index>(images.n) * ph * pw, p * p)};
  Eigen::Index token = 0;
  for (int k = 0; k < images.n; ++k)
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px, ++token)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) out.values(token, y * p + x) = images.at(k, py * p + y, px * p + x);
  return out;
}

inline Volume unpatchify(const TokenGrid& tokens) {
  const int p = tokens.p;
  Volume out(tokens.n, tokens.h, tokens.w);
  const int ph = tokens.h / p;
  const int pw = tokens.w / p;
  if (tokens.length() != static_cast<Eigen::Index>(tokens.n) * ph * pw || tokens.dim() != p * p)
    throw ParameterError("unpatchify: token grid does not match its declared shape");
  Eigen::Index token = 0;
  for (int k = 0; k < tokens.n; ++k)
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px, ++token)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) out.at(k, py * p + y, px * p + x) = tokens.values(token, y * p + x);
  return out;
}

// ---------------------------------------------------------------------------
// Canny edge detector
// ---------------------------------------------------------------------------

struct CannyOptions {
  double sigma = 1.4;
  int kernel_size = 5;
};

namespace detail {

inline std::vector<double> convolve_replicate(const std::vector<double>& src, int w, int h,
                                              const std::vector<double>& kernel, int ksize) {
  std::vector<double> out(src.size(), 0.0);
  const int r = ksize / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky)
        for (int kx = -r; kx <= r; ++kx) {
          const int sx = std::clamp(x + kx, 0, w - 1);
          const int sy = std::clamp(y + ky, 0, h - 1);
          acc += kernel[static_cast<std::size_t>((ky + r) * ksize + (kx + r))] * src[static_cast<std::size_t>(sy) * w + sx];
        }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Binary edge map (values 0 / 1) of channel 0: Gaussian blur, Sobel
/// gradients, non-maximum suppression along the interpolated gradient
/// direction, then double-threshold hysteresis on the L2 gradient magnitude.
inline Image edge_map(const Image& image, double low, double high, const CannyOptions& options = {}) {
  if (!(low >= 0.0) || !(low <= high)) throw ParameterError("edge_map: need 0 <= low <= high");
  if (options.kernel_size < 1 || options.kernel_size % 2 == 0) throw ParameterError("edge_map: kernel size must be odd");
  const int w = image.width;
  const int h = image.height;
  std::vector<double> gray(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) gray[static_cast<std::size_t>(y) * w + x] = image.at(x, y, 0);

  const int ks = options.kernel_size;
  std::vector<double> gauss(static_cast<std::size_t>(ks) * ks);
  double total = 0.0;
  for (int y = 0; y < ks; ++y)
    for (int x = 0; x < ks; ++x) {
      const double dx = x - ks / 2;
      const double dy = y - ks / 2;
      total += gauss[static_cast<std::size_t>(y * ks + x)] = std::exp(-(dx * dx + dy * dy) / (2.0 * options.sigma * options.sigma));
    }
  for (double& g : gauss) g /= total;
  const auto blurred = detail::convolve_replicate(gray, w, h, gauss, ks);
  const auto gx = detail::convolve_replicate(blurred, w, h, {-1, 0, 1, -2, 0, 2, -1, 0, 1}, 3);
  const auto gy = detail::convolve_replicate(blurred, w, h, {-1, -2, -1, 0, 0, 0, 1, 2, 1}, 3);

  std::vector<double> mag(gray.size());
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(gx[k], gy[k]);
  auto m = [&](int x, int y) { return mag[static_cast<std::size_t>(y) * w + x]; };
  auto sample_mag = [&](double fx, double fy) {
    fx = std::clamp(fx, 0.0, w - 1.0);
    fy = std::clamp(fy, 0.0, h - 1.0);
    const int x0 = std::min(static_cast<int>(fx), w - 2);
    const int y0 = std::min(static_cast<int>(fy), h - 2);
    const double a = fx - x0;
    const double b = fy - y0;
    return (1.0 - b) * ((1.0 - a) * m(x0, y0) + a * m(x0 + 1, y0)) + b * ((1.0 - a) * m(x0, y0 + 1) + a * m(x0 + 1, y0 + 1));
  };

  // 0 = none, 1 = weak, 2 = strong
  std::vector<std::uint8_t> cls(gray.size(), 0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const double v = m(x, y);
      if (!(v > 0.0) || v < low) continue;
      const std::size_t k = static_cast<std::size_t>(y) * w + x;
      const double ux = gx[k] / v;
      const double uy = gy[k] / v;
      // magnitudes one pixel ahead / behind along the gradient
      const double ahead = sample_mag(x + ux, y + uy);
      const double behind = sample_mag(x - ux, y - uy);
      // strict on one side, inclusive on the other: plateaus keep exactly one pixel
      if (v > behind && v >= ahead) cls[k] = v >= high ? 2 : 1;
    }

  Image out(w, h, 1, 0.0);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (cls[static_cast<std::size_t>(y) * w + x] == 2) {
        out.at(x, y) = 1.0;
        queue.emplace_back(x, y);
      }
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        if (cls[static_cast<std::size_t>(ny) * w + nx] == 1 && out.at(nx, ny) == 0.0) {
          out.at(nx, ny) = 1.0;
          queue.emplace_back(nx, ny);
        }
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edge embedding
// ---------------------------------------------------------------------------

/// Per-token scalar e_i.
struct EdgeEmbedding {
  Eigen::VectorXd e;
};

/// Per-patch edge density mapped through scale * density + bias.
inline EdgeEmbedding edge_embedding(const Volume& edge_maps, int p, double scale = 1.0, double bias = 0.0) {
  const TokenGrid tokens = patchify(edge_maps, p);
  return {(tokens.values.rowwise().mean().array() * scale + bias).matrix()};
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

namespace detail {

inline void check_attention_shapes(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                                   int heads) {
  if (heads < 1) throw ParameterError("attention: heads must be positive");
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols())
    throw ParameterError("attention: Q, K, V must share shape L x d");
  if (q.cols() % heads != 0)
    throw ParameterError("attention: width " + std::to_string(q.cols()) + " not divisible by " +
                         std::to_string(heads) + " heads");
}

inline void softmax_rows(Eigen::MatrixXd& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace detail

/// Multi-head scaled dot-product attention without edge guidance.
inline Eigen::MatrixXd scaled_dot_product_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                                    const Eigen::MatrixXd& v, int heads) {
  detail::check_attention_shapes(q, k, v, heads);
  const Eigen::Index hw = q.cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hw));
  Eigen::MatrixXd out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    Eigen::MatrixXd scores = q.middleCols(h * hw, hw) * k.middleCols(h * hw, hw).transpose();
    scores *= inv_scale;
    detail::softmax_rows(scores);
    out.middleCols(h * hw, hw) = scores * v.middleCols(h * hw, hw);
  }
  return out;
}

/// Softmax((Q K^T + 1 e^T) / sqrt(d / heads)) V per head, heads concatenated.
/// e_j biases every query toward key token j; a constant shift of e adds the
/// same amount to a whole score row and cancels in the softmax.
inline Eigen::MatrixXd edge_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                                      const EdgeEmbedding& edges, int heads) {
  detail::check_attention_shapes(q, k, v, heads);
  if (edges.e.size() != q.rows()) throw ParameterError("edge_attention: embedding length differs from token count");
  const Eigen::Index hw = q.cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hw));
  const Eigen::MatrixXd bias = Eigen::VectorXd::Ones(q.rows()) * edges.e.transpose();
  Eigen::MatrixXd out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    Eigen::MatrixXd scores = q.middleCols(h * hw, hw) * k.middleCols(h * hw, hw).transpose();
    scores += bias;
    scores *= inv_scale;
    detail::softmax_rows(scores);
    out.middleCols(h * hw, hw) = scores * v.middleCols(h * hw, hw);
  }
  return out;
}

struct AttentionGradients {
  Eigen::MatrixXd dq;
  Eigen::MatrixXd dk;
  Eigen::MatrixXd dv;
  Eigen::VectorXd de;
};

inline AttentionGradients edge_attention_grad(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                              const Eigen::MatrixXd& v, const EdgeEmbedding& edges,
                                              const Eigen::MatrixXd& upstream, int heads) {
  detail::check_attention_shapes(q, k, v, heads);
  if (edges.e.size() != q.rows()) throw ParameterError("edge_attention_grad: embedding length differs from token count");
  if (upstream.rows() != q.rows() || upstream.cols() != q.cols())
    throw ParameterError("edge_attention_grad: upstream shape differs from output shape");
  const Eigen::Index hw = q.cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hw));
  const Eigen::MatrixXd bias = Eigen::VectorXd::Ones(q.rows()) * edges.e.transpose();

  AttentionGradients g{Eigen::MatrixXd::Zero(q.rows(), q.cols()), Eigen::MatrixXd::Zero(k.rows(), k.cols()),
                       Eigen::MatrixXd::Zero(v.rows(), v.cols()), Eigen::VectorXd::Zero(q.rows())};
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * hw, hw);
    const auto kh = k.middleCols(h * hw, hw);
    const auto vh = v.middleCols(h * hw, hw);
    const auto dout = upstream.middleCols(h * hw, hw);
    Eigen::MatrixXd probs = qh * kh.transpose();
    probs += bias;
    probs *= inv_scale;
    detail::softmax_rows(probs);

    g.dv.middleCols(h * hw, hw) = probs.transpose() * dout;
    const Eigen::MatrixXd dprobs = dout * vh.transpose();
    const Eigen::VectorXd row_dot = (dprobs.array() * probs.array()).rowwise().sum();
    // gradient w.r.t. the unscaled scores Q K^T + 1 e^T
    const Eigen::MatrixXd dz = (probs.array() * (dprobs.colwise() - row_dot).array()).matrix() * inv_scale;
    g.dq.middleCols(h * hw, hw) = dz * kh;
    g.dk.middleCols(h * hw, hw) = dz.transpose() * qh;
    g.de += dz.colwise().sum().transpose();
  }
  return g;
}

}  // namespace raycal
