#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgns/layers.hpp"
#include "cgns/tensor.hpp"

namespace cgns {

/// Duplicates each column twice: (T,N) -> (T,2N), out[t,2i] = out[t,2i+1] = in[t,i].
inline Tensor expand_columns(const Tensor& compact) {
  if (compact.shape().size() != 2)
    throw std::invalid_argument("expand_columns: need 2-D, got " + shape_str(compact.shape()));
  const int T = compact.shape()[0], N = compact.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(T) * 2 * N);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < N; ++i) {
      const double v = compact.at(t, i);
      out[static_cast<std::size_t>(t) * 2 * N + 2 * i] = v;
      out[static_cast<std::size_t>(t) * 2 * N + 2 * i + 1] = v;
    }
  Tensor r = Tensor::from({T, 2 * N}, std::move(out));
  if (detail::track({compact})) {
    auto rn = r.node().get();
    auto cn = compact.node().get();
    detail::record(r, {compact}, [rn, cn, T, N] {
      for (int t = 0; t < T; ++t)
        for (int i = 0; i < N; ++i)
          cn->adjoint[static_cast<std::size_t>(t) * N + i] +=
              rn->adjoint[static_cast<std::size_t>(t) * 2 * N + 2 * i] +
              rn->adjoint[static_cast<std::size_t>(t) * 2 * N + 2 * i + 1];
    });
  }
  return r;
}

/// Block attention over a (T_h, 2N) trajectory matrix: one 5x5 conv kept at
/// the input size, pooled over each (x,y) column pair, squashed to [0,1].
/// Applied to observed history only, never to future trajectories.
struct BlockAttention {
  Conv2dLayer conv;

  BlockAttention() = default;
  BlockAttention(ParamRegistry& reg, const std::string& name, Rng& rng)
      : conv(reg, name + ".conv", 1, 1, 5, 2, 1, Activation::None, rng) {}

  struct Result {
    Tensor masked;   // (T_h, 2N)
    Tensor compact;  // (T_h, N)
  };

  Result forward(const Tensor& traj) const {
    if (traj.shape().size() != 2 || traj.shape()[1] % 2 != 0)
      throw std::invalid_argument("block_attention: trajectory matrix must have an even column count, got " +
                                  shape_str(traj.shape()));
    const int T = traj.shape()[0], cols = traj.shape()[1];
    Tensor img = reshape(traj, {1, T, cols});
    Tensor feat = conv.forward(img);
    Tensor pooled = avg_pool2d(feat, 1, 2);  // pool over the coordinate pair axis
    Tensor compact = sigmoid(reshape(pooled, {T, cols / 2}));
    Tensor masked = mul(traj, expand_columns(compact));
    return {masked, compact};
  }
};

/// Parameters of a Gaussian mixture over image coordinates. Covariances are
/// kept positive definite through exponentiated log-scales and a correlation
/// bounded away from +-1.
struct GaussianMaskParams {
  Tensor weights;  // (M), simplex
  Tensor means;    // (M,2), (row,col) image coordinates
  Tensor log_sx;   // (M)
  Tensor log_sy;   // (M)
  Tensor corr;     // (M), in (-1,1)

  int components() const { return weights.shape()[0]; }

  void validate() const {
    const int M = components();
    if (means.shape() != Shape{M, 2} || log_sx.shape() != Shape{M} || log_sy.shape() != Shape{M} ||
        corr.shape() != Shape{M})
      throw std::invalid_argument("gaussian mask params: inconsistent component shapes");
    double wsum = 0.0;
    for (int m = 0; m < M; ++m) {
      if (weights[m] < -1e-12) throw std::invalid_argument("gaussian mask params: negative weight");
      wsum += weights[m];
    }
    if (std::fabs(wsum - 1.0) > 1e-9)
      throw std::invalid_argument("gaussian mask params: weights sum to " + std::to_string(wsum));
    for (int m = 0; m < M; ++m) {
      const double sx = std::exp(log_sx[m]), sy = std::exp(log_sy[m]);
      const double rho = corr[m];
      // condition number of [[sx^2, rho sx sy],[rho sx sy, sy^2]]
      const double a = sx * sx, c = sy * sy, b = rho * sx * sy;
      const double tr = a + c;
      const double det = a * c - b * b;
      const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
      const double lmax = tr / 2.0 + disc, lmin = tr / 2.0 - disc;
      if (!(lmin > 0.0) || lmax / lmin > 1e8)
        throw std::invalid_argument("gaussian mask params: near-singular covariance in component " +
                                    std::to_string(m));
    }
  }
};

/// Mixture density evaluated on an HxW pixel grid, normalized by its maximum
/// so the peak value is exactly 1.
inline Tensor gaussian_mask(const GaussianMaskParams& params, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("gaussian_mask: degenerate grid");
  params.validate();
  const int M = params.components();
  const std::size_t npix = static_cast<std::size_t>(height) * width;
  std::vector<double> us(npix), vs(npix);
  for (int u = 0; u < height; ++u)
    for (int v = 0; v < width; ++v) {
      us[static_cast<std::size_t>(u) * width + v] = static_cast<double>(u);
      vs[static_cast<std::size_t>(u) * width + v] = static_cast<double>(v);
    }
  const Tensor ugrid = Tensor::from({height, width}, std::move(us));
  const Tensor vgrid = Tensor::from({height, width}, std::move(vs));
  const double two_pi = 2.0 * 3.14159265358979323846;

  Tensor raw;
  for (int m = 0; m < M; ++m) {
    Tensor w = slice(params.weights, 0, m, 1);
    Tensor mu_u = reshape(slice(params.means, 0, m, 1), {2});
    Tensor mu_v = slice(mu_u, 0, 1, 1);
    mu_u = slice(mu_u, 0, 0, 1);
    Tensor sx = exp_t(slice(params.log_sx, 0, m, 1));
    Tensor sy = exp_t(slice(params.log_sy, 0, m, 1));
    Tensor rho = slice(params.corr, 0, m, 1);
    Tensor one_m_r2 = add_scalar(neg(mul(rho, rho)), 1.0);
    Tensor du = bsub(ugrid, mu_u);
    Tensor dv = bsub(vgrid, mu_v);
    // quadratic form of the inverse covariance
    Tensor inv_a = div(Tensor::scalar(1.0), mul(mul(sx, sx), one_m_r2));
    Tensor inv_c = div(Tensor::scalar(1.0), mul(mul(sy, sy), one_m_r2));
    Tensor inv_b = neg(div(rho, mul(mul(sx, sy), one_m_r2)));
    Tensor quad = add(add(bmul(mul(du, du), inv_a), bmul(mul(dv, dv), inv_c)),
                      bmul(mul_scalar(mul(du, dv), 2.0), inv_b));
    Tensor norm = div(w, mul_scalar(mul(mul(sx, sy), sqrt_t(one_m_r2)), two_pi));
    Tensor comp = bmul(exp_t(mul_scalar(quad, -0.5)), norm);
    raw = (m == 0) ? comp : add(raw, comp);
  }
  Tensor peak = reduce_max(raw);
  return div(raw, badd(Tensor::zeros({height, width}), peak));
}

/// Per-pixel product of each frame with the attention mask.
inline std::vector<Tensor> apply_image_mask(const std::vector<Tensor>& images, const Tensor& mask) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    if (img.shape() != mask.shape())
      throw std::invalid_argument("apply_image_mask: frame " + shape_str(img.shape()) + " vs mask " +
                                  shape_str(mask.shape()));
    out.push_back(mul(img, mask));
  }
  return out;
}

/// CSV export: one row per time step for block masks, row-major grid for
/// image masks.
inline void write_mask_csv(const Tensor& mask, const std::string& path) {
  if (mask.shape().size() != 2) throw std::invalid_argument("write_mask_csv: need 2-D mask");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  const int rows = mask.shape()[0], cols = mask.shape()[1];
  out.precision(17);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out << (c ? "," : "") << mask.at(r, c);
    out << "\n";
  }
}

}  // namespace cgns
