#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cgns/attention.hpp"
#include "cgns/data.hpp"
#include "cgns/layers.hpp"
#include "cgns/tensor.hpp"

namespace cgns {

/// Architecture knobs for the condition-embedding extractor. Widths are
/// fixed per run; the context branch can be disabled entirely, in which case
/// no image-path parameters are created.
struct FeatureConfig {
  int T_h = 8;
  int max_agents = 6;
  int image_size = 64;
  bool use_context = true;
  int traj_gru_width = 128;
  int context_gru_width = 128;
  int embed_width = 128;
  int mask_components = 2;  // Gaussian mixture components in the image mask
  int mask_fc_width = 64;

  void validate() const {
    if (T_h < 1 || max_agents < 1) throw std::invalid_argument("feature config: empty window");
    if (traj_gru_width < 1 || embed_width < 1) throw std::invalid_argument("feature config: zero width");
    if (use_context) {
      if (image_size % 8 != 0 || image_size < 8)
        throw std::invalid_argument("feature config: image size must be a positive multiple of 8");
      if (mask_components < 1) throw std::invalid_argument("feature config: need >= 1 mask component");
    }
  }
};

/// Extracted condition embedding plus the attention by-products worth
/// inspecting or exporting.
struct ConditionEmbedding {
  Tensor embedding;   // (1, embed_width)
  Tensor block_mask;  // (T_h, max_agents), [0,1]
  Tensor image_mask;  // (H, W) when the context branch ran, else empty
  bool context_used = false;
};

/// Fuses interaction-aware trajectory features with context-image features
/// into a single fixed-width embedding.
///
/// Trajectory branch: block attention over the (T_h, 2N) matrix, then a GRU
/// over the masked rows. Context branch: a small conv net on the most recent
/// frame predicts Gaussian-mixture mask parameters; the mask multiplies every
/// frame; masked frames run through a three-layer conv base (8->16->16,
/// 3x3 kernels, stride-2 pooling) and a second GRU. The two final hidden
/// states are concatenated and passed through two dense layers.
struct FeatureExtractor {
  FeatureConfig cfg;
  BlockAttention block_attn;
  GruCell gru_traj;

  // context branch (only populated when cfg.use_context)
  ConvStack mask_conv;
  DenseStack mask_fc;
  Dense mask_head;
  ConvStack base_conv;
  GruCell gru_ctx;
  int frame_feat_width = 0;

  Dense fuse_fc2;
  Dense fuse_fc3;

  FeatureExtractor() = default;

  FeatureExtractor(ParamRegistry& reg, const std::string& prefix, const FeatureConfig& config, Rng& rng)
      : cfg(config) {
    cfg.validate();
    block_attn = BlockAttention(reg, prefix + "block", rng);
    gru_traj = GruCell(reg, prefix + "gru_traj", 2 * cfg.max_agents, cfg.traj_gru_width, rng);

    int fuse_in = cfg.traj_gru_width;
    if (cfg.use_context) {
      const int s = cfg.image_size;
      mask_conv.pool = 2;
      const int mask_ch[4] = {1, 4, 8, 8};
      for (int i = 0; i < 3; ++i)
        mask_conv.layers.emplace_back(reg, prefix + "mask_conv" + std::to_string(i), mask_ch[i],
                                      mask_ch[i + 1], 3, 1, 1, Activation::Relu, rng);
      const int mask_flat = mask_ch[3] * (s / 8) * (s / 8);
      mask_fc = DenseStack(reg, prefix + "mask_fc", mask_flat, {cfg.mask_fc_width, cfg.mask_fc_width},
                           rng, Activation::Relu, Activation::Relu);
      mask_head = Dense(reg, prefix + "mask_head", cfg.mask_fc_width, 6 * cfg.mask_components,
                        Activation::None, rng);

      base_conv.pool = 2;
      const int base_ch[4] = {1, 8, 16, 16};
      for (int i = 0; i < 3; ++i)
        base_conv.layers.emplace_back(reg, prefix + "base_conv" + std::to_string(i), base_ch[i],
                                      base_ch[i + 1], 3, 1, 1, Activation::Relu, rng);
      frame_feat_width = base_ch[3] * (s / 8) * (s / 8);
      gru_ctx = GruCell(reg, prefix + "gru_ctx", frame_feat_width, cfg.context_gru_width, rng);
      fuse_in += cfg.context_gru_width;
    }
    fuse_fc2 = Dense(reg, prefix + "fuse_fc2", fuse_in, cfg.embed_width, Activation::Relu, rng);
    fuse_fc3 = Dense(reg, prefix + "fuse_fc3", cfg.embed_width, cfg.embed_width, Activation::None, rng);
  }

  /// Gaussian mixture mask parameters predicted from one (H, W) frame.
  /// Zero parameters give a centered isotropic blob with sigma = size/4.
  GaussianMaskParams mask_params(const Tensor& frame) const {
    const int M = cfg.mask_components;
    const int s = cfg.image_size;
    Tensor h = mask_conv.forward(reshape(frame, {1, s, s}));
    h = mask_fc.forward(reshape(h, {1, static_cast<int>(h.numel())}));
    Tensor raw = mask_head.forward(h);  // (1, 6M)
    GaussianMaskParams p;
    p.weights = reshape(softmax(slice(raw, 1, 0, M)), {M});
    p.means = mul_scalar(sigmoid(reshape(slice(raw, 1, M, 2 * M), {M, 2})),
                         static_cast<double>(s - 1));
    const double log_sigma0 = std::log(s / 4.0);
    p.log_sx = add_scalar(reshape(slice(raw, 1, 3 * M, M), {M}), log_sigma0);
    p.log_sy = add_scalar(reshape(slice(raw, 1, 4 * M, M), {M}), log_sigma0);
    p.corr = mul_scalar(tanh_t(reshape(slice(raw, 1, 5 * M, M), {M})), 0.95);
    return p;
  }

  struct TrajResult {
    Tensor features;  // (1, traj_gru_width)
    Tensor mask;      // (T_h, max_agents)
  };

  /// Block attention followed by a GRU over the T_h masked rows; the final
  /// hidden state is the trajectory feature.
  TrajResult extract_trajectory_features(const Tensor& traj) const {
    if (traj.shape() != Shape{cfg.T_h, 2 * cfg.max_agents})
      throw std::invalid_argument("trajectory features: got " + shape_str(traj.shape()) + ", expected (" +
                                  std::to_string(cfg.T_h) + ", " + std::to_string(2 * cfg.max_agents) + ")");
    auto attn = block_attn.forward(traj);
    Tensor h = Tensor::zeros({1, cfg.traj_gru_width});
    for (int t = 0; t < cfg.T_h; ++t)
      h = gru_traj.step(reshape(slice(attn.masked, 0, t, 1), {1, 2 * cfg.max_agents}), h);
    return {h, attn.compact};
  }

  struct ContextResult {
    Tensor features;  // (1, context_gru_width)
    Tensor mask;      // (H, W)
  };

  /// Masks every frame with the predicted Gaussian mixture, runs each masked
  /// frame through the conv base, and reduces over time with a GRU.
  ContextResult extract_context_features(const std::vector<Tensor>& frames) const {
    if (!cfg.use_context) throw std::logic_error("context features requested with the branch disabled");
    if (frames.empty()) throw std::invalid_argument("context features: empty frame sequence");
    const int s = cfg.image_size;
    for (const auto& f : frames)
      if (f.shape() != Shape{s, s})
        throw std::invalid_argument("context features: frame " + shape_str(f.shape()) + ", expected (" +
                                    std::to_string(s) + ", " + std::to_string(s) + ")");
    Tensor mask = gaussian_mask(mask_params(frames.back()), s, s);
    auto masked = apply_image_mask(frames, mask);
    Tensor h = Tensor::zeros({1, cfg.context_gru_width});
    for (const auto& frame : masked) {
      Tensor feat = base_conv.forward(reshape(frame, {1, s, s}));
      h = gru_ctx.step(reshape(feat, {1, frame_feat_width}), h);
    }
    return {h, mask};
  }

  /// Concatenation of the branch features followed by the two fusion layers.
  Tensor fuse(const Tensor& traj_feat, const Tensor* ctx_feat) const {
    Tensor joined = traj_feat;
    if (cfg.use_context) {
      if (!ctx_feat) throw std::invalid_argument("fuse: context branch enabled but no context features");
      joined = concat({traj_feat, *ctx_feat}, 1);
    } else if (ctx_feat) {
      throw std::invalid_argument("fuse: context features supplied with the branch disabled");
    }
    return fuse_fc3.forward(fuse_fc2.forward(joined));
  }

  /// Full pipeline over one window's observed trajectory matrix and frames.
  ConditionEmbedding extract(const Tensor& traj, const std::vector<Tensor>& frames) const {
    ConditionEmbedding out;
    auto tr = extract_trajectory_features(traj);
    out.block_mask = tr.mask;
    if (cfg.use_context) {
      auto cx = extract_context_features(frames);
      out.image_mask = cx.mask;
      out.context_used = true;
      out.embedding = fuse(tr.features, &cx.features);
    } else {
      out.embedding = fuse(tr.features, nullptr);
    }
    return out;
  }
};

/// Observed history of a window as the (T_h, 2N) matrix consumed by the
/// extractor: columns 2i, 2i+1 are slot i's x and y, invalid slots zero.
inline Tensor window_trajectory_matrix(const TrajectoryWindow& w) {
  std::vector<double> vals(static_cast<std::size_t>(w.T_h) * 2 * w.max_agents, 0.0);
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    for (int t = 0; t < w.T_h; ++t) {
      vals[static_cast<std::size_t>(t) * 2 * w.max_agents + 2 * a] = w.obs[a][t][0];
      vals[static_cast<std::size_t>(t) * 2 * w.max_agents + 2 * a + 1] = w.obs[a][t][1];
    }
  }
  return Tensor::from({w.T_h, 2 * w.max_agents}, std::move(vals));
}

/// A window's rasters as (H, W) tensors; empty when no rasters were built.
inline std::vector<Tensor> window_frames(const TrajectoryWindow& w) {
  std::vector<Tensor> frames;
  frames.reserve(w.rasters.size());
  for (const auto& grid : w.rasters)
    frames.push_back(Tensor::from({w.raster_size, w.raster_size}, std::vector<double>(grid)));
  return frames;
}

}  // namespace cgns
