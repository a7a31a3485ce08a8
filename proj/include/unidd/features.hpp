#pragma once

#include <cstdint>
#include <vector>

#include "unidd/errors.hpp"
#include "unidd/rng.hpp"
#include "unidd/spectral.hpp"
#include "unidd/types.hpp"

namespace unidd::features {

enum class Mode { Flat, Spatial };

// One fixed layer: affine map followed by tanh. In spatial mode the weight is
// the im2col form of a 3x3 same-padding convolution kernel, rows ordered
// (input channel, ky, kx).
struct FixedLayer {
  Matrix weight;  // flat: d_prev x d_l; spatial: (c_prev * 9) x c_l
  Vector bias;    // d_l
};

struct NetConfig {
  // widths[0] is the input width (flat) or input channel count (spatial);
  // widths[1..] are per-layer output widths / channel counts.
  std::vector<Index> widths;
  Mode mode = Mode::Flat;
  Index height = 1;  // spatial mode: h = w in {4, 8}
  Index width = 1;

  Index num_layers() const { return static_cast<Index>(widths.size()) - 1; }
  Index input_width() const { return widths.front() * height * width; }
};

// Immutable feature extractor. Parameters are fixed at construction; identical
// (config, seed) produce bit-identical parameters.
class FeatureNet {
 public:
  FeatureNet(NetConfig cfg, std::vector<FixedLayer> layers, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  const std::vector<FixedLayer>& layers() const { return layers_; }
  std::uint64_t seed() const { return seed_; }
  Index num_layers() const { return static_cast<Index>(layers_.size()); }
  Index input_width() const { return cfg_.input_width(); }
  Index output_width() const { return cfg_.widths.back(); }

 private:
  NetConfig cfg_;
  std::vector<FixedLayer> layers_;
  std::uint64_t seed_;
};

// Activation tensor of one layer, stored row-per-sample with channel-major
// C-order columns: data(i, ch*h*w + y*w + x).
struct FeatureMap {
  Matrix data;  // n x (channels * height * width)
  Index channels = 0;
  Index height = 1;
  Index width = 1;
  int layer_index = 0;  // 1-based

  Index samples() const { return data.rows(); }
};

// Normalized per-layer correlation statistics.
struct CorrStats {
  spectral::PsdMatrix psi;  // d x d centered covariance of channel vectors
  Matrix phi;               // d x c class-mean features
};

// Running mean of per-batch statistics.
struct EmuState {
  Matrix psi_s;
  Matrix phi_s;
  int batch_count = 0;
};

// Glorot-uniform initialization: entries ~ uniform(-s, s) with
// s = sqrt(6 / (fan_in + fan_out)).
FeatureNet build_net(const NetConfig& cfg, std::uint64_t seed);

// Forward pass; returns one FeatureMap per layer.
std::vector<FeatureMap> forward(const FeatureNet& net, const Matrix& inputs);

// Tensor <-> matrix plumbing for the statistics of the correlation matrices.
// reshape_channels: row (i*h*w + p) of the result is the channel vector of
// sample i at spatial position p = y*w + x.
Matrix reshape_channels(const FeatureMap& f);
FeatureMap unreshape_channels(const Matrix& xhat, Index samples, Index channels,
                              Index height, Index width, int layer_index = 0);
Matrix spatial_average(const FeatureMap& f);

// psi = (1/nhw) (Xhat - Xbar)^T (Xhat - Xbar);  phi = (1/n) X'^T Y.
CorrStats corr_stats(const FeatureMap& f, const Matrix& labels);

EmuState emu_init(Index d, Index c);
EmuState emu_update(const EmuState& state, const CorrStats& batch);
EmuState emu_update(const EmuState& state, const Matrix& psi, const Matrix& phi);

// 3x3 stride-1 same-padding convolution plumbing. im2col3x3 maps the tensor
// matrix (n rows) to patch rows ((i*h*w + p) x (channels*9)); col2im3x3 is its
// exact adjoint (scatter-add back to the tensor layout).
Matrix im2col3x3(const Matrix& data, Index channels, Index height, Index width);
Matrix col2im3x3(const Matrix& cols, Index samples, Index channels,
                 Index height, Index width);

}  // namespace unidd::features
