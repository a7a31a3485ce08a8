#include "unidd/features.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace unidd::features {

namespace {

void check_config(const NetConfig& cfg) {
  if (cfg.widths.size() < 2) {
    throw InvalidConfig("net config: need an input width and at least one layer");
  }
  for (Index w : cfg.widths) {
    if (w <= 0) throw InvalidConfig("net config: widths must be positive");
  }
  if (cfg.mode == Mode::Spatial) {
    if (cfg.height != cfg.width || (cfg.height != 4 && cfg.height != 8)) {
      throw InvalidConfig("net config: spatial mode requires h = w in {4, 8}");
    }
  } else if (cfg.height != 1 || cfg.width != 1) {
    throw InvalidConfig("net config: flat mode requires h = w = 1");
  }
}

void check_one_hot(const Matrix& labels) {
  for (Index i = 0; i < labels.rows(); ++i) {
    int ones = 0;
    for (Index j = 0; j < labels.cols(); ++j) {
      const double v = labels(i, j);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw InvalidConfig("labels: entries must be 0 or 1");
      }
    }
    if (ones != 1) throw InvalidConfig("labels: each row must be one-hot");
  }
}

}  // namespace

FeatureNet::FeatureNet(NetConfig cfg, std::vector<FixedLayer> layers,
                       std::uint64_t seed)
    : cfg_(std::move(cfg)), layers_(std::move(layers)), seed_(seed) {
  check_config(cfg_);
  if (static_cast<Index>(layers_.size()) != cfg_.num_layers()) {
    throw InvalidConfig("feature net: layer count does not match config");
  }
  for (Index l = 0; l < cfg_.num_layers(); ++l) {
    const Index fan_in = cfg_.mode == Mode::Spatial ? cfg_.widths[l] * 9
                                                    : cfg_.widths[l];
    if (layers_[l].weight.rows() != fan_in ||
        layers_[l].weight.cols() != cfg_.widths[l + 1] ||
        layers_[l].bias.size() != cfg_.widths[l + 1]) {
      throw InvalidConfig("feature net: layer shape does not match config");
    }
  }
}

FeatureNet build_net(const NetConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  Rng rng = Rng::stream(seed, "net");
  std::vector<FixedLayer> layers;
  layers.reserve(cfg.widths.size() - 1);
  for (Index l = 0; l + 1 < static_cast<Index>(cfg.widths.size()); ++l) {
    const Index kernel = cfg.mode == Mode::Spatial ? 9 : 1;
    const Index rows = cfg.widths[l] * kernel;
    const Index cols = cfg.widths[l + 1];
    const double fan_in = static_cast<double>(rows);
    const double fan_out = static_cast<double>(cols * kernel);
    const double s = std::sqrt(6.0 / (fan_in + fan_out));

    FixedLayer layer;
    layer.weight.resize(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) layer.weight(i, j) = rng.uniform(-s, s);
    layer.bias.resize(cols);
    for (Index j = 0; j < cols; ++j) layer.bias(j) = rng.uniform(-s, s);
    layers.push_back(std::move(layer));
  }
  return FeatureNet(cfg, std::move(layers), seed);
}

Matrix im2col3x3(const Matrix& data, Index channels, Index height,
                 Index width) {
  const Index n = data.rows();
  const Index hw = height * width;
  Matrix cols = Matrix::Zero(n * hw, channels * 9);
  for (Index i = 0; i < n; ++i) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        const Index row = i * hw + y * width + x;
        for (Index ch = 0; ch < channels; ++ch) {
          for (Index ky = 0; ky < 3; ++ky) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= height) continue;
            for (Index kx = 0; kx < 3; ++kx) {
              const Index sx = x + kx - 1;
              if (sx < 0 || sx >= width) continue;
              cols(row, ch * 9 + ky * 3 + kx) =
                  data(i, ch * hw + sy * width + sx);
            }
          }
        }
      }
    }
  }
  return cols;
}

Matrix col2im3x3(const Matrix& cols, Index samples, Index channels,
                 Index height, Index width) {
  const Index hw = height * width;
  if (cols.rows() != samples * hw || cols.cols() != channels * 9) {
    throw ShapeMismatch("col2im3x3: column matrix shape mismatch");
  }
  Matrix data = Matrix::Zero(samples, channels * hw);
  for (Index i = 0; i < samples; ++i) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        const Index row = i * hw + y * width + x;
        for (Index ch = 0; ch < channels; ++ch) {
          for (Index ky = 0; ky < 3; ++ky) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= height) continue;
            for (Index kx = 0; kx < 3; ++kx) {
              const Index sx = x + kx - 1;
              if (sx < 0 || sx >= width) continue;
              data(i, ch * hw + sy * width + sx) +=
                  cols(row, ch * 9 + ky * 3 + kx);
            }
          }
        }
      }
    }
  }
  return data;
}

std::vector<FeatureMap> forward(const FeatureNet& net, const Matrix& inputs) {
  const NetConfig& cfg = net.config();
  if (inputs.cols() != net.input_width()) {
    std::ostringstream os;
    os << "forward: input width " << inputs.cols() << " does not match net "
       << net.input_width();
    throw ShapeMismatch(os.str());
  }
  const Index n = inputs.rows();

  std::vector<FeatureMap> maps;
  maps.reserve(net.num_layers());
  Matrix cur = inputs;  // tensor layout, n x (c * h * w)
  for (Index l = 0; l < net.num_layers(); ++l) {
    const FixedLayer& layer = net.layers()[static_cast<std::size_t>(l)];
    const Index c_out = cfg.widths[l + 1];
    Matrix act;
    if (cfg.mode == Mode::Flat) {
      act = ((cur * layer.weight).rowwise() + layer.bias.transpose())
                .array()
                .tanh()
                .matrix();
    } else {
      const Matrix cols = im2col3x3(cur, cfg.widths[l], cfg.height, cfg.width);
      const Matrix pre =
          (cols * layer.weight).rowwise() + layer.bias.transpose();
      const Matrix xhat = pre.array().tanh().matrix();  // (n*hw) x c_out
      act = unreshape_channels(xhat, n, c_out, cfg.height, cfg.width).data;
    }
    if (!act.allFinite()) {
      throw NonFiniteActivation("forward: non-finite activation at layer " +
                                std::to_string(l + 1));
    }
    FeatureMap f;
    f.data = std::move(act);
    f.channels = c_out;
    f.height = cfg.mode == Mode::Spatial ? cfg.height : 1;
    f.width = cfg.mode == Mode::Spatial ? cfg.width : 1;
    f.layer_index = static_cast<int>(l) + 1;
    maps.push_back(std::move(f));
    cur = maps.back().data;
  }
  return maps;
}

Matrix reshape_channels(const FeatureMap& f) {
  const Index n = f.samples();
  const Index hw = f.height * f.width;
  Matrix xhat(n * hw, f.channels);
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < hw; ++p)
      for (Index ch = 0; ch < f.channels; ++ch)
        xhat(i * hw + p, ch) = f.data(i, ch * hw + p);
  return xhat;
}

FeatureMap unreshape_channels(const Matrix& xhat, Index samples, Index channels,
                              Index height, Index width, int layer_index) {
  const Index hw = height * width;
  if (xhat.rows() != samples * hw || xhat.cols() != channels) {
    throw ShapeMismatch("unreshape_channels: matrix shape mismatch");
  }
  FeatureMap f;
  f.data.resize(samples, channels * hw);
  f.channels = channels;
  f.height = height;
  f.width = width;
  f.layer_index = layer_index;
  for (Index i = 0; i < samples; ++i)
    for (Index p = 0; p < hw; ++p)
      for (Index ch = 0; ch < channels; ++ch)
        f.data(i, ch * hw + p) = xhat(i * hw + p, ch);
  return f;
}

Matrix spatial_average(const FeatureMap& f) {
  const Index n = f.samples();
  const Index hw = f.height * f.width;
  Matrix avg = Matrix::Zero(n, f.channels);
  for (Index ch = 0; ch < f.channels; ++ch)
    avg.col(ch) =
        f.data.middleCols(ch * hw, hw).rowwise().mean();
  return avg;
}

CorrStats corr_stats(const FeatureMap& f, const Matrix& labels) {
  const Index n = f.samples();
  if (n < 2) throw DegenerateBatch("corr_stats: need at least 2 samples");
  if (labels.rows() != n) {
    throw ShapeMismatch("corr_stats: label row count does not match samples");
  }
  check_one_hot(labels);

  const Matrix xhat = reshape_channels(f);
  const double nhw = static_cast<double>(xhat.rows());
  const Eigen::RowVectorXd mu = xhat.colwise().mean();
  const Matrix centered = xhat.rowwise() - mu;
  Matrix psi = centered.transpose() * centered / nhw;
  psi = 0.5 * (psi + psi.transpose());  // kill rounding asymmetry

  const Matrix avg = spatial_average(f);
  const Matrix phi = avg.transpose() * labels / static_cast<double>(n);
  return CorrStats{spectral::PsdMatrix(std::move(psi)), phi};
}

EmuState emu_init(Index d, Index c) {
  return EmuState{Matrix::Zero(d, d), Matrix::Zero(d, c), 0};
}

EmuState emu_update(const EmuState& state, const Matrix& psi,
                    const Matrix& phi) {
  if (state.psi_s.rows() != psi.rows() || state.psi_s.cols() != psi.cols() ||
      state.phi_s.rows() != phi.rows() || state.phi_s.cols() != phi.cols()) {
    throw ShapeMismatch("emu_update: batch statistics shape mismatch");
  }
  EmuState next;
  next.batch_count = state.batch_count + 1;
  const double w = 1.0 / static_cast<double>(next.batch_count);
  next.psi_s = w * psi + (1.0 - w) * state.psi_s;
  next.phi_s = w * phi + (1.0 - w) * state.phi_s;
  return next;
}

EmuState emu_update(const EmuState& state, const CorrStats& batch) {
  return emu_update(state, batch.psi.matrix(), batch.phi);
}

}  // namespace unidd::features
