#include "unidd/cfm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace unidd::cfm {

namespace {

constexpr double kNormGuard = 1e-12;  // subgradient of ||.||_F at 0 is 0
constexpr double kRcondFloor = 1e-12;

Matrix shifted_inverse(const Matrix& psi, double beta) {
  const Index d = psi.rows();
  Eigen::LDLT<Matrix> ldlt(psi + beta * Matrix::Identity(d, d));
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < kRcondFloor) {
    throw SingularSystem("cfm: shifted statistic matrix is numerically singular");
  }
  Matrix inv = ldlt.solve(Matrix::Identity(d, d));
  if (!inv.allFinite()) {
    throw SingularSystem("cfm: shifted inverse has non-finite entries");
  }
  return inv;
}

// Per-layer pieces shared between the loss and the gradient.
struct LayerTerms {
  Matrix gs;       // resolvent (or plain Psi_s for the low-pass filter)
  Matrix a_filter;  // filter-matching gap
  Matrix a_signal;  // signal-matching gap
  double n_filter = 0.0;
  double n_signal = 0.0;
};

LayerTerms layer_terms(const features::CorrStats& real,
                       const features::EmuState& synth, double beta_t,
                       MatchFilter filter) {
  LayerTerms t;
  if (filter == MatchFilter::ShiftInverse) {
    const Matrix g = shifted_inverse(real.psi.matrix(), beta_t);
    t.gs = shifted_inverse(synth.psi_s, beta_t);
    t.a_filter = g - t.gs;
    t.a_signal = g * real.phi - t.gs * synth.phi_s;
  } else {
    t.gs = synth.psi_s;
    t.a_filter = real.psi.matrix() - synth.psi_s;
    t.a_signal = real.psi.matrix() * real.phi - synth.psi_s * synth.phi_s;
  }
  t.n_filter = t.a_filter.norm();
  t.n_signal = t.a_signal.norm();
  return t;
}

void check_layers(const std::vector<features::CorrStats>& real,
                  const std::vector<features::EmuState>& synth) {
  if (real.size() != synth.size()) {
    throw ShapeMismatch("cfm: real and synthetic layer counts differ");
  }
  for (std::size_t l = 0; l < real.size(); ++l) {
    if (real[l].psi.dim() != synth[l].psi_s.rows() ||
        real[l].phi.rows() != synth[l].phi_s.rows() ||
        real[l].phi.cols() != synth[l].phi_s.cols()) {
      throw ShapeMismatch("cfm: layer statistic dimensions differ");
    }
  }
}

// Adjoint of spatial averaging: spread each sample-level row over its hw
// spatial rows of the reshaped matrix.
void add_expanded(Matrix& xhat_bar, const Matrix& sample_bar, Index hw) {
  const Index n = sample_bar.rows();
  const double inv = 1.0 / static_cast<double>(hw);
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < hw; ++p)
      xhat_bar.row(i * hw + p) += inv * sample_bar.row(i);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

}  // namespace

double beta_at(const CurriculumSchedule& schedule, int t) {
  if (schedule.total_steps < 1) {
    throw InvalidConfig("beta_at: total_steps must be positive");
  }
  if (!(schedule.beta_max >= 0.0)) {
    throw InvalidConfig("beta_at: beta_max must be non-negative");
  }
  if (t < 0 || t > schedule.total_steps) {
    throw OutOfRange("beta_at: t outside [0, T]");
  }
  const double phase = std::numbers::pi * static_cast<double>(t) /
                       static_cast<double>(schedule.total_steps);
  const double raw = schedule.beta_max * (1.0 + std::cos(phase)) / 2.0;
  return std::max(raw, std::max(0.0, schedule.beta_floor));
}

std::pair<double, double> cfm_losses(
    const std::vector<features::CorrStats>& real,
    const std::vector<features::EmuState>& synth, double beta_t,
    MatchFilter filter, bool squared) {
  check_layers(real, synth);
  double l_filter = 0.0;
  double l_signal = 0.0;
  for (std::size_t l = 0; l < real.size(); ++l) {
    const LayerTerms t = layer_terms(real[l], synth[l], beta_t, filter);
    l_filter += squared ? t.n_filter * t.n_filter : t.n_filter;
    l_signal += squared ? t.n_signal * t.n_signal : t.n_signal;
  }
  return {l_filter, l_signal};
}

double cls_loss(const Matrix& logits, const Matrix& ys) {
  if (logits.rows() != ys.rows() || logits.cols() != ys.cols()) {
    throw ShapeMismatch("cls_loss: logits and labels shapes differ");
  }
  if (!logits.allFinite()) {
    throw NonFiniteActivation("cls_loss: non-finite logits");
  }
  const Index m = logits.rows();
  double loss = 0.0;
  for (Index i = 0; i < m; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse =
        mx + std::log((logits.row(i).array() - mx).exp().sum());
    loss += lse - logits.row(i).dot(ys.row(i));
  }
  return loss / static_cast<double>(m);
}

double total_loss(double l_cls, double l_filter, double l_signal, double eta) {
  if (!(eta >= 0.0)) throw InvalidConfig("total_loss: eta must be >= 0");
  return l_cls + eta * l_filter + eta * l_signal;
}

BatchEval cfm_loss_and_grad(const features::FeatureNet& net,
                            const objectives::LinearModel& head,
                            const Matrix& hs_batch, const Matrix& ys_batch,
                            const std::vector<features::CorrStats>& real,
                            const std::vector<features::EmuState>& emu_prev,
                            double beta_t, const CfmConfig& cfg) {
  const Index m = hs_batch.rows();
  if (m < 2) throw DegenerateBatch("cfm: batch needs at least 2 samples");
  if (ys_batch.rows() != m) {
    throw ShapeMismatch("cfm: batch labels do not match inputs");
  }
  if (static_cast<Index>(real.size()) != net.num_layers() ||
      real.size() != emu_prev.size()) {
    throw ShapeMismatch("cfm: layer statistics do not match the net");
  }
  if (!(beta_t > 0.0)) throw InvalidConfig("cfm: beta_t must be positive");

  const auto& net_cfg = net.config();
  const Index hw = net_cfg.height * net_cfg.width;
  const Index L = net.num_layers();
  const auto maps = features::forward(net, hs_batch);

  // Per-layer reshaped activations, centered copies, and batch statistics.
  std::vector<Matrix> xhat(L), xc(L), psi_b(L), phi_b(L);
  std::vector<Matrix> xprime(L);
  BatchEval out;
  out.emu_after.reserve(L);
  for (Index l = 0; l < L; ++l) {
    xhat[l] = features::reshape_channels(maps[l]);
    const Eigen::RowVectorXd mu = xhat[l].colwise().mean();
    xc[l] = xhat[l].rowwise() - mu;
    const double rows = static_cast<double>(xhat[l].rows());
    psi_b[l] = xc[l].transpose() * xc[l] / rows;
    xprime[l] = features::spatial_average(maps[l]);
    phi_b[l] = xprime[l].transpose() * ys_batch / static_cast<double>(m);
    out.emu_after.push_back(
        features::emu_update(emu_prev[l], psi_b[l], phi_b[l]));
  }

  // Loss terms on the updated EMU state.
  std::vector<LayerTerms> terms(L);
  if (cfg.use_filter || cfg.use_signal) {
    for (Index l = 0; l < L; ++l) {
      terms[l] = layer_terms(real[l], out.emu_after[l], beta_t, cfg.filter);
      if (cfg.use_filter) {
        out.l_filter += cfg.squared_norms ? terms[l].n_filter * terms[l].n_filter
                                          : terms[l].n_filter;
      }
      if (cfg.use_signal) {
        out.l_signal += cfg.squared_norms ? terms[l].n_signal * terms[l].n_signal
                                          : terms[l].n_signal;
      }
    }
  }

  const Matrix logits = xprime[L - 1] * head.w;
  if (cfg.use_cls) out.l_cls = cls_loss(logits, ys_batch);
  out.l_total = total_loss(out.l_cls, out.l_filter, out.l_signal, cfg.eta);

  // ----- Backward pass, gradients kept in reshaped (nhw x d) coordinates.
  std::vector<Matrix> gbar(L);
  for (Index l = 0; l < L; ++l)
    gbar[l] = Matrix::Zero(xhat[l].rows(), xhat[l].cols());

  for (Index l = 0; l < L; ++l) {
    if (!(cfg.use_filter || cfg.use_signal) || cfg.eta == 0.0) break;
    const LayerTerms& t = terms[l];
    const double w_emu =
        1.0 / static_cast<double>(out.emu_after[l].batch_count);
    const Index d = psi_b[l].rows();
    Matrix psi_s_bar = Matrix::Zero(d, d);
    Matrix phi_s_bar = Matrix::Zero(d, phi_b[l].cols());

    if (cfg.use_filter && t.n_filter >= kNormGuard) {
      const double scale = cfg.squared_norms ? 2.0 : 1.0 / t.n_filter;
      if (cfg.filter == MatchFilter::ShiftInverse) {
        // d||G - Gs|| path through dGs = -Gs dS Gs.
        psi_s_bar += scale * (t.gs * t.a_filter * t.gs);
      } else {
        psi_s_bar -= scale * t.a_filter;
      }
    }
    if (cfg.use_signal && t.n_signal >= kNormGuard) {
      const double scale = cfg.squared_norms ? 2.0 : 1.0 / t.n_signal;
      if (cfg.filter == MatchFilter::ShiftInverse) {
        const Matrix& phi_s = out.emu_after[l].phi_s;
        psi_s_bar += scale * (t.gs * t.a_signal * phi_s.transpose() * t.gs);
        phi_s_bar -= scale * (t.gs * t.a_signal);
      } else {
        const Matrix& psi_s = out.emu_after[l].psi_s;
        const Matrix& phi_s = out.emu_after[l].phi_s;
        psi_s_bar -= scale * (t.a_signal * phi_s.transpose());
        phi_s_bar -= scale * (psi_s * t.a_signal);
      }
    }

    // EMU: current batch enters with weight 1/b; previous state is constant.
    const Matrix psi_batch_bar = cfg.eta * w_emu * psi_s_bar;
    const Matrix phi_batch_bar = cfg.eta * w_emu * phi_s_bar;

    // psi_b = (1/N) Xc^T Xc; the centering projector is a no-op on Xc * M.
    const double rows = static_cast<double>(xhat[l].rows());
    gbar[l] += (xc[l] * (psi_batch_bar + psi_batch_bar.transpose())) / rows;
    // phi_b = (1/m) X'^T Y.
    const Matrix xprime_bar =
        ys_batch * phi_batch_bar.transpose() / static_cast<double>(m);
    add_expanded(gbar[l], xprime_bar, hw);
  }

  if (cfg.use_cls) {
    const Matrix p = softmax_rows(logits);
    const Matrix dlogits = (p - ys_batch) / static_cast<double>(m);
    add_expanded(gbar[L - 1], dlogits * head.w.transpose(), hw);
  }

  // Chain through the layers.
  Matrix grad_hs;
  for (Index l = L - 1; l >= 0; --l) {
    const Matrix dpre =
        gbar[l].cwiseProduct((1.0 - xhat[l].array().square()).matrix());
    const Matrix& w = net.layers()[static_cast<std::size_t>(l)].weight;
    if (net_cfg.mode == features::Mode::Flat) {
      const Matrix dinput = dpre * w.transpose();
      if (l > 0) {
        gbar[l - 1] += dinput;
      } else {
        grad_hs = dinput;
      }
    } else {
      const Matrix dcols = dpre * w.transpose();
      const Matrix dtensor = features::col2im3x3(
          dcols, m, net_cfg.widths[l], net_cfg.height, net_cfg.width);
      if (l > 0) {
        features::FeatureMap fm;
        fm.data = dtensor;
        fm.channels = net_cfg.widths[l];
        fm.height = net_cfg.height;
        fm.width = net_cfg.width;
        gbar[l - 1] += features::reshape_channels(fm);
      } else {
        grad_hs = dtensor;  // tensor layout matches the input layout
      }
    }
  }

  if (!grad_hs.allFinite()) {
    throw NonFiniteGradient("cfm: non-finite gradient for synthetic batch");
  }
  out.grad = std::move(grad_hs);
  return out;
}

Matrix grad_synthetic(const features::FeatureNet& net,
                      const objectives::LinearModel& head,
                      const Matrix& hs_batch, const Matrix& ys_batch,
                      const std::vector<features::CorrStats>& real,
                      const std::vector<features::EmuState>& emu_prev,
                      double beta_t, const CfmConfig& cfg) {
  return cfm_loss_and_grad(net, head, hs_batch, ys_batch, real, emu_prev,
                           beta_t, cfg)
      .grad;
}

std::pair<SyntheticDataset, LossReport> distill(
    const harness::Dataset& real, const harness::SqueezeArtifact& squeeze,
    const CfmConfig& cfg, std::uint64_t seed) {
  const Index c = real.classes();
  const Index d_in = real.input_width();
  if (cfg.ipc < 1) throw ConfigError("distill: ipc must be >= 1");
  if (cfg.batch_size < 2) throw ConfigError("distill: batch size must be >= 2");
  if (cfg.iterations < 0) throw ConfigError("distill: iterations must be >= 0");
  const Index m = static_cast<Index>(cfg.ipc) * c;
  if (m % cfg.batch_size != 0) {
    std::ostringstream os;
    os << "distill: ipc*c = " << m << " not divisible by batch size "
       << cfg.batch_size;
    throw ConfigError(os.str());
  }
  if (squeeze.net.input_width() != d_in) {
    throw ConfigError("distill: squeeze artifact does not match dataset width");
  }
  if (static_cast<Index>(squeeze.real_stats.size()) !=
      squeeze.net.num_layers()) {
    throw ConfigError("distill: squeeze artifact layer stats incomplete");
  }

  // Per-class pools of real row indices, shuffled once; initialization draws
  // without replacement.
  std::vector<std::vector<Index>> pools(static_cast<std::size_t>(c));
  for (Index i = 0; i < real.samples(); ++i) {
    Index cls = 0;
    real.y.row(i).maxCoeff(&cls);
    pools[static_cast<std::size_t>(cls)].push_back(i);
  }
  Rng init_rng = Rng::stream(seed, "init");
  for (Index j = 0; j < c; ++j) {
    auto& pool = pools[static_cast<std::size_t>(j)];
    if (static_cast<int>(pool.size()) < cfg.ipc) {
      throw ConfigError("distill: class " + std::to_string(j) +
                        " has fewer real samples than ipc");
    }
    init_rng.shuffle(pool);
  }

  // Class-grouped synthetic rows: ipc rows of class 0, then class 1, ...
  SyntheticDataset synth;
  synth.seed = seed;
  synth.config_hash = squeeze.config_hash;
  synth.hs.resize(m, d_in);
  synth.ys = Matrix::Zero(m, c);
  std::vector<std::size_t> used(static_cast<std::size_t>(c), 0);
  for (Index r = 0; r < m; ++r) {
    const Index cls = r / cfg.ipc;
    auto& pool = pools[static_cast<std::size_t>(cls)];
    synth.hs.row(r) = real.h.row(pool[used[static_cast<std::size_t>(cls)]++]);
    synth.ys(r, cls) = 1.0;
  }

  // Scale-aware floor keeps the shifted inverse defined at the schedule tail.
  double stat_scale = 1.0;
  for (const auto& cs : squeeze.real_stats) {
    stat_scale = std::max(
        stat_scale, cs.psi.matrix().trace() / static_cast<double>(cs.psi.dim()));
  }
  const double floor_eff =
      std::max(cfg.schedule.beta_floor, 1e-6 * stat_scale);

  const int num_batches = static_cast<int>(m / cfg.batch_size);
  LossReport report;
  report.reserve(static_cast<std::size_t>(num_batches) * cfg.iterations);
  int global_t = 0;

  for (int b = 1; b <= num_batches; ++b) {
    const Index row0 = static_cast<Index>(b - 1) * cfg.batch_size;
    Matrix hs_b = synth.hs.middleRows(row0, cfg.batch_size);
    const Matrix ys_b = synth.ys.middleRows(row0, cfg.batch_size);

    CurriculumSchedule batch_sched{cfg.schedule.beta_max, num_batches,
                                   floor_eff};
    double beta = beta_at(batch_sched, b);

    std::vector<features::EmuState> emu;
    for (const auto& cs : squeeze.real_stats)
      emu.push_back(features::emu_init(cs.psi.dim(), cs.phi.cols()));

    Matrix adam_m = Matrix::Zero(hs_b.rows(), hs_b.cols());
    Matrix adam_v = Matrix::Zero(hs_b.rows(), hs_b.cols());
    for (int i = 1; i <= cfg.iterations; ++i) {
      if (cfg.axis == CurriculumAxis::PerIteration) {
        CurriculumSchedule it_sched{cfg.schedule.beta_max, cfg.iterations,
                                    floor_eff};
        beta = beta_at(it_sched, i);
      }
      BatchEval eval =
          cfm_loss_and_grad(squeeze.net, squeeze.head, hs_b, ys_b,
                            squeeze.real_stats, emu, beta, cfg);
      emu = std::move(eval.emu_after);
      report.push_back(LossRecord{++global_t, beta, eval.l_cls, eval.l_filter,
                                  eval.l_signal, eval.l_total});

      const auto& opt = cfg.optimizer;
      if (opt.plain_gd) {
        hs_b -= opt.lr * eval.grad;
      } else {
        adam_m = opt.beta1 * adam_m + (1.0 - opt.beta1) * eval.grad;
        adam_v = opt.beta2 * adam_v +
                 (1.0 - opt.beta2) * eval.grad.cwiseProduct(eval.grad);
        const double mc = 1.0 - std::pow(opt.beta1, i);
        const double vc = 1.0 - std::pow(opt.beta2, i);
        const Matrix mhat = adam_m / mc;
        const Matrix vhat = adam_v / vc;
        hs_b -= opt.lr *
                (mhat.array() / (vhat.array().sqrt() + opt.eps)).matrix();
      }
    }
    synth.hs.middleRows(row0, cfg.batch_size) = hs_b;
    synth.batch_betas.push_back(beta);
  }
  return {std::move(synth), std::move(report)};
}

}  // namespace unidd::cfm
