#include "unidd/verify.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <json.hpp>

#include "unidd/cfm.hpp"
#include "unidd/features.hpp"
#include "unidd/harness.hpp"
#include "unidd/objectives.hpp"
#include "unidd/rng.hpp"
#include "unidd/spectral.hpp"

namespace unidd::verify {

namespace {

using objectives::GMode;
using objectives::LinearModel;
using objectives::TrajectoryConfig;
using spectral::FilterSpec;
using spectral::PsdMatrix;

Matrix random_matrix(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Matrix random_psd(Rng& rng, Index d, Index k) {
  const Matrix g = random_matrix(rng, k, d);
  return g.transpose() * g;
}

double rel(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

double rel(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

struct Instance {
  Matrix x, y, xs, ys;
  double alpha;
};

Instance random_instance(Rng& rng) {
  const Index n = 4 + static_cast<Index>(rng.index(61));
  const Index m = 2 + static_cast<Index>(rng.index(15));
  const Index d = 2 + static_cast<Index>(rng.index(11));
  const Index c = 1 + static_cast<Index>(rng.index(4));
  Instance inst;
  inst.x = random_matrix(rng, n, d);
  inst.y = random_matrix(rng, n, c);
  inst.xs = random_matrix(rng, m, d);
  inst.ys = random_matrix(rng, m, c);
  const double top = std::max(
      spectral::eig_psd(PsdMatrix(Matrix(inst.x.transpose() * inst.x)))
          .eigvals(0),
      spectral::eig_psd(PsdMatrix(Matrix(inst.xs.transpose() * inst.xs)))
          .eigvals(0));
  inst.alpha = 0.9 / top;
  return inst;
}

// Record `err` against `tol`, keeping the worst case.
struct Tracker {
  double worst = std::numeric_limits<double>::lowest();
  bool ok = true;
  void observe(double err, double tol) {
    worst = std::max(worst, err);
    ok = ok && err < tol;
  }
  CheckResult done(std::string name, double tol, int instances,
                   std::string note = "") const {
    return CheckResult{std::move(name), ok, worst, tol, instances,
                       std::move(note)};
  }
};

CheckResult check_gd_closed_form(int seeds) {
  Tracker t;
  int n = 0;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA100 + static_cast<std::uint64_t>(s));
    Instance inst = random_instance(rng);
    TrajectoryConfig cfg;
    cfg.alpha = inst.alpha;
    cfg.w0 = random_matrix(rng, inst.x.cols(), inst.y.cols());
    for (const int k : {1, 2, 5, 10, 20}) {
      const auto iter = objectives::gd_trajectory(inst.x, inst.y, cfg, k);
      const auto closed = objectives::gd_closed_form(inst.x, inst.y, cfg, k);
      t.observe(rel(iter.w, closed.w), 1e-8);
      ++n;
    }
  }
  return t.done("gd-trajectory-vs-closed-form", 1e-8, n,
                "iterative full-batch GD against its matrix closed form");
}

CheckResult check_gram_identity(int seeds) {
  Tracker t;
  int n = 0;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA200 + static_cast<std::uint64_t>(s));
    const Index m = 2 + static_cast<Index>(rng.index(15));
    const Index d = 2 + static_cast<Index>(rng.index(11));
    const Matrix xs = random_matrix(rng, m, d);
    for (const double beta : {1e-3, 1e-1, 1.0}) {
      t.observe(objectives::verify_identity_transform(xs, beta), 1e-10);
      ++n;
    }
  }
  return t.done("gram-vs-feature-form-identity", 1e-10, n,
                "Xs^T (Xs Xs^T + bI)^{-1} = (Xs^T Xs + bI)^{-1} Xs^T");
}

CheckResult check_krr_unified(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA300 + static_cast<std::uint64_t>(s));
    Instance inst = random_instance(rng);
    const double beta = 0.05 + rng.uniform();
    const double a = objectives::krr_loss_unified(inst.x, inst.y, inst.xs,
                                                  inst.ys, beta);
    const double b = objectives::unified_loss(
        spectral::HighPassShiftInverse{beta}, GMode::Flc, inst.x, inst.y,
        inst.xs, inst.ys);
    t.observe(rel(a, b), 1e-9);
  }
  return t.done("krr-equals-shift-inverse-objective", 1e-9, seeds,
                "ridge-solution gap equals the unified shift-inverse loss");
}

CheckResult check_grad_identity(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA400 + static_cast<std::uint64_t>(s));
    Instance inst = random_instance(rng);
    LinearModel w{random_matrix(rng, inst.x.cols(), inst.y.cols())};
    const auto dec = objectives::gradient_match_decomposition(
        inst.x, inst.y, inst.xs, inst.ys, w);
    t.observe(dec.identity_residual / std::max(1.0, std::sqrt(dec.native)),
              1e-9);
  }
  return t.done("gradient-gap-identity", 1e-9, seeds,
                "grad - grad_s = dFFC W - dFLC, exactly");
}

CheckResult check_mtt_identity(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA500 + static_cast<std::uint64_t>(s));
    Instance inst = random_instance(rng);
    TrajectoryConfig cfg;
    cfg.alpha = inst.alpha;
    cfg.p = 1 + static_cast<int>(rng.index(8));
    cfg.q = 1 + static_cast<int>(rng.index(8));
    cfg.w0 = random_matrix(rng, inst.x.cols(), inst.y.cols());
    const auto dec =
        objectives::mtt_decomposition(inst.x, inst.y, inst.xs, inst.ys, cfg);
    t.observe(dec.identity_residual / std::max(1.0, std::sqrt(dec.native)),
              1e-9);
  }
  return t.done("trajectory-gap-identity", 1e-9, seeds,
                "W^P - W_s^Q = (A^P - B^Q) W0 + alpha * signal gap, exactly");
}

CheckResult check_grad_factor2(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA600 + static_cast<std::uint64_t>(s));
    Instance inst = random_instance(rng);
    LinearModel w{random_matrix(rng, inst.x.cols(), inst.y.cols())};
    const auto dec = objectives::gradient_match_decomposition(
        inst.x, inst.y, inst.xs, inst.ys, w);
    const double bound = 2.0 * (dec.ffc_term + dec.flc_term);
    const double violation =
        (dec.native - bound) / std::max(1.0, bound) - 1e-12;
    t.observe(violation, 0.0);
  }
  return t.done("gradient-gap-factor-2-bound", 0.0, seeds,
                "||grad gap||^2 <= 2 (||W||^2 ||dFFC||^2 + ||dFLC||^2); "
                "worst is the largest signed violation");
}

CheckResult check_mtt_factor2(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA700 + static_cast<std::uint64_t>(s));
    Instance inst = random_instance(rng);
    TrajectoryConfig cfg;
    cfg.alpha = inst.alpha;
    cfg.p = 1 + static_cast<int>(rng.index(8));
    cfg.q = 1 + static_cast<int>(rng.index(8));
    cfg.w0 = random_matrix(rng, inst.x.cols(), inst.y.cols());
    const auto dec =
        objectives::mtt_decomposition(inst.x, inst.y, inst.xs, inst.ys, cfg);
    const double bound =
        2.0 * (dec.w0_norm_sq * dec.operator_term +
               dec.alpha * dec.alpha * dec.signal_gap_sq);
    const double violation =
        (dec.native - bound) / std::max(1.0, bound) - 1e-12;
    t.observe(violation, 0.0);
  }
  return t.done("trajectory-gap-factor-2-bound", 0.0, seeds,
                "||W^P - W_s^Q||^2 <= 2 (||W0||^2 ||A^P - B^Q||^2 + "
                "alpha^2 ||signal gap||^2)");
}

CheckResult check_allpass_is_dm(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA800 + static_cast<std::uint64_t>(s));
    Instance inst = random_instance(rng);
    const double a = objectives::unified_loss(spectral::AllPass{}, GMode::Flc,
                                              inst.x, inst.y, inst.xs,
                                              inst.ys);
    const double b = objectives::dm_loss(inst.x, inst.y, inst.xs, inst.ys);
    t.observe(std::abs(a - b), 1e-300);  // must agree bit-for-bit
  }
  return t.done("all-pass-equals-distribution-matching", 1e-300, seeds,
                "identical materialized expression, difference must be 0");
}

CheckResult check_spectral_direct(int seeds) {
  Tracker t;
  int n = 0;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xA900 + static_cast<std::uint64_t>(s));
    const Index d = 2 + static_cast<Index>(rng.index(15));
    const Index c = 1 + static_cast<Index>(rng.index(4));
    Matrix mm = random_psd(rng, d, d + 3);
    const double alpha = 0.4;
    const double top =
        spectral::eig_psd(PsdMatrix(mm)).eigvals(0);
    mm *= 0.9 / (alpha * std::max(top, 1e-12));
    const PsdMatrix m(mm);
    const Matrix sig = random_matrix(rng, d, c);
    const std::vector<FilterSpec> specs{
        spectral::AllPass{}, spectral::LowPassLinear{},
        spectral::HighPassPower{alpha, 3},
        spectral::HighPassShiftInverse{0.2},
        spectral::TrajectoryPolySum{alpha, 4}};
    for (const auto& spec : specs) {
      const Matrix a = spectral::apply_filter_spectral(spec, m, sig);
      const Matrix b = spectral::apply_filter_direct(spec, m, sig);
      t.observe(rel(a, b), 1e-8);
      ++n;
    }
  }
  return t.done("spectral-vs-direct-filtering", 1e-8, n,
                "eigendecomposition route against plain matrix algebra, "
                "all five filter kinds");
}

CheckResult check_taxonomy() {
  const std::vector<double> grid{0.0, 0.25, 0.5, 1.0, 1.5, 2.0};
  using spectral::FilterClass;
  int mismatches = 0;
  const auto expect = [&](const FilterSpec& spec, FilterClass want) {
    if (spectral::classify_filter(spec, grid) != want) ++mismatches;
  };
  expect(spectral::AllPass{}, FilterClass::AllPass);
  expect(spectral::LowPassLinear{}, FilterClass::LowPass);
  expect(spectral::HighPassPower{0.4, 2}, FilterClass::HighPass);
  expect(spectral::HighPassShiftInverse{0.1}, FilterClass::HighPass);
  expect(spectral::TrajectoryPolySum{0.4, 3}, FilterClass::HighPass);
  return CheckResult{"filter-taxonomy", mismatches == 0,
                     static_cast<double>(mismatches), 0.0, 5,
                     "measured monotonicity reproduces the filter classes"};
}

CheckResult check_schedule() {
  Tracker t;
  int n = 0;
  for (const double beta_max : {0.1, 1.0}) {
    for (const int total : {2, 10, 64}) {
      const cfm::CurriculumSchedule sched{beta_max, total, 1e-9};
      t.observe(std::abs(cfm::beta_at(sched, 0) - beta_max), 1e-12);
      t.observe(std::abs(cfm::beta_at(sched, total) - 1e-9), 1e-12);
      t.observe(std::abs(cfm::beta_at(sched, total / 2) - beta_max / 2.0),
                1e-12);
      n += 3;
    }
  }
  return t.done("curriculum-schedule-endpoints", 1e-12, n,
                "beta(0) = beta_max, beta(T/2) = beta_max/2, beta(T) = floor");
}

CheckResult check_emu_running_mean(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xAB00 + static_cast<std::uint64_t>(s));
    const Index d = 2 + static_cast<Index>(rng.index(7));
    const Index c = 1 + static_cast<Index>(rng.index(4));
    const int batches = 1 + static_cast<int>(rng.index(64));
    auto state = features::emu_init(d, c);
    Matrix psi_sum = Matrix::Zero(d, d);
    Matrix phi_sum = Matrix::Zero(d, c);
    for (int b = 0; b < batches; ++b) {
      const Matrix psi = random_psd(rng, d, d + 1);
      const Matrix phi = random_matrix(rng, d, c);
      psi_sum += psi;
      phi_sum += phi;
      state = features::emu_update(state, psi, phi);
    }
    const double inv = 1.0 / static_cast<double>(batches);
    t.observe(rel(state.psi_s, Matrix(inv * psi_sum)), 1e-12);
    t.observe(rel(state.phi_s, Matrix(inv * phi_sum)), 1e-12);
  }
  return t.done("emu-running-mean-identity", 1e-12, seeds,
                "state after b updates equals the arithmetic batch mean, "
                "b up to 64");
}

CheckResult check_emu_homogeneous(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xAC00 + static_cast<std::uint64_t>(s));
    const Index d = 2 + static_cast<Index>(rng.index(5));
    const Index c = 2 + static_cast<Index>(rng.index(3));
    const int batches = 2 + static_cast<int>(rng.index(6));
    const Index rows = 4 * c;

    // Equal-size batches with identical (zero) means: EMU must equal the
    // full-dataset statistics.
    Matrix labels = Matrix::Zero(rows, c);
    for (Index i = 0; i < rows; ++i) labels(i, i % c) = 1.0;
    std::vector<Matrix> data;
    Matrix all(rows * batches, d);
    Matrix all_labels(rows * batches, c);
    auto state = features::emu_init(d, c);
    for (int b = 0; b < batches; ++b) {
      Matrix g = random_matrix(rng, rows, d);
      g.rowwise() -= g.colwise().mean().eval();
      all.middleRows(static_cast<Index>(b) * rows, rows) = g;
      all_labels.middleRows(static_cast<Index>(b) * rows, rows) = labels;
      const features::FeatureMap map{g, d, 1, 1, 1};
      state = features::emu_update(state, features::corr_stats(map, labels));
    }
    const features::FeatureMap full{all, d, 1, 1, 1};
    const auto want = features::corr_stats(full, all_labels);
    t.observe(rel(state.psi_s, want.psi.matrix()), 1e-10);
    t.observe(rel(state.phi_s, want.phi), 1e-10);
  }
  return t.done("emu-homogeneous-batch-exactness", 1e-10, seeds,
                "equal-mean equal-size batches recover the full-set stats");
}

CheckResult check_cfm_loss_oracle(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xAD00 + static_cast<std::uint64_t>(s));
    const Index d = 2 + static_cast<Index>(rng.index(7));
    const Index c = 1 + static_cast<Index>(rng.index(3));
    const double beta = 0.05 + 0.5 * rng.uniform();
    const Matrix psi = random_psd(rng, d, d + 3) / static_cast<double>(d + 3);
    const Matrix psi_s = random_psd(rng, d, d + 3) / static_cast<double>(d + 3);
    const Matrix phi = random_matrix(rng, d, c);
    const Matrix phi_s = random_matrix(rng, d, c);
    const std::vector<features::CorrStats> real{{PsdMatrix(psi), phi}};
    const std::vector<features::EmuState> synth{{psi_s, phi_s, 1}};
    const auto [lf, ls] = cfm::cfm_losses(real, synth, beta);

    const FilterSpec spec = spectral::HighPassShiftInverse{beta};
    const Matrix eye = Matrix::Identity(d, d);
    const Matrix g = spectral::apply_filter_spectral(spec, PsdMatrix(psi), eye);
    const Matrix gs =
        spectral::apply_filter_spectral(spec, PsdMatrix(psi_s), eye);
    t.observe(rel(lf, (g - gs).norm()), 1e-8);
    t.observe(rel(ls, (g * phi - gs * phi_s).norm()), 1e-8);
  }
  return t.done("cfm-losses-vs-spectral-route", 1e-8, seeds,
                "solver-based matching losses against the eigendecomposition");
}

CheckResult check_cfm_grad_fd(int seeds) {
  Tracker t;
  const int instances = std::max(20, seeds / 5);
  for (int s = 1; s <= instances; ++s) {
    Rng rng(0xAE00 + static_cast<std::uint64_t>(s));
    features::NetConfig ncfg;
    const int layers = 1 + static_cast<int>(rng.index(2));
    for (int l = 0; l <= layers; ++l) {
      ncfg.widths.push_back(3 + static_cast<Index>(rng.index(3)));
    }
    const Index m = 4;
    const Index c = 2;
    const auto net = features::build_net(ncfg, 0xF00D + s);
    const Matrix hs = random_matrix(rng, m, ncfg.input_width());
    Matrix ys = Matrix::Zero(m, c);
    for (Index i = 0; i < m; ++i) ys(i, i % c) = 1.0;
    const Matrix hr = random_matrix(rng, 8, ncfg.input_width());
    Matrix yr = Matrix::Zero(8, c);
    for (Index i = 0; i < 8; ++i) yr(i, i % c) = 1.0;
    std::vector<features::CorrStats> real;
    for (const auto& map : features::forward(net, hr)) {
      real.push_back(features::corr_stats(map, yr));
    }
    std::vector<features::EmuState> emu;
    for (int l = 1; l <= layers; ++l) {
      emu.push_back(
          features::emu_init(ncfg.widths[static_cast<std::size_t>(l)], c));
    }
    objectives::LinearModel head{0.7 *
                                 random_matrix(rng, ncfg.widths.back(), c)};
    const double beta = 0.05 + 0.5 * rng.uniform();

    cfm::CfmConfig cfg;
    switch (s % 5) {
      case 0: cfg.use_filter = cfg.use_signal = false; break;      // cls only
      case 1: cfg.use_cls = cfg.use_signal = false; break;         // filter
      case 2: cfg.use_cls = cfg.use_filter = false; break;         // signal
      case 3: break;                                               // all
      default: cfg.filter = cfm::MatchFilter::LowPass; break;      // low-pass
    }

    const auto eval =
        cfm::cfm_loss_and_grad(net, head, hs, ys, real, emu, beta, cfg);
    Matrix fd(m, ncfg.input_width());
    const double h = 1e-5;
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < ncfg.input_width(); ++j) {
        Matrix hp = hs, hm = hs;
        hp(i, j) += h;
        hm(i, j) -= h;
        const double lp =
            cfm::cfm_loss_and_grad(net, head, hp, ys, real, emu, beta, cfg)
                .l_total;
        const double lm =
            cfm::cfm_loss_and_grad(net, head, hm, ys, real, emu, beta, cfg)
                .l_total;
        fd(i, j) = (lp - lm) / (2.0 * h);
      }
    }
    t.observe(rel(fd, eval.grad), 1e-5);
  }
  return t.done("cfm-gradient-vs-finite-differences", 1e-5, instances,
                "analytic synthetic-data gradient against central "
                "differences, every loss term");
}

CheckResult check_ridge_stationarity(int seeds) {
  Tracker t;
  for (int s = 1; s <= seeds; ++s) {
    Rng rng(0xAF00 + static_cast<std::uint64_t>(s));
    const Index n = 50 + static_cast<Index>(rng.index(200));
    const Index d = 4 + static_cast<Index>(rng.index(20));
    const Index c = 2 + static_cast<Index>(rng.index(4));
    const Matrix x = random_matrix(rng, n, d);
    Matrix y = Matrix::Zero(n, c);
    for (Index i = 0; i < n; ++i) y(i, i % c) = 1.0;
    const double beta = 0.01 + rng.uniform();
    const auto head = harness::fit_ridge_head(x, y, beta);
    const Matrix grad = x.transpose() * (x * head.w - y) + beta * head.w;
    t.observe(grad.norm() / std::max(1.0, (x.transpose() * y).norm()), 1e-8);
  }
  return t.done("ridge-head-stationarity", 1e-8, seeds,
                "fitted head zeroes the ridge objective gradient");
}

}  // namespace

Report run_battery(int seeds) {
  if (seeds < 1) seeds = 1;
  const auto start = std::chrono::steady_clock::now();
  Report report;
  report.checks.push_back(check_gd_closed_form(seeds));
  report.checks.push_back(check_gram_identity(seeds));
  report.checks.push_back(check_krr_unified(seeds));
  report.checks.push_back(check_grad_identity(seeds));
  report.checks.push_back(check_mtt_identity(seeds));
  report.checks.push_back(check_grad_factor2(seeds));
  report.checks.push_back(check_mtt_factor2(seeds));
  report.checks.push_back(check_allpass_is_dm(seeds));
  report.checks.push_back(check_spectral_direct(seeds));
  report.checks.push_back(check_taxonomy());
  report.checks.push_back(check_schedule());
  report.checks.push_back(check_emu_running_mean(seeds));
  report.checks.push_back(check_emu_homogeneous(seeds));
  report.checks.push_back(check_cfm_loss_oracle(seeds));
  report.checks.push_back(check_cfm_grad_fd(seeds));
  report.checks.push_back(check_ridge_stationarity(seeds));
  report.all_pass = true;
  for (const auto& c : report.checks) report.all_pass = report.all_pass && c.pass;
  report.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return report;
}

std::string report_json(const Report& report) {
  nlohmann::json j;
  j["all_pass"] = report.all_pass;
  j["seconds"] = report.seconds;
  j["checks"] = nlohmann::json::array();
  for (const auto& c : report.checks) {
    j["checks"].push_back({{"name", c.name},
                           {"pass", c.pass},
                           {"worst", c.worst},
                           {"tolerance", c.tolerance},
                           {"instances", c.instances},
                           {"note", c.note}});
  }
  return j.dump(2) + "\n";
}

}  // namespace unidd::verify
