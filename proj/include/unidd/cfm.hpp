#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "unidd/dataset.hpp"
#include "unidd/errors.hpp"
#include "unidd/features.hpp"
#include "unidd/objectives.hpp"
#include "unidd/types.hpp"

namespace unidd::cfm {

// Cosine annealing of the ridge parameter from beta_max toward beta_floor.
struct CurriculumSchedule {
  double beta_max = 0.1;
  int total_steps = 1;       // T
  double beta_floor = 1e-6;  // keeps the shifted inverse defined at t = T
};

// max(beta_floor, beta_max * (1 + cos(pi t / T)) / 2) for 0 <= t <= T.
double beta_at(const CurriculumSchedule& schedule, int t);

// Filter used inside the matching losses: the shift-inverse high-pass
// (lambda + beta)^{-1} or the plain low-pass f(Psi) = Psi used by the filter
// comparison runs.
enum class MatchFilter { ShiftInverse, LowPass };

// Which index drives the schedule during distillation: the batch loop
// (default, one frequency band per batch) or the iteration loop.
enum class CurriculumAxis { PerBatch, PerIteration };

struct AdamConfig {
  double lr = 0.1;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  bool plain_gd = false;  // plain gradient descent with `lr`
};

struct CfmConfig {
  double eta = 0.1;     // weight of the two matching losses
  int iterations = 50;  // I, optimizer steps per batch
  int batch_size = 20;  // |B|
  int ipc = 10;         // synthetic samples per class
  AdamConfig optimizer;
  CurriculumSchedule schedule;
  CurriculumAxis axis = CurriculumAxis::PerBatch;
  MatchFilter filter = MatchFilter::ShiftInverse;
  bool squared_norms = false;  // ablation: square the matching norms
  // Loss-term toggles for the ablation study.
  bool use_cls = true;
  bool use_filter = true;
  bool use_signal = true;
};

struct SyntheticDataset {
  Matrix hs;  // m x d_in, class-grouped rows
  Matrix ys;  // m x c one-hot
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<double> batch_betas;  // beta used by each batch
};

struct LossRecord {
  int t = 0;  // global optimizer step, 1-based
  double beta = 0.0;
  double l_cls = 0.0;
  double l_filter = 0.0;
  double l_signal = 0.0;
  double l_total = 0.0;
};
using LossReport = std::vector<LossRecord>;

// Sum over layers of the two matching losses at inverse-filter parameter
// beta_t. Unsquared Frobenius norms by default.
std::pair<double, double> cfm_losses(
    const std::vector<features::CorrStats>& real,
    const std::vector<features::EmuState>& synth, double beta_t,
    MatchFilter filter = MatchFilter::ShiftInverse, bool squared = false);

// Mean softmax cross-entropy of logits against one-hot labels.
double cls_loss(const Matrix& logits, const Matrix& ys);

double total_loss(double l_cls, double l_filter, double l_signal, double eta);

// One forward/backward evaluation of a synthetic batch: EMU update with the
// batch statistics, loss terms, and the exact gradient of the total loss with
// respect to the batch inputs. The previous EMU state is a constant in the
// gradient; the current batch enters with coefficient 1/b.
struct BatchEval {
  double l_cls = 0.0;
  double l_filter = 0.0;
  double l_signal = 0.0;
  double l_total = 0.0;
  Matrix grad;  // shaped like the batch inputs
  std::vector<features::EmuState> emu_after;
};

BatchEval cfm_loss_and_grad(const features::FeatureNet& net,
                            const objectives::LinearModel& head,
                            const Matrix& hs_batch, const Matrix& ys_batch,
                            const std::vector<features::CorrStats>& real,
                            const std::vector<features::EmuState>& emu_prev,
                            double beta_t, const CfmConfig& cfg);

// Gradient-only view of cfm_loss_and_grad.
Matrix grad_synthetic(const features::FeatureNet& net,
                      const objectives::LinearModel& head,
                      const Matrix& hs_batch, const Matrix& ys_batch,
                      const std::vector<features::CorrStats>& real,
                      const std::vector<features::EmuState>& emu_prev,
                      double beta_t, const CfmConfig& cfg);

// Batch-wise distillation loop: per batch, initialize from real samples of
// the batch's classes, fix beta from the schedule, then run `iterations`
// optimizer steps of forward / EMU update / loss / gradient.
std::pair<SyntheticDataset, LossReport> distill(
    const harness::Dataset& real, const harness::SqueezeArtifact& squeeze,
    const CfmConfig& cfg, std::uint64_t seed);

}  // namespace unidd::cfm
