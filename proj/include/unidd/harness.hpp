#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unidd/cfm.hpp"
#include "unidd/dataset.hpp"
#include "unidd/errors.hpp"
#include "unidd/features.hpp"
#include "unidd/types.hpp"

namespace unidd::harness {

// A generated dataset always comes as matched train/test splits.
struct MixturePair {
  Dataset train;
  Dataset test;
};

// Class means on a seeded sphere of radius `separation`, unit-variance
// isotropic noise. Train gets n_per_class samples per class, test a quarter
// of that (80/20).
MixturePair generate_gaussian_mixture(Index c, Index d_in, Index n_per_class,
                                      double separation, std::uint64_t seed);

// Forward the train split through a freshly built net, collect per-layer
// statistics, and fit the ridge head on the last-layer averaged features.
SqueezeArtifact squeeze(const Dataset& train, const features::NetConfig& net_cfg,
                        double ridge_beta, std::uint64_t seed);

// Ridge fit W = (X^T X + beta I)^{-1} X^T Y with one iterative-refinement
// step; shared by squeeze and evaluate so identical data gives identical
// heads bit-for-bit.
objectives::LinearModel fit_ridge_head(const Matrix& x, const Matrix& y,
                                       double beta);

struct EvalConfig {
  int epochs = 0;  // 0: closed-form ridge head (the default protocol)
  double lr = 0.0;
  std::uint64_t seed = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class;
  EvalConfig config;
};

// Train a fresh ridge head on the synthetic set's features through the
// frozen net; report accuracy on the real test split.
EvalResult evaluate(const cfm::SyntheticDataset& synthetic,
                    const SqueezeArtifact& squeeze, const Dataset& test,
                    const EvalConfig& cfg = {});

// View a real dataset as a synthetic one (used for the full-data reference).
cfm::SyntheticDataset to_synthetic(const Dataset& ds);

// IPC-balanced random real subset: the distillation initialization with zero
// optimizer iterations. This is the "random baseline".
cfm::SyntheticDataset random_subset(const Dataset& train,
                                    const SqueezeArtifact& squeeze, int ipc,
                                    std::uint64_t seed);

struct NamedConfig {
  std::string label;
  cfm::CfmConfig cfg;
};

struct RunRow {
  std::string label;
  std::vector<double> accuracies;  // one per seed, in seed order
  double mean = 0.0;
  double std_dev = 0.0;  // sample standard deviation
};

struct ComparisonTable {
  std::vector<std::uint64_t> seeds;
  std::vector<RunRow> rows;
};

// One distill+evaluate per (config, seed); rows reduced in config order.
// jobs > 1 fans the runs out across a worker pool.
ComparisonTable compare_filters(const MixturePair& data,
                                const SqueezeArtifact& squeeze,
                                const std::vector<NamedConfig>& configs,
                                const std::vector<std::uint64_t>& seeds,
                                int jobs = 1);

// The curriculum run, constant-beta runs at 1e-1..1e-4, the low-pass
// variant, and the zero-iteration random subset, all derived from `base`.
std::vector<NamedConfig> standard_filter_set(const cfm::CfmConfig& base);

// Loss-term ablation: filter-only, filter+signal, all-terms.
ComparisonTable run_loss_ablation(const MixturePair& data,
                                  const SqueezeArtifact& squeeze,
                                  const cfm::CfmConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds,
                                  int jobs = 1);

double mean_of(const std::vector<double>& v);
double std_of(const std::vector<double>& v);  // n-1 denominator; 0 for n < 2
double pooled_std(double s1, double s2);

std::string table_csv(const ComparisonTable& table);
std::string table_json(const ComparisonTable& table);

}  // namespace unidd::harness
