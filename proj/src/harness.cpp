#include "unidd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "unidd/io.hpp"
#include "unidd/objectives.hpp"
#include "unidd/rng.hpp"

namespace unidd::harness {

namespace {

void check_one_hot_rows(const Matrix& y, const char* what) {
  for (Index i = 0; i < y.rows(); ++i) {
    double sum = 0.0;
    for (Index j = 0; j < y.cols(); ++j) {
      if (y(i, j) != 0.0 && y(i, j) != 1.0) {
        throw InvalidConfig(std::string(what) + ": labels must be one-hot");
      }
      sum += y(i, j);
    }
    if (sum != 1.0) {
      throw InvalidConfig(std::string(what) + ": labels must be one-hot");
    }
  }
}

Matrix last_layer_features(const features::FeatureNet& net, const Matrix& h) {
  const auto maps = features::forward(net, h);
  return features::spatial_average(maps.back());
}

}  // namespace

MixturePair generate_gaussian_mixture(Index c, Index d_in, Index n_per_class,
                                      double separation, std::uint64_t seed) {
  if (c < 2) throw InvalidConfig("mixture: need at least 2 classes");
  if (d_in < 1) throw InvalidConfig("mixture: input width must be positive");
  if (n_per_class < 2) {
    throw InvalidConfig("mixture: need at least 2 train samples per class");
  }
  if (!(separation >= 0.0)) {
    throw InvalidConfig("mixture: separation must be non-negative");
  }

  Rng mean_rng = Rng::stream(seed, "means");
  Matrix means(c, d_in);
  for (Index j = 0; j < c; ++j) {
    double norm = 0.0;
    do {
      for (Index k = 0; k < d_in; ++k) means(j, k) = mean_rng.normal();
      norm = means.row(j).norm();
    } while (norm < 1e-9);
    means.row(j) *= separation / norm;
  }

  const auto fill = [&](Dataset& ds, Split split, Index per_class,
                        std::string_view stream) {
    Rng rng = Rng::stream(seed, stream);
    const Index n = per_class * c;
    ds.h.resize(n, d_in);
    ds.y = Matrix::Zero(n, c);
    for (Index j = 0; j < c; ++j) {
      for (Index i = 0; i < per_class; ++i) {
        const Index r = j * per_class + i;
        for (Index k = 0; k < d_in; ++k) {
          ds.h(r, k) = means(j, k) + rng.normal();
        }
        ds.y(r, j) = 1.0;
      }
    }
    ds.split = split;
    ds.meta.name = "gaussian-mixture";
    ds.meta.seed = seed;
    ds.meta.class_counts.assign(static_cast<std::size_t>(c),
                                static_cast<int>(per_class));
  };

  MixturePair pair;
  fill(pair.train, Split::Train, n_per_class, "train");
  fill(pair.test, Split::Test, std::max<Index>(1, n_per_class / 4), "test");
  return pair;
}

objectives::LinearModel fit_ridge_head(const Matrix& x, const Matrix& y,
                                       double beta) {
  objectives::LinearModel head = objectives::krr_ridge_solution(x, y, beta);
  // One refinement step keeps the stationarity residual near rounding level
  // even when X^T X is ill-conditioned.
  const Matrix a = x.transpose() * x +
                   beta * Matrix::Identity(x.cols(), x.cols());
  const Matrix b = x.transpose() * y;
  const Matrix resid = b - a * head.w;
  head.w += Eigen::LDLT<Matrix>(a).solve(resid);
  const double grad_norm = (a * head.w - b).norm();
  if (!(grad_norm < 1e-8 * std::max(1.0, b.norm()))) {
    throw NoConvergence("ridge head did not reach stationarity");
  }
  return head;
}

SqueezeArtifact squeeze(const Dataset& train, const features::NetConfig& net_cfg,
                        double ridge_beta, std::uint64_t seed) {
  if (train.samples() < 2) {
    throw InvalidConfig("squeeze: train split needs at least 2 samples");
  }
  if (!(ridge_beta > 0.0)) {
    throw InvalidConfig("squeeze: ridge beta must be positive");
  }
  check_one_hot_rows(train.y, "squeeze");

  auto net = features::build_net(net_cfg, seed);
  const auto maps = features::forward(net, train.h);
  std::vector<features::CorrStats> stats;
  stats.reserve(maps.size());
  for (const auto& map : maps) {
    stats.push_back(features::corr_stats(map, train.y));
  }
  auto head =
      fit_ridge_head(features::spatial_average(maps.back()), train.y,
                     ridge_beta);

  std::ostringstream canon;
  canon << "squeeze|mode="
        << (net_cfg.mode == features::Mode::Flat ? "flat" : "spatial")
        << "|h=" << net_cfg.height << "|w=" << net_cfg.width << "|widths=";
  for (std::size_t i = 0; i < net_cfg.widths.size(); ++i) {
    canon << (i ? "," : "") << net_cfg.widths[i];
  }
  canon << "|beta=" << io::format_double(ridge_beta) << "|seed=" << seed;
  const std::uint64_t hash = fnv1a64(canon.str());

  return SqueezeArtifact{std::move(net), std::move(head), std::move(stats),
                         ridge_beta, hash};
}

EvalResult evaluate(const cfm::SyntheticDataset& synthetic,
                    const SqueezeArtifact& squeeze, const Dataset& test,
                    const EvalConfig& cfg) {
  if (synthetic.hs.rows() < 1) {
    throw InvalidConfig("evaluate: synthetic set is empty");
  }
  if (synthetic.hs.rows() != synthetic.ys.rows()) {
    throw ShapeMismatch("evaluate: synthetic inputs and labels differ");
  }
  check_one_hot_rows(synthetic.ys, "evaluate");
  const Index c = synthetic.ys.cols();
  if (test.classes() != c) {
    throw ShapeMismatch("evaluate: synthetic and test class counts differ");
  }
  for (Index j = 0; j < c; ++j) {
    if (synthetic.ys.col(j).sum() == 0.0) {
      throw InvalidConfig("evaluate: synthetic class " + std::to_string(j) +
                          " is empty");
    }
  }

  const Matrix xs = last_layer_features(squeeze.net, synthetic.hs);
  const auto head = fit_ridge_head(xs, synthetic.ys, squeeze.ridge_beta);

  const Matrix xt = last_layer_features(squeeze.net, test.h);
  const Matrix logits = xt * head.w;
  std::vector<Index> correct(static_cast<std::size_t>(c), 0);
  std::vector<Index> count(static_cast<std::size_t>(c), 0);
  for (Index i = 0; i < test.samples(); ++i) {
    Index pred = 0, truth = 0;
    logits.row(i).maxCoeff(&pred);
    test.y.row(i).maxCoeff(&truth);
    ++count[static_cast<std::size_t>(truth)];
    if (pred == truth) ++correct[static_cast<std::size_t>(truth)];
  }

  EvalResult res;
  res.config = cfg;
  res.per_class.resize(static_cast<std::size_t>(c), 0.0);
  Index total_correct = 0;
  for (Index j = 0; j < c; ++j) {
    const auto ji = static_cast<std::size_t>(j);
    if (count[ji] > 0) {
      res.per_class[ji] = static_cast<double>(correct[ji]) /
                          static_cast<double>(count[ji]);
    }
    total_correct += correct[ji];
  }
  res.accuracy =
      static_cast<double>(total_correct) / static_cast<double>(test.samples());
  return res;
}

cfm::SyntheticDataset to_synthetic(const Dataset& ds) {
  cfm::SyntheticDataset sd;
  sd.hs = ds.h;
  sd.ys = ds.y;
  sd.seed = ds.meta.seed;
  return sd;
}

cfm::SyntheticDataset random_subset(const Dataset& train,
                                    const SqueezeArtifact& squeeze, int ipc,
                                    std::uint64_t seed) {
  cfm::CfmConfig cfg;
  cfg.ipc = ipc;
  cfg.iterations = 0;
  cfg.batch_size = static_cast<int>(train.classes()) * ipc;
  return cfm::distill(train, squeeze, cfg, seed).first;
}

namespace {

ComparisonTable run_comparison(const MixturePair& data,
                               const SqueezeArtifact& squeeze,
                               const std::vector<NamedConfig>& configs,
                               const std::vector<std::uint64_t>& seeds,
                               int jobs) {
  if (configs.size() < 2) {
    throw InvalidConfig("comparison: need at least 2 configurations");
  }
  if (seeds.empty()) throw InvalidConfig("comparison: need at least 1 seed");
  jobs = std::max(1, jobs);

  const std::size_t n_tasks = configs.size() * seeds.size();
  std::vector<double> acc(n_tasks, 0.0);
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;

  const auto worker = [&]() {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= n_tasks) return;
      {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error) return;
      }
      try {
        const auto& cfg = configs[task / seeds.size()].cfg;
        const std::uint64_t seed = seeds[task % seeds.size()];
        const auto [synth, report] =
            cfm::distill(data.train, squeeze, cfg, seed);
        acc[task] = evaluate(synth, squeeze, data.test).accuracy;
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ComparisonTable table;
  table.seeds = seeds;
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    RunRow row;
    row.label = configs[ci].label;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      row.accuracies.push_back(acc[ci * seeds.size() + si]);
    }
    row.mean = mean_of(row.accuracies);
    row.std_dev = std_of(row.accuracies);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace

ComparisonTable compare_filters(const MixturePair& data,
                                const SqueezeArtifact& squeeze,
                                const std::vector<NamedConfig>& configs,
                                const std::vector<std::uint64_t>& seeds,
                                int jobs) {
  return run_comparison(data, squeeze, configs, seeds, jobs);
}

std::vector<NamedConfig> standard_filter_set(const cfm::CfmConfig& base) {
  std::vector<NamedConfig> set;
  set.push_back({"cfm-curriculum", base});
  for (const double beta : {1e-1, 1e-2, 1e-3, 1e-4}) {
    cfm::CfmConfig cfg = base;
    // Constant schedule: floor == beta_max pins beta_at to beta everywhere.
    cfg.schedule.beta_max = beta;
    cfg.schedule.beta_floor = beta;
    char label[48];
    std::snprintf(label, sizeof(label), "const-beta-%g", beta);
    set.push_back({label, cfg});
  }
  {
    cfm::CfmConfig cfg = base;
    cfg.filter = cfm::MatchFilter::LowPass;
    set.push_back({"low-pass", cfg});
  }
  {
    cfm::CfmConfig cfg = base;
    cfg.iterations = 0;
    set.push_back({"random-subset", cfg});
  }
  return set;
}

ComparisonTable run_loss_ablation(const MixturePair& data,
                                  const SqueezeArtifact& squeeze,
                                  const cfm::CfmConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds,
                                  int jobs) {
  std::vector<NamedConfig> configs;
  cfm::CfmConfig filter_only = cfg;
  filter_only.use_filter = true;
  filter_only.use_signal = false;
  filter_only.use_cls = false;
  configs.push_back({"filter-only", filter_only});

  cfm::CfmConfig filter_signal = filter_only;
  filter_signal.use_signal = true;
  configs.push_back({"filter+signal", filter_signal});

  cfm::CfmConfig all_terms = filter_signal;
  all_terms.use_cls = true;
  configs.push_back({"all-terms", all_terms});

  return run_comparison(data, squeeze, configs, seeds, jobs);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double pooled_std(double s1, double s2) {
  return std::sqrt((s1 * s1 + s2 * s2) / 2.0);
}

std::string table_csv(const ComparisonTable& table) {
  std::string csv = "label,n_seeds,mean,std";
  for (const std::uint64_t s : table.seeds) {
    csv += ",seed_" + std::to_string(s);
  }
  csv += '\n';
  for (const auto& row : table.rows) {
    csv += row.label + ',' + std::to_string(table.seeds.size()) + ',' +
           io::format_double(row.mean) + ',' + io::format_double(row.std_dev);
    for (const double a : row.accuracies) csv += ',' + io::format_double(a);
    csv += '\n';
  }
  return csv;
}

std::string table_json(const ComparisonTable& table) {
  nlohmann::json j;
  j["seeds"] = table.seeds;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : table.rows) {
    j["rows"].push_back({{"label", row.label},
                         {"mean", row.mean},
                         {"std", row.std_dev},
                         {"accuracies", row.accuracies}});
  }
  return j.dump(2) + "\n";
}

}  // namespace unidd::harness
