#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unidd/cfm.hpp"
#include "unidd/errors.hpp"
#include "unidd/features.hpp"
#include "unidd/types.hpp"

namespace unidd::config {

// Flat mirror of every tunable, loadable from a TOML file. Unknown keys are
// rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  // [dataset]
  Index classes = 10;
  Index d_in = 32;
  Index n_per_class = 500;
  double separation = 3.75;
  std::uint64_t data_seed = 1;

  // [net]
  std::vector<Index> widths = {32, 24};
  std::string mode = "flat";  // "flat" | "spatial"
  Index height = 1;
  Index width = 1;
  std::uint64_t net_seed = 7;

  // [squeeze]
  double ridge_beta = 0.05;

  // [cfm]
  double eta = 0.1;
  int iterations = 150;
  int batch_size = 20;
  int ipc = 10;
  double lr = 0.05;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  bool plain_gd = false;
  double beta_max = 5e-4;
  double beta_floor = 1e-6;
  std::string axis = "per-batch";        // "per-batch" | "per-iteration"
  std::string filter = "shift-inverse";  // "shift-inverse" | "low-pass"
  bool squared_norms = false;
  bool use_cls = true;
  bool use_filter = true;
  bool use_signal = true;

  // [run]
  std::uint64_t seed = 1;
  int jobs = 1;
  std::vector<std::uint64_t> compare_seeds = {1, 2, 3, 4, 5};

  features::NetConfig net_config() const;
  cfm::CfmConfig cfm_config() const;

  // Canonical serialization of everything that determines artifact content.
  // The run seed and worker count are excluded: the seed is provenance
  // carried separately, and jobs does not change any output.
  std::string canonical() const;
  std::uint64_t hash() const;
};

// Strict subset of TOML: [section] headers, key = value lines with integer,
// float, boolean, string, or integer-array values, and # comments.
RunConfig parse_toml(const std::string& text);
RunConfig load_config(const std::string& path);

// The default configuration as a documented TOML file.
std::string default_toml();

}  // namespace unidd::config
