#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unidd/features.hpp"
#include "unidd/objectives.hpp"
#include "unidd/types.hpp"

namespace unidd::harness {

enum class Split { Train, Test };

struct DatasetMeta {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<int> class_counts;
};

// Real dataset with one-hot labels.
struct Dataset {
  Matrix h;  // n x d_in
  Matrix y;  // n x c one-hot
  Split split = Split::Train;
  DatasetMeta meta;

  Index samples() const { return h.rows(); }
  Index input_width() const { return h.cols(); }
  Index classes() const { return y.cols(); }
};

// Output of the squeeze phase: frozen net, ridge head on last-layer averaged
// features, and per-layer real statistics.
struct SqueezeArtifact {
  features::FeatureNet net;
  objectives::LinearModel head;
  std::vector<features::CorrStats> real_stats;
  double ridge_beta = 0.0;
  std::uint64_t config_hash = 0;
};

}  // namespace unidd::harness
