#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unidd/cfm.hpp"
#include "unidd/dataset.hpp"
#include "unidd/errors.hpp"
#include "unidd/features.hpp"
#include "unidd/types.hpp"

namespace unidd::io {

// Little-endian binary artifact formats. Each loader validates magic bytes
// and structural sizes (FormatError) and, where the format carries one, the
// trailing CRC32 (ChecksumMismatch).
//
//   UDS1  dataset            magic "UDS1", u32 version, u32 n, u32 d_in,
//                            u32 c, u8 split, f64 row-major H, u16 labels,
//                            u32 CRC32 of everything before it
//   UDD1  layer statistics   magic "UDD1", u32 d, u32 c, f64 row-major Psi
//                            then Phi
//   USQ1  squeeze artifact   magic "USQ1", u32 version, net config + seed,
//                            ridge head, per-layer UDD1-style blocks,
//                            u32 CRC32

void save_dataset(const std::string& path, const harness::Dataset& ds);
harness::Dataset load_dataset(const std::string& path);

void save_corr_stats(const std::string& path, const features::CorrStats& cs);
features::CorrStats load_corr_stats(const std::string& path);

void save_squeeze(const std::string& path, const harness::SqueezeArtifact& sq);
harness::SqueezeArtifact load_squeeze(const std::string& path);

// Synthetic data reuses the dataset container format; provenance (seed,
// config hash, per-batch betas) lives in a JSON sidecar at path + ".meta.json".
void save_synthetic(const std::string& path, const cfm::SyntheticDataset& sd);
cfm::SyntheticDataset load_synthetic(const std::string& path);

void save_loss_report(const std::string& path, const cfm::LossReport& report);

// Formatting helpers shared by the CLI writers.
std::string format_double(double v);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace unidd::io
