// unidd: spectral filtering view of dataset distillation, with the
// curriculum frequency matching distiller and its verification battery.
//
// Exit codes: 0 success, 1 numerical or property failure, 2 usage, config,
// or file-format failure.

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unidd/cfm.hpp"
#include "unidd/config.hpp"
#include "unidd/errors.hpp"
#include "unidd/harness.hpp"
#include "unidd/io.hpp"
#include "unidd/spectral.hpp"
#include "unidd/verify.hpp"

namespace {

using namespace unidd;

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

std::string short_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

harness::MixturePair dataset_from(const config::RunConfig& rc) {
  return harness::generate_gaussian_mixture(rc.classes, rc.d_in,
                                            rc.n_per_class, rc.separation,
                                            rc.data_seed);
}

harness::SqueezeArtifact load_matching_squeeze(const std::string& path,
                                               const config::RunConfig& rc) {
  harness::SqueezeArtifact art = io::load_squeeze(path);
  if (art.config_hash != rc.hash()) {
    throw ConfigError("squeeze artifact " + path + " carries config hash " +
                      hash_hex(art.config_hash) +
                      " but the supplied config hashes to " +
                      hash_hex(rc.hash()));
  }
  return art;
}

// --seed flag beats UNIDD_SEED, which beats the config file.
std::uint64_t resolve_seed(const config::RunConfig& rc, bool flag_given,
                           std::uint64_t flag_value) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("UNIDD_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') {
      throw ConfigError(std::string("UNIDD_SEED is not an integer: ") + env);
    }
    return static_cast<std::uint64_t>(v);
  }
  return rc.seed;
}

int cmd_verify(int seeds, const std::string& report_path) {
  const verify::Report report = verify::run_battery(seeds);
  for (const auto& c : report.checks) {
    std::printf("%-38s %s  worst %.3e  tol %.1e  (%d instances)\n",
                c.name.c_str(), c.pass ? "[ok]  " : "[FAIL]", c.worst,
                c.tolerance, c.instances);
  }
  io::write_text_file(report_path, verify::report_json(report));
  std::printf("verify: %zu checks, %s, %.2f s, report %s\n",
              report.checks.size(), report.all_pass ? "all passed" : "FAILED",
              report.seconds, report_path.c_str());
  return report.all_pass ? 0 : 1;
}

std::vector<double> parse_grid(const std::string& text) {
  double lo = 0.0, hi = 0.0;
  long steps = 0;
  std::istringstream in(text);
  char c1 = 0, c2 = 0;
  if (!(in >> lo >> c1 >> hi >> c2 >> steps) || c1 != ':' || c2 != ':' ||
      !in.eof()) {
    throw ConfigError("grid must be MIN:MAX:STEPS, got '" + text + "'");
  }
  if (!(hi > lo) || lo < 0.0 || steps < 2) {
    throw ConfigError("grid needs 0 <= MIN < MAX and STEPS >= 2");
  }
  std::vector<double> grid(static_cast<std::size_t>(steps));
  for (long i = 0; i < steps; ++i) {
    grid[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  grid.back() = hi;
  return grid;
}

int cmd_filters(const std::vector<double>& betas, double alpha, int power,
                const std::string& grid_text, const std::string& out) {
  const std::vector<double> grid = parse_grid(grid_text);
  if (alpha <= 0.0) throw ConfigError("--alpha must be > 0");
  if (power < 1) throw ConfigError("--power must be >= 1");
  for (const double b : betas) {
    if (b <= 0.0) throw ConfigError("--beta entries must be > 0");
  }
  if (alpha * grid.back() >= 1.0) {
    throw UnstableFilter("power filter diverges on this grid: alpha * " +
                         short_num(grid.back()) + " >= 1");
  }

  std::vector<std::pair<std::string, spectral::FilterSpec>> columns;
  columns.emplace_back("all_pass", spectral::AllPass{});
  columns.emplace_back("low_pass", spectral::LowPassLinear{});
  columns.emplace_back("power_alpha=" + short_num(alpha) +
                           "_p=" + std::to_string(power),
                       spectral::HighPassPower{alpha, power});
  columns.emplace_back("poly_sum_alpha=" + short_num(alpha) +
                           "_p=" + std::to_string(power),
                       spectral::TrajectoryPolySum{alpha, power});
  for (const double b : betas) {
    columns.emplace_back("shift_inverse_beta=" + short_num(b),
                         spectral::HighPassShiftInverse{b});
  }

  std::ostringstream csv;
  csv << "lambda";
  for (const auto& [name, spec] : columns) csv << "," << name;
  csv << "\n";
  for (const double lambda : grid) {
    csv << io::format_double(lambda);
    for (const auto& [name, spec] : columns) {
      csv << "," << io::format_double(spectral::filter_response(spec, lambda));
    }
    csv << "\n";
  }
  io::write_text_file(out, csv.str());
  std::printf("filters: %zu responses over %zu grid points, wrote %s\n",
              columns.size(), grid.size(), out.c_str());
  return 0;
}

int cmd_squeeze(const std::string& config_path, const std::string& out) {
  const config::RunConfig rc = config::load_config(config_path);
  const harness::MixturePair data = dataset_from(rc);
  harness::SqueezeArtifact art =
      harness::squeeze(data.train, rc.net_config(), rc.ridge_beta, rc.net_seed);
  art.config_hash = rc.hash();
  io::save_squeeze(out, art);
  std::printf(
      "squeeze: %lld train / %lld test samples, %zu layers, config %s, "
      "wrote %s\n",
      static_cast<long long>(data.train.samples()),
      static_cast<long long>(data.test.samples()), art.real_stats.size(),
      hash_hex(art.config_hash).c_str(), out.c_str());
  return 0;
}

int cmd_distill(const std::string& config_path, const std::string& squeeze_path,
                const std::string& out, std::string loss_path, bool seed_given,
                std::uint64_t seed_flag) {
  const config::RunConfig rc = config::load_config(config_path);
  const std::uint64_t seed = resolve_seed(rc, seed_given, seed_flag);
  const harness::SqueezeArtifact art = load_matching_squeeze(squeeze_path, rc);
  const harness::MixturePair data = dataset_from(rc);
  const auto [synth, report] =
      cfm::distill(data.train, art, rc.cfm_config(), seed);
  io::save_synthetic(out, synth);
  if (loss_path.empty()) loss_path = out + ".loss.csv";
  io::save_loss_report(loss_path, report);
  const double final_loss = report.empty() ? 0.0 : report.back().l_total;
  std::printf(
      "distill: seed %llu, %lld synthetic rows, %zu optimizer steps, final "
      "loss %s, wrote %s (+ %s)\n",
      static_cast<unsigned long long>(seed),
      static_cast<long long>(synth.hs.rows()), report.size(),
      short_num(final_loss).c_str(), out.c_str(), loss_path.c_str());
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& squeeze_path,
             const std::string& synthetic_path, const std::string& out) {
  const config::RunConfig rc = config::load_config(config_path);
  const harness::SqueezeArtifact art = load_matching_squeeze(squeeze_path, rc);
  const cfm::SyntheticDataset synth = io::load_synthetic(synthetic_path);
  if (synth.config_hash != rc.hash()) {
    throw ConfigError("synthetic dataset " + synthetic_path +
                      " carries config hash " + hash_hex(synth.config_hash) +
                      " but the supplied config hashes to " +
                      hash_hex(rc.hash()));
  }
  const harness::MixturePair data = dataset_from(rc);
  const harness::EvalResult res = harness::evaluate(synth, art, data.test);

  nlohmann::json j;
  j["accuracy"] = res.accuracy;
  j["per_class"] = res.per_class;
  j["config_hash"] = hash_hex(rc.hash());
  j["seed"] = synth.seed;
  j["test_samples"] = data.test.samples();
  io::write_text_file(out, j.dump(2) + "\n");
  std::printf("eval: accuracy %.4f over %lld test samples, wrote %s\n",
              res.accuracy, static_cast<long long>(data.test.samples()),
              out.c_str());
  return 0;
}

int cmd_compare(const std::string& config_path, const std::string& out,
                const std::string& json_out, int jobs, bool ablation) {
  const config::RunConfig rc = config::load_config(config_path);
  if (jobs < 1) throw ConfigError("--jobs must be >= 1");
  const harness::MixturePair data = dataset_from(rc);
  const harness::SqueezeArtifact art =
      harness::squeeze(data.train, rc.net_config(), rc.ridge_beta, rc.net_seed);
  const harness::ComparisonTable table =
      ablation
          ? harness::run_loss_ablation(data, art, rc.cfm_config(),
                                       rc.compare_seeds, jobs)
          : harness::compare_filters(data, art,
                                     harness::standard_filter_set(
                                         rc.cfm_config()),
                                     rc.compare_seeds, jobs);
  io::write_text_file(out, harness::table_csv(table));
  if (!json_out.empty()) {
    io::write_text_file(json_out, harness::table_json(table));
  }
  for (const auto& row : table.rows) {
    std::printf("  %-34s mean %.4f  std %.4f\n", row.label.c_str(), row.mean,
                row.std_dev);
  }
  std::printf("compare: %zu rows x %zu seeds (%s), wrote %s\n",
              table.rows.size(), table.seeds.size(),
              ablation ? "loss ablation" : "filter set", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "spectral filtering view of dataset distillation: verification "
      "battery, filter grids, and the squeeze/distill/eval pipeline"};
  app.require_subcommand(1);

  // verify
  auto* verify_cmd =
      app.add_subcommand("verify", "run the derivation oracle battery");
  int seeds = 100;
  std::string report_path = "verify_report.json";
  verify_cmd->add_option("--seeds", seeds, "random instances per check");
  verify_cmd->add_option("--report", report_path, "JSON report path");

  // filters
  auto* filters_cmd =
      app.add_subcommand("filters", "export filter response curves as CSV");
  std::vector<double> betas{0.1};
  double alpha = 0.1;
  int power = 3;
  std::string grid_text = "0:2:41";
  std::string filters_out = "filters.csv";
  filters_cmd->add_option("--beta", betas,
                          "shift-inverse beta values (one column each)")
      ->delimiter(',');
  filters_cmd->add_option("--alpha", alpha, "step size for polynomial filters");
  filters_cmd->add_option("--power", power, "polynomial filter power");
  filters_cmd->add_option("--grid", grid_text, "lambda grid as MIN:MAX:STEPS");
  filters_cmd->add_option("--out", filters_out, "output CSV path");

  // squeeze
  auto* squeeze_cmd = app.add_subcommand(
      "squeeze", "generate the dataset, collect statistics, fit the head");
  std::string sq_config = "configs/default.toml";
  std::string sq_out = "squeeze.usq1";
  squeeze_cmd->add_option("--config", sq_config, "run configuration TOML");
  squeeze_cmd->add_option("--out", sq_out, "squeeze artifact path");

  // distill
  auto* distill_cmd =
      app.add_subcommand("distill", "optimize a synthetic set against a "
                                    "squeeze artifact");
  std::string di_config = "configs/default.toml";
  std::string di_squeeze = "squeeze.usq1";
  std::string di_out = "synthetic.uds1";
  std::string di_loss;
  std::uint64_t di_seed = 0;
  auto* di_seed_opt =
      distill_cmd->add_option("--seed", di_seed, "run seed override");
  distill_cmd->add_option("--config", di_config, "run configuration TOML");
  distill_cmd->add_option("--squeeze", di_squeeze, "squeeze artifact path");
  distill_cmd->add_option("--out", di_out, "synthetic dataset path");
  distill_cmd->add_option("--loss", di_loss,
                          "loss trace CSV path (default: OUT.loss.csv)");

  // eval
  auto* eval_cmd = app.add_subcommand(
      "eval", "train a head on a synthetic set and score the test split");
  std::string ev_config = "configs/default.toml";
  std::string ev_squeeze = "squeeze.usq1";
  std::string ev_synth = "synthetic.uds1";
  std::string ev_out = "eval.json";
  eval_cmd->add_option("--config", ev_config, "run configuration TOML");
  eval_cmd->add_option("--squeeze", ev_squeeze, "squeeze artifact path");
  eval_cmd->add_option("--synthetic", ev_synth, "synthetic dataset path");
  eval_cmd->add_option("--out", ev_out, "evaluation JSON path");

  // compare
  auto* compare_cmd = app.add_subcommand(
      "compare", "multi-seed filter comparison or loss-term ablation");
  std::string cp_config = "configs/default.toml";
  std::string cp_out = "compare.csv";
  std::string cp_json;
  int cp_jobs = static_cast<int>(
      std::max(1u, std::thread::hardware_concurrency()));
  bool cp_ablation = false;
  compare_cmd->add_option("--config", cp_config, "run configuration TOML");
  compare_cmd->add_option("--out", cp_out, "comparison CSV path");
  compare_cmd->add_option("--json", cp_json, "also write a JSON table here");
  compare_cmd->add_option("--jobs", cp_jobs, "worker pool size");
  compare_cmd->add_flag("--ablation", cp_ablation,
                        "ablate loss terms instead of comparing filters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are exit 2; --help stays 0
  }

  try {
    if (app.got_subcommand(verify_cmd)) return cmd_verify(seeds, report_path);
    if (app.got_subcommand(filters_cmd)) {
      return cmd_filters(betas, alpha, power, grid_text, filters_out);
    }
    if (app.got_subcommand(squeeze_cmd)) return cmd_squeeze(sq_config, sq_out);
    if (app.got_subcommand(distill_cmd)) {
      return cmd_distill(di_config, di_squeeze, di_out, di_loss,
                         di_seed_opt->count() > 0, di_seed);
    }
    if (app.got_subcommand(eval_cmd)) {
      return cmd_eval(ev_config, ev_squeeze, ev_synth, ev_out);
    }
    if (app.got_subcommand(compare_cmd)) {
      return cmd_compare(cp_config, cp_out, cp_json, cp_jobs, cp_ablation);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const InvalidConfig& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ChecksumMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected failure: %s\n", e.what());
    return 1;
  }
  return 2;
}
