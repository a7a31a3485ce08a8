#include <doctest.h>

#include "unidd/config.hpp"
#include "unidd/errors.hpp"

using namespace unidd;
using config::RunConfig;

TEST_CASE("empty input yields the built-in defaults") {
  const RunConfig cfg = config::parse_toml("");
  const RunConfig ref;
  CHECK(cfg.classes == 10);
  CHECK(cfg.d_in == 32);
  CHECK(cfg.widths == std::vector<Index>{32, 24});
  CHECK(cfg.ridge_beta == 0.05);
  CHECK(cfg.iterations == 150);
  CHECK(cfg.separation == 3.75);
  CHECK(cfg.beta_max == 5e-4);
  CHECK(cfg.axis == "per-batch");
  CHECK(cfg.filter == "shift-inverse");
  CHECK(cfg.compare_seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(cfg.hash() == ref.hash());
}

TEST_CASE("the documented default file parses back to the defaults") {
  const RunConfig from_text = config::parse_toml(config::default_toml());
  CHECK(from_text.hash() == RunConfig{}.hash());
  CHECK(from_text.canonical() == RunConfig{}.canonical());

  const RunConfig from_file =
      config::load_config(std::string(UNIDD_SOURCE_DIR) +
                          "/configs/default.toml");
  CHECK(from_file.hash() == RunConfig{}.hash());
}

TEST_CASE("values, comments, and whitespace are parsed") {
  const std::string text = R"(
# leading comment
[dataset]
classes = 4        # trailing comment
separation = 2.5
seed = 99

[net]
widths = [ 8, 6, 4 ]
mode = "spatial"
height = 4
width = 4

[cfm]
plain_gd = true
filter = "low-pass"
beta_floor = 1e-4

[run]
compare_seeds = [7]
)";
  const RunConfig cfg = config::parse_toml(text);
  CHECK(cfg.classes == 4);
  CHECK(cfg.separation == 2.5);
  CHECK(cfg.data_seed == 99);
  CHECK(cfg.widths == std::vector<Index>{8, 6, 4});
  CHECK(cfg.mode == "spatial");
  CHECK(cfg.height == 4);
  CHECK(cfg.plain_gd);
  CHECK(cfg.filter == "low-pass");
  CHECK(cfg.beta_floor == 1e-4);
  CHECK(cfg.compare_seeds == std::vector<std::uint64_t>{7});
  // untouched keys keep their defaults
  CHECK(cfg.d_in == 32);
  CHECK(cfg.eta == 0.1);
}

TEST_CASE("unknown sections and keys are rejected with line numbers") {
  CHECK_THROWS_AS(config::parse_toml("[bogus]\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[dataset]\nnope = 3\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("classes = 3\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[dataset]\nclasses\n"), ConfigError);
  try {
    config::parse_toml("[dataset]\n\nnope = 3\n");
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("duplicate keys and malformed values are rejected") {
  CHECK_THROWS_AS(config::parse_toml("[dataset]\nclasses = 3\nclasses = 4\n"),
                  ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[dataset]\nclasses = soon\n"),
                  ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[cfm]\nplain_gd = yes\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[net]\nmode = flat\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[net]\nwidths = []\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[dataset]\nseed = -3\n"), ConfigError);
}

TEST_CASE("enum-like strings are validated") {
  CHECK_THROWS_AS(config::parse_toml("[net]\nmode = \"conv\"\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[cfm]\naxis = \"epoch\"\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_toml("[cfm]\nfilter = \"band-pass\"\n"),
                  ConfigError);
  CHECK_NOTHROW(config::parse_toml("[cfm]\naxis = \"per-iteration\"\n"));
}

TEST_CASE("hash covers artifact-relevant keys and skips run seed and jobs") {
  const RunConfig base;
  RunConfig seeded = base;
  seeded.seed = 42;
  seeded.jobs = 8;
  CHECK(seeded.hash() == base.hash());

  RunConfig other = base;
  other.beta_max = 0.2;
  CHECK(other.hash() != base.hash());
  other = base;
  other.widths = {32, 24, 16};
  CHECK(other.hash() != base.hash());
  other = base;
  other.compare_seeds = {1, 2};
  CHECK(other.hash() != base.hash());
  other = base;
  other.data_seed = 2;
  CHECK(other.hash() != base.hash());
}

TEST_CASE("derived configs mirror the raw fields") {
  RunConfig cfg;
  cfg.mode = "spatial";
  cfg.height = 4;
  cfg.width = 4;
  cfg.widths = {2, 3};
  cfg.filter = "low-pass";
  cfg.axis = "per-iteration";
  cfg.plain_gd = true;

  const auto ncfg = cfg.net_config();
  CHECK(ncfg.mode == features::Mode::Spatial);
  CHECK(ncfg.height == 4);
  CHECK(ncfg.widths == cfg.widths);

  const auto ccfg = cfg.cfm_config();
  CHECK(ccfg.filter == cfm::MatchFilter::LowPass);
  CHECK(ccfg.axis == cfm::CurriculumAxis::PerIteration);
  CHECK(ccfg.optimizer.plain_gd);
  CHECK(ccfg.schedule.beta_max == cfg.beta_max);
  CHECK(ccfg.eta == cfg.eta);
}

TEST_CASE("a quoted hash character does not start a comment") {
  const RunConfig cfg = config::parse_toml("[net]\nmode = \"flat\" # ok\n");
  CHECK(cfg.mode == "flat");
}
