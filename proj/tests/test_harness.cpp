#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "helpers.hpp"
#include "unidd/harness.hpp"
#include "unidd/io.hpp"

using namespace unidd;
using namespace unidd::harness;
using unidd::test::random_matrix;

namespace {

cfm::CfmConfig small_cfm() {
  cfm::CfmConfig cfg;
  cfg.ipc = 4;
  cfg.batch_size = 10;
  cfg.iterations = 10;
  cfg.schedule.beta_max = 0.1;
  return cfg;
}

std::string tmp_path(const char* name) {
  return std::string("harness_tmp_") + name;
}

struct FileGuard {
  std::string path;
  ~FileGuard() {
    std::remove(path.c_str());
    std::remove((path + ".meta.json").c_str());
  }
};

std::string corrupt_at(const std::string& path, std::size_t offset) {
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  bytes.at(offset) = static_cast<char>(bytes.at(offset) ^ 0x40);
  const std::string out = path + ".bad";
  std::ofstream o(out, std::ios::binary);
  o.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return out;
}

}  // namespace

TEST_CASE("gaussian mixture generation is deterministic and class balanced") {
  const auto a = generate_gaussian_mixture(4, 8, 50, 6.0, 11);
  const auto b = generate_gaussian_mixture(4, 8, 50, 6.0, 11);
  CHECK((a.train.h - b.train.h).norm() == 0.0);
  CHECK((a.test.h - b.test.h).norm() == 0.0);

  CHECK(a.train.samples() == 200);
  CHECK(a.test.samples() == 48);  // quarter of 50, times 4 classes
  CHECK(a.train.input_width() == 8);
  CHECK(a.train.classes() == 4);
  CHECK(a.train.split == Split::Train);
  CHECK(a.test.split == Split::Test);
  for (const int count : a.train.meta.class_counts) CHECK(count == 50);
  for (Index i = 0; i < a.train.samples(); ++i) {
    CHECK(a.train.y.row(i).sum() == 1.0);
  }

  const auto c = generate_gaussian_mixture(4, 8, 50, 6.0, 12);
  CHECK((a.train.h - c.train.h).norm() > 0.0);
}

TEST_CASE("mixture class means sit near the separation radius") {
  const double sep = 10.0;
  const auto pair = generate_gaussian_mixture(3, 8, 200, sep, 21);
  for (Index j = 0; j < 3; ++j) {
    Matrix sum = Matrix::Zero(1, 8);
    int n = 0;
    for (Index i = 0; i < pair.train.samples(); ++i) {
      if (pair.train.y(i, j) == 1.0) {
        sum += pair.train.h.row(i);
        ++n;
      }
    }
    const double norm = (sum / n).norm();
    CHECK(std::abs(norm - sep) < 1.0);  // noise shrinks as 1/sqrt(200)
  }
}

TEST_CASE("mixture rejects bad parameters") {
  CHECK_THROWS_AS(generate_gaussian_mixture(1, 8, 50, 6.0, 1), InvalidConfig);
  CHECK_THROWS_AS(generate_gaussian_mixture(3, 0, 50, 6.0, 1), InvalidConfig);
  CHECK_THROWS_AS(generate_gaussian_mixture(3, 8, 1, 6.0, 1), InvalidConfig);
  CHECK_THROWS_AS(generate_gaussian_mixture(3, 8, 50, -1.0, 1), InvalidConfig);
}

TEST_CASE("well-separated classes are nearly perfectly classified") {
  const auto pair = generate_gaussian_mixture(2, 12, 150, 10.0, 31);
  features::NetConfig ncfg;
  ncfg.widths = {12, 12};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 32);
  const auto res = evaluate(to_synthetic(pair.train), sq, pair.test);
  CHECK(res.accuracy > 0.99);
}

TEST_CASE("zero separation gives chance-level accuracy") {
  const auto pair = generate_gaussian_mixture(5, 12, 200, 0.0, 41);
  features::NetConfig ncfg;
  ncfg.widths = {12, 10};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 42);
  const auto res = evaluate(to_synthetic(pair.train), sq, pair.test);
  CHECK(res.accuracy == doctest::Approx(0.2).epsilon(0.3));
  CHECK(std::abs(res.accuracy - 0.2) < 0.05);
}

TEST_CASE("squeeze is deterministic and records per-layer statistics") {
  const auto pair = generate_gaussian_mixture(3, 10, 60, 8.0, 51);
  features::NetConfig ncfg;
  ncfg.widths = {10, 10, 8};
  const auto a = squeeze(pair.train, ncfg, 0.05, 52);
  const auto b = squeeze(pair.train, ncfg, 0.05, 52);
  CHECK((a.head.w - b.head.w).norm() == 0.0);
  CHECK(a.config_hash == b.config_hash);
  REQUIRE(a.real_stats.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK((a.real_stats[l].psi.matrix() - b.real_stats[l].psi.matrix())
              .norm() == 0.0);
  }

  // Layer statistics are exactly corr_stats of the forward maps.
  const auto maps = features::forward(a.net, pair.train.h);
  const auto want = features::corr_stats(maps[0], pair.train.y);
  CHECK((a.real_stats[0].psi.matrix() - want.psi.matrix()).norm() == 0.0);
  CHECK((a.real_stats[0].phi - want.phi).norm() == 0.0);

  // Separable mixture: the ridge head fits the train split well.
  const Matrix feats = features::spatial_average(maps.back());
  const Matrix logits = feats * a.head.w;
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index pred = 0, truth = 0;
    logits.row(i).maxCoeff(&pred);
    pair.train.y.row(i).maxCoeff(&truth);
    if (pred == truth) ++correct;
  }
  CHECK(static_cast<double>(correct) / logits.rows() > 0.95);
}

TEST_CASE("the ridge head is a stationary point of the ridge objective") {
  Rng rng(61);
  const Matrix x = random_matrix(rng, 400, 24);
  Matrix y = Matrix::Zero(400, 3);
  for (Index i = 0; i < 400; ++i) y(i, i % 3) = 1.0;
  const double beta = 0.07;
  const auto head = fit_ridge_head(x, y, beta);
  const Matrix grad = x.transpose() * (x * head.w - y) + beta * head.w;
  CHECK(grad.norm() < 1e-8 * std::max(1.0, (x.transpose() * y).norm()));
}

TEST_CASE("evaluating the full train set reproduces the squeeze head") {
  const auto pair = generate_gaussian_mixture(4, 10, 80, 6.0, 71);
  features::NetConfig ncfg;
  ncfg.widths = {10, 8};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 72);

  // Reference: accuracy of the squeeze-phase head itself on the test split.
  const Matrix xt = features::spatial_average(
      features::forward(sq.net, pair.test.h).back());
  const Matrix logits = xt * sq.head.w;
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index pred = 0, truth = 0;
    logits.row(i).maxCoeff(&pred);
    pair.test.y.row(i).maxCoeff(&truth);
    if (pred == truth) ++correct;
  }
  const double reference =
      static_cast<double>(correct) / static_cast<double>(pair.test.samples());

  const auto res = evaluate(to_synthetic(pair.train), sq, pair.test);
  CHECK(res.accuracy == doctest::Approx(reference).epsilon(1e-6));

  // Accuracy is the class-count weighted mean of per-class accuracies.
  double weighted = 0.0;
  for (Index j = 0; j < 4; ++j) {
    double class_n = 0.0;
    for (Index i = 0; i < pair.test.samples(); ++i) {
      class_n += pair.test.y(i, j);
    }
    weighted += res.per_class[static_cast<std::size_t>(j)] * class_n;
  }
  CHECK(res.accuracy ==
        doctest::Approx(weighted / pair.test.samples()).epsilon(1e-12));
}

TEST_CASE("noise inputs evaluate far below the full-data reference") {
  const auto pair = generate_gaussian_mixture(5, 12, 100, 8.0, 81);
  features::NetConfig ncfg;
  ncfg.widths = {12, 10};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 82);
  const double full = evaluate(to_synthetic(pair.train), sq, pair.test).accuracy;

  Rng rng(83);
  cfm::SyntheticDataset noise;
  noise.hs = random_matrix(rng, 25, 12);
  noise.ys = Matrix::Zero(25, 5);
  for (Index i = 0; i < 25; ++i) noise.ys(i, i / 5) = 1.0;
  const double noisy = evaluate(noise, sq, pair.test).accuracy;
  CHECK(noisy < full - 0.10);
}

TEST_CASE("evaluate rejects empty synthetic sets and empty classes") {
  const auto pair = generate_gaussian_mixture(3, 8, 40, 6.0, 91);
  features::NetConfig ncfg;
  ncfg.widths = {8, 6};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 92);

  cfm::SyntheticDataset empty;
  empty.hs = Matrix(0, 8);
  empty.ys = Matrix(0, 3);
  CHECK_THROWS_AS(evaluate(empty, sq, pair.test), InvalidConfig);

  Rng rng(93);
  cfm::SyntheticDataset lopsided;
  lopsided.hs = random_matrix(rng, 6, 8);
  lopsided.ys = Matrix::Zero(6, 3);
  for (Index i = 0; i < 6; ++i) lopsided.ys(i, i % 2) = 1.0;  // class 2 empty
  CHECK_THROWS_AS(evaluate(lopsided, sq, pair.test), InvalidConfig);
}

TEST_CASE("the random baseline is the distillation initialization") {
  const auto pair = generate_gaussian_mixture(3, 8, 40, 6.0, 101);
  features::NetConfig ncfg;
  ncfg.widths = {8, 6};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 102);

  const auto subset = random_subset(pair.train, sq, 5, 7);
  REQUIRE(subset.hs.rows() == 15);
  for (Index r = 0; r < 15; ++r) {
    const Index cls = r / 5;
    CHECK(subset.ys(r, cls) == 1.0);
    int matches = 0;
    for (Index i = 0; i < pair.train.samples(); ++i) {
      if ((pair.train.h.row(i) - subset.hs.row(r)).norm() == 0.0 &&
          pair.train.y(i, cls) == 1.0) {
        ++matches;
      }
    }
    CHECK(matches == 1);
  }

  cfm::CfmConfig cfg = small_cfm();
  cfg.ipc = 5;
  cfg.batch_size = 5;
  cfg.iterations = 0;
  const auto [direct, report] = cfm::distill(pair.train, sq, cfg, 7);
  CHECK((direct.hs - subset.hs).norm() == 0.0);
}

TEST_CASE("zero-weight losses leave the synthetic data at initialization") {
  const auto pair = generate_gaussian_mixture(3, 8, 40, 6.0, 111);
  features::NetConfig ncfg;
  ncfg.widths = {8, 6};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 112);

  cfm::CfmConfig cfg = small_cfm();
  cfg.ipc = 4;
  cfg.batch_size = 6;
  cfg.iterations = 5;
  cfg.eta = 0.0;
  cfg.use_cls = false;
  const auto [frozen, r1] = cfm::distill(pair.train, sq, cfg, 5);
  cfg.iterations = 0;
  const auto [init, r2] = cfm::distill(pair.train, sq, cfg, 5);
  CHECK((frozen.hs - init.hs).norm() == 0.0);
}

TEST_CASE("comparison tables are deterministic and reduced in config order") {
  const auto pair = generate_gaussian_mixture(3, 8, 60, 5.0, 121);
  features::NetConfig ncfg;
  ncfg.widths = {8, 6};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 122);

  cfm::CfmConfig cfg = small_cfm();
  cfg.ipc = 4;
  cfg.batch_size = 6;
  cfg.iterations = 8;
  const std::vector<NamedConfig> configs{
      {"run-a", cfg}, {"run-a-again", cfg}, {"frozen", [&] {
         cfm::CfmConfig f = cfg;
         f.iterations = 0;
         return f;
       }()}};
  const std::vector<std::uint64_t> seeds{1, 2, 3};

  const auto table = compare_filters(pair, sq, configs, seeds, 1);
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0].label == "run-a");
  CHECK(table.rows[1].label == "run-a-again");
  REQUIRE(table.rows[0].accuracies.size() == 3);

  // Identical configs produce identical per-seed results.
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    CHECK(table.rows[0].accuracies[i] == table.rows[1].accuracies[i]);
  }
  CHECK(std::abs(table.rows[0].mean - table.rows[1].mean) <=
        2.0 * pooled_std(table.rows[0].std_dev, table.rows[1].std_dev));

  // A worker pool must not change the result.
  const auto parallel = compare_filters(pair, sq, configs, seeds, 3);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      CHECK(parallel.rows[r].accuracies[i] == table.rows[r].accuracies[i]);
    }
  }

  CHECK_THROWS_AS(compare_filters(pair, sq, {configs[0]}, seeds, 1),
                  InvalidConfig);
  CHECK_THROWS_AS(compare_filters(pair, sq, configs, {}, 1), InvalidConfig);
}

TEST_CASE("the standard filter set covers curriculum, constants, and low-pass") {
  const auto set = standard_filter_set(small_cfm());
  REQUIRE(set.size() == 7);
  CHECK(set[0].label == "cfm-curriculum");
  CHECK(set[1].label == "const-beta-0.1");
  CHECK(set[4].label == "const-beta-0.0001");
  CHECK(set[5].label == "low-pass");
  CHECK(set[5].cfg.filter == cfm::MatchFilter::LowPass);
  CHECK(set[6].label == "random-subset");
  CHECK(set[6].cfg.iterations == 0);
  // Constant rows pin the schedule at their beta.
  for (int i = 1; i <= 4; ++i) {
    const auto& sched = set[static_cast<std::size_t>(i)].cfg.schedule;
    CHECK(sched.beta_max == sched.beta_floor);
    for (int t = 0; t <= 10; ++t) {
      CHECK(cfm::beta_at({sched.beta_max, 10, sched.beta_floor}, t) ==
            sched.beta_max);
    }
  }
}

TEST_CASE("the loss ablation runs its three settings") {
  const auto pair = generate_gaussian_mixture(3, 8, 60, 6.0, 131);
  features::NetConfig ncfg;
  ncfg.widths = {8, 6};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 132);

  cfm::CfmConfig cfg = small_cfm();
  cfg.ipc = 4;
  cfg.batch_size = 6;
  cfg.iterations = 10;
  const auto table = run_loss_ablation(pair, sq, cfg, {1, 2}, 1);
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0].label == "filter-only");
  CHECK(table.rows[1].label == "filter+signal");
  CHECK(table.rows[2].label == "all-terms");
  for (const auto& row : table.rows) {
    for (const double a : row.accuracies) {
      CHECK(std::isfinite(a));
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }
  // All-terms training stays at or above chance.
  CHECK(table.rows[2].mean > 1.0 / 3.0 - 0.05);
}

TEST_CASE("mean, std, and pooled std match hand values") {
  CHECK(mean_of({1.0, 2.0, 3.0}) == doctest::Approx(2.0));
  CHECK(std_of({1.0, 2.0, 3.0}) == doctest::Approx(1.0));
  CHECK(std_of({5.0}) == 0.0);
  CHECK(mean_of({}) == 0.0);
  CHECK(pooled_std(3.0, 4.0) == doctest::Approx(std::sqrt(12.5)));
}

TEST_CASE("comparison tables serialize to csv and json") {
  ComparisonTable table;
  table.seeds = {1, 2};
  table.rows.push_back(RunRow{"a", {0.5, 0.7}, 0.6, 0.1414});
  table.rows.push_back(RunRow{"b", {0.4, 0.4}, 0.4, 0.0});
  const std::string csv = table_csv(table);
  CHECK(csv.find("label,n_seeds,mean,std,seed_1,seed_2\n") == 0);
  CHECK(csv.find("a,2,0.59999999999999998,") != std::string::npos);

  const auto j = nlohmann::json::parse(table_json(table));
  CHECK(j["seeds"].size() == 2);
  CHECK(j["rows"][1]["label"] == "b");
  CHECK(j["rows"][0]["accuracies"][1] == 0.7);
}

// ---------------------------------------------------------------------------
// Binary artifact round-trips.

TEST_CASE("datasets round-trip bit-exactly through the binary format") {
  const auto pair = generate_gaussian_mixture(3, 6, 20, 4.0, 141);
  const FileGuard guard{tmp_path("ds.bin")};
  io::save_dataset(guard.path, pair.train);
  const auto loaded = io::load_dataset(guard.path);
  CHECK((loaded.h - pair.train.h).norm() == 0.0);
  CHECK((loaded.y - pair.train.y).norm() == 0.0);
  CHECK(loaded.split == Split::Train);
  REQUIRE(loaded.meta.class_counts.size() == 3);
  for (const int n : loaded.meta.class_counts) CHECK(n == 20);

  io::save_dataset(guard.path, pair.test);
  CHECK(io::load_dataset(guard.path).split == Split::Test);
}

TEST_CASE("dataset loading rejects damage and malformed content") {
  const auto pair = generate_gaussian_mixture(2, 4, 10, 4.0, 151);
  const FileGuard guard{tmp_path("dmg.bin")};
  io::save_dataset(guard.path, pair.train);

  // Truncation.
  {
    const std::string bytes = io::read_text_file(guard.path);
    const FileGuard trunc{guard.path + ".trunc"};
    std::ofstream out(trunc.path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(io::load_dataset(trunc.path), FormatError);
  }
  // A flipped payload byte fails the checksum.
  {
    const FileGuard bad{corrupt_at(guard.path, 64)};
    CHECK_THROWS_AS(io::load_dataset(bad.path), ChecksumMismatch);
  }
  // A flipped magic byte fails before the checksum.
  {
    const FileGuard bad{corrupt_at(guard.path, 0)};
    CHECK_THROWS_AS(io::load_dataset(bad.path), FormatError);
  }
  CHECK_THROWS_AS(io::load_dataset("does-not-exist.bin"), FormatError);

  // Labels that are not one-hot are refused at save time.
  Dataset broken = pair.train;
  broken.y(0, 0) = 0.5;
  CHECK_THROWS_AS(io::save_dataset(guard.path, broken), FormatError);
}

TEST_CASE("layer statistics round-trip through UDD1") {
  Rng rng(161);
  const Matrix psi = unidd::test::random_psd(rng, 5, 8);
  const Matrix phi = random_matrix(rng, 5, 3);
  const features::CorrStats cs{spectral::PsdMatrix(psi), phi};
  const FileGuard guard{tmp_path("stats.bin")};
  io::save_corr_stats(guard.path, cs);
  const auto loaded = io::load_corr_stats(guard.path);
  CHECK((loaded.psi.matrix() - psi).norm() == 0.0);
  CHECK((loaded.phi - phi).norm() == 0.0);
}

TEST_CASE("squeeze artifacts round-trip and rebuild the same net") {
  const auto pair = generate_gaussian_mixture(3, 8, 40, 6.0, 171);
  features::NetConfig ncfg;
  ncfg.widths = {8, 7, 5};
  const auto sq = squeeze(pair.train, ncfg, 0.03, 172);
  const FileGuard guard{tmp_path("sq.bin")};
  io::save_squeeze(guard.path, sq);
  const auto loaded = io::load_squeeze(guard.path);

  CHECK(loaded.config_hash == sq.config_hash);
  CHECK(loaded.ridge_beta == sq.ridge_beta);
  CHECK((loaded.head.w - sq.head.w).norm() == 0.0);
  REQUIRE(loaded.real_stats.size() == sq.real_stats.size());
  for (std::size_t l = 0; l < sq.real_stats.size(); ++l) {
    CHECK((loaded.real_stats[l].psi.matrix() -
           sq.real_stats[l].psi.matrix()).norm() == 0.0);
    CHECK((loaded.real_stats[l].phi - sq.real_stats[l].phi).norm() == 0.0);
  }
  // The rebuilt net produces bit-identical activations.
  const auto a = features::forward(sq.net, pair.test.h);
  const auto b = features::forward(loaded.net, pair.test.h);
  for (std::size_t l = 0; l < a.size(); ++l) {
    CHECK((a[l].data - b[l].data).norm() == 0.0);
  }

  const FileGuard bad{corrupt_at(guard.path, 30)};
  CHECK_THROWS(io::load_squeeze(bad.path));
}

TEST_CASE("synthetic datasets round-trip with their provenance") {
  const auto pair = generate_gaussian_mixture(3, 8, 40, 6.0, 181);
  features::NetConfig ncfg;
  ncfg.widths = {8, 6};
  const auto sq = squeeze(pair.train, ncfg, 0.05, 182);
  cfm::CfmConfig cfg = small_cfm();
  cfg.ipc = 4;
  cfg.batch_size = 6;
  cfg.iterations = 4;
  auto [synth, report] = cfm::distill(pair.train, sq, cfg, 9);
  synth.config_hash = 0xfeedULL;

  const FileGuard guard{tmp_path("synth.bin")};
  io::save_synthetic(guard.path, synth);
  const auto loaded = io::load_synthetic(guard.path);
  CHECK((loaded.hs - synth.hs).norm() == 0.0);
  CHECK((loaded.ys - synth.ys).norm() == 0.0);
  CHECK(loaded.seed == 9);
  CHECK(loaded.config_hash == 0xfeedULL);
  REQUIRE(loaded.batch_betas.size() == synth.batch_betas.size());
  for (std::size_t i = 0; i < synth.batch_betas.size(); ++i) {
    CHECK(loaded.batch_betas[i] == synth.batch_betas[i]);
  }

  // Saving twice produces byte-identical files.
  const FileGuard again{tmp_path("synth2.bin")};
  io::save_synthetic(again.path, synth);
  CHECK(io::read_text_file(guard.path) == io::read_text_file(again.path));
  CHECK(io::read_text_file(guard.path + ".meta.json") ==
        io::read_text_file(again.path + ".meta.json"));
}

TEST_CASE("loss reports serialize to the documented csv layout") {
  cfm::LossReport report;
  report.push_back({1, 0.1, 2.0, 3.0, 4.0, 2.7});
  report.push_back({2, 0.05, 1.0, 2.0, 3.0, 1.5});
  const FileGuard guard{tmp_path("report.csv")};
  io::save_loss_report(guard.path, report);
  const std::string csv = io::read_text_file(guard.path);
  CHECK(csv.find("t,beta,l_cls,l_filter,l_signal,l_total\n") == 0);
  CHECK(csv.find("\n1,0.1") != std::string::npos);
  CHECK(csv.find("\n2,0.05") != std::string::npos);
}
