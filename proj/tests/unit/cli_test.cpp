#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <gtest/gtest.h>
#include <spdlog/spdlog.h>

#include "hierarchy_oracle.hpp"
#include "micro_model.hpp"
#include "pemi/commands.hpp"

namespace pemi {
namespace {

namespace fs = std::filesystem;

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string source_path(const std::string& rel) { return (fs::path(PEMI_SOURCE_DIR) / rel).string(); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    spdlog::set_level(spdlog::level::err);
    dir_ = fs::temp_directory_path() /
           ("pemi_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Micro checkpoint with non-trivial weight units.
  std::string micro_checkpoint(bool random_units = true) {
    PemiModel m = testing::micro_model();
    if (random_units) {
      Rng rng(3);
      std::vector<float> u(m.verbalizer.units[0].size());
      for (auto& v : u) v = static_cast<float>(rng.normal(0.0, 1.0));
      m.verbalizer.units[0] = TensorF({u.size()}, u, true);
    }
    const std::string dir = (dir_ / "ckpt").string();
    save_checkpoint(m, dir);
    return dir;
  }

  std::string write_micro_data(const std::string& name, const std::vector<Instance>& rows) {
    const std::string path = (dir_ / name).string();
    write_dataset(path, rows);
    return path;
  }

  fs::path dir_;
};

// ---------------------------------------------------------------------------
// Config

TEST(RunConfigTest, DefaultsWhenEmpty) {
  std::istringstream in("");
  const RunConfig c = parse_run_config(in);
  EXPECT_EQ(c.layout, std::string(kDefaultLayout));
  EXPECT_EQ(c.encoder.d_model, 64u);
  EXPECT_EQ(c.encoder.init_std, 0.02);
  EXPECT_EQ(c.train.batch_size, 8u);
  EXPECT_EQ(c.train.max_epochs, 15u);
  EXPECT_EQ(c.train.lr, 1e-3);
  EXPECT_TRUE(c.train.lambdas.empty());
  EXPECT_EQ(c.normalization, Normalization::kSoftmax);
}

TEST(RunConfigTest, ParsesKeysCommentsAndRelativePaths) {
  std::istringstream in(
      "# comment\n"
      "layout = P:2 A1 MASK SEP A2 P:2\n"
      "encoder.d_model = 16   # trailing\n"
      "encoder.init_std = 0.125\n"
      "train.lambdas = 1, 0.5\n"
      "train.batch = 4\n"
      "hlr.normalization = l1\n"
      "paths.hierarchy = data/h.json\n"
      "paths.out = /abs/out\n");
  const RunConfig c = parse_run_config(in, "/base/cfg");
  EXPECT_EQ(c.layout, "P:2 A1 MASK SEP A2 P:2");
  EXPECT_EQ(c.encoder.d_model, 16u);
  EXPECT_EQ(c.encoder.init_std, 0.125);
  EXPECT_EQ(c.train.lambdas, (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(c.train.batch_size, 4u);
  EXPECT_EQ(c.normalization, Normalization::kL1);
  EXPECT_EQ(c.paths.hierarchy, "/base/cfg/data/h.json");
  EXPECT_EQ(c.paths.out, "/abs/out");
}

TEST(RunConfigTest, UnknownKeyNamesTheLine) {
  std::istringstream in("train.lr = 0.1\ntrain.learning_rate = 0.1\n");
  try {
    parse_run_config(in, {}, "x.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("train.learning_rate"), std::string::npos);
  }
}

TEST(RunConfigTest, BadValuesAreConfigErrors) {
  for (const char* text : {"train.batch = -1\n", "train.lr = fast\n", "hlr.warm_start = maybe\n", "layout = P:2 A1\n",
                           "train.batch = 0\n", "no equals sign\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_run_config(in), ConfigError) << text;
  }
}

TEST(RunConfigTest, ShippedConfigsParse) {
  const RunConfig toy = load_run_config(source_path("configs/toy.cfg"));
  EXPECT_EQ(toy.encoder.init_std, 0.125);
  EXPECT_TRUE(fs::exists(toy.paths.hierarchy));
  const RunConfig pdtb = load_run_config(source_path("configs/pdtb2.cfg"));
  EXPECT_EQ(pdtb.encoder.d_model, 768u);
  EXPECT_TRUE(fs::exists(pdtb.paths.hierarchy));
}

TEST(LogLevelTest, EnvValues) {
  EXPECT_EQ(log_level_from_env(nullptr), spdlog::level::info);
  EXPECT_EQ(log_level_from_env("error"), spdlog::level::err);
  EXPECT_EQ(log_level_from_env("debug"), spdlog::level::debug);
  EXPECT_THROW(log_level_from_env("loud"), ConfigError);
}

TEST(LevelRangeTest, Forms) {
  EXPECT_EQ(parse_level_range("", 3).first, 0u);
  EXPECT_EQ(parse_level_range("", 3).last, 2u);
  EXPECT_EQ(parse_level_range("2..3", 3).first, 1u);
  EXPECT_EQ(parse_level_range("2", 3).last, 1u);
  for (const char* bad : {"0..2", "3..2", "1..4", "a..b", "1...2", ".."}) {
    EXPECT_THROW(parse_level_range(bad, 3), LevelError) << bad;
  }
}

// ---------------------------------------------------------------------------
// train

TEST_F(CliTest, MissingHierarchyNamesTheKey) {
  RunConfig c;
  c.paths.out = (dir_ / "out").string();
  std::ostringstream out;
  try {
    cmd_train(c, out);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("paths.hierarchy"), std::string::npos);
    EXPECT_EQ(e.exit_code(), ExitCode::kConfig);
  }
}

RunConfig tiny_run(const fs::path& dir) {
  const LabelHierarchy h = testing::planted_hierarchy();
  save_hierarchy(h, (dir / "h.json").string());
  const DatasetBundle b = generate_synthetic(h, 10, 60, 5);
  write_dataset((dir / "train.jsonl").string(), b.train);
  write_dataset((dir / "dev.jsonl").string(), b.dev);
  write_dataset((dir / "test.jsonl").string(), b.test);
  std::istringstream in(
      "encoder.d_model = 16\nencoder.n_layers = 2\nencoder.n_heads = 2\nencoder.d_ff = 32\n"
      "encoder.max_seq_len = 48\ntrain.max_steps = 12\ntrain.eval_step = 5\ntrain.lr = 0.01\n"
      "paths.hierarchy = h.json\npaths.train = train.jsonl\npaths.dev = dev.jsonl\npaths.test = test.jsonl\n");
  return parse_run_config(in, dir);
}

TEST_F(CliTest, TrainWritesCheckpointLogAndTestMetrics) {
  RunConfig c = tiny_run(dir_);
  c.paths.out = (dir_ / "run").string();
  std::ostringstream out;
  const TrainSummary s = cmd_train(c, out);
  EXPECT_EQ(s.fit.total_steps, 12u);
  for (const char* f : {"encoder.bin", "trainable.bin", "hierarchy.json", "vocab.tsv", "layout.txt",
                        "train_log.jsonl", "test_metrics.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  std::ifstream log(dir_ / "run" / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(nlohmann::json::parse(j.dump()), j);
  }
  EXPECT_EQ(lines, 3u);  // steps 5, 10, final 12
  const PemiModel loaded = load_checkpoint((dir_ / "run").string());
  EXPECT_EQ(loaded.hierarchy, testing::planted_hierarchy());
}

TEST_F(CliTest, RerunIsByteIdentical) {
  RunConfig c = tiny_run(dir_);
  std::string last[2];
  for (int run = 0; run < 2; ++run) {
    c.paths.out = (dir_ / ("run" + std::to_string(run))).string();
    std::ostringstream out;
    cmd_train(c, out);
    std::istringstream lines(read_bytes(dir_ / ("run" + std::to_string(run)) / "train_log.jsonl"));
    for (std::string line; std::getline(lines, line);) last[run] = line;
  }
  EXPECT_FALSE(last[0].empty());
  EXPECT_EQ(last[0], last[1]);
  for (const auto& entry : fs::directory_iterator(dir_ / "run0")) {
    const auto name = entry.path().filename();
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(dir_ / "run1" / name)) << name;
  }
}

// ---------------------------------------------------------------------------
// eval and predict

TEST_F(CliTest, EvalOnOwnPredictionsIsPerfect) {
  // Every parent owns every child, so any predicted pair is a valid path.
  const LabelHierarchy full({{"X", "Y"}, {"a", "b", "c", "d"}},
                            {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}, {0, 0, 3}, {0, 1, 0}, {0, 1, 1}, {0, 1, 2}, {0, 1, 3}});
  const PemiModel micro = testing::micro_model();
  const PemiModel m = init_model(micro.encoder, micro.layout, micro.vocab, full, 8);
  save_checkpoint(m, (dir_ / "full").string());
  std::vector<Instance> rows;
  for (const auto& inst : testing::micro_instances(testing::micro_hierarchy())) {
    const auto p = predict(m, inst.arg1, inst.arg2);
    rows.push_back(make_instance(full, inst.arg1, inst.arg2, {full.name(0, p[0].label), full.name(1, p[1].label)}));
  }
  std::ostringstream out;
  const auto metrics = cmd_eval((dir_ / "full").string(), write_micro_data("own.jsonl", rows), "", out);
  for (const auto& lm : metrics) {
    EXPECT_EQ(lm.accuracy, 1.0);
    for (std::size_t c = 0; c < lm.f1.size(); ++c) {
      std::size_t gold = 0;
      for (std::size_t k = 0; k < lm.f1.size(); ++k) gold += lm.confusion[c][k];
      // Classes absent from both gold and predictions score 0 by convention.
      EXPECT_EQ(lm.f1[c], gold > 0 ? 1.0 : 0.0);
    }
  }
}

TEST_F(CliTest, EvalWritesJsonThatIsAFixedPoint) {
  const std::string ckpt = micro_checkpoint();
  const std::string data = write_micro_data("d.jsonl", testing::micro_instances(testing::micro_hierarchy()));
  std::ostringstream out;
  const auto metrics = cmd_eval(ckpt, data, (dir_ / "m.json").string(), out);
  const auto j = nlohmann::json::parse(read_bytes(dir_ / "m.json"));
  EXPECT_EQ(nlohmann::json::parse(j.dump()), j);
  ASSERT_EQ(j["levels"].size(), 2u);
  EXPECT_EQ(j["levels"][1]["macro_f1"].get<double>(), metrics[1].macro_f1);
  EXPECT_EQ(j["levels"][1]["per_class"].size(), 4u);
  EXPECT_NE(out.str().find("Level 2: macro-F1"), std::string::npos);
}

TEST_F(CliTest, EvalRejectsForeignLabels) {
  const std::string ckpt = micro_checkpoint();
  const std::string path = (dir_ / "foreign.jsonl").string();
  std::ofstream(path) << R"({"arg1": "a", "arg2": "b", "labels": ["X", "d"]})" << "\n";
  std::ostringstream out;
  try {
    cmd_eval(ckpt, path, "", out);
    FAIL() << "expected CompatibilityError";
  } catch (const CompatibilityError& e) {
    EXPECT_EQ(e.exit_code(), ExitCode::kData);
  }
}

TEST_F(CliTest, PredictArgmaxMatchesEvalConfusion) {
  const std::string ckpt = micro_checkpoint();
  const auto h = testing::micro_hierarchy();
  for (const auto& inst : testing::micro_instances(h)) {
    std::ostringstream out;
    const auto p = cmd_predict(ckpt, inst.arg1, inst.arg2, out);
    const auto metrics = cmd_eval(ckpt, write_micro_data("one.jsonl", {inst}), "", out);
    for (std::size_t z = 0; z < p.size(); ++z) {
      double sum = 0.0;
      for (double v : p[z].probabilities) sum += v;
      EXPECT_NEAR(sum, 1.0, 1e-6);
      EXPECT_EQ(metrics[z].confusion[inst.label_ids[z]][p[z].label], 1u);
    }
  }
}

TEST(PredictScalingTest, PositiveScalingOfHPrimeKeepsTheOrdering) {
  const PemiModel m = testing::micro_model();
  const auto matrices = refined_matrices(m);
  const auto input = apply_template(m.layout, "the cat sat", "far away", m.vocab, m.encoder.config.max_seq_len);
  const auto trace = forward(m.encoder, input, m.prompts.with_requires_grad(false));
  auto order = [](const std::vector<double>& p) {
    std::vector<std::size_t> o(p.size());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = i;
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    return o;
  };
  for (const auto& mat : matrices) {
    const auto base = order(predict_level(trace.h_prime, mat));
    for (double c : {0.25, 3.0, 40.0}) {
      auto v = trace.h_prime.to_vector();
      for (auto& x : v) x = static_cast<float>(x * c);
      EXPECT_EQ(order(predict_level(TensorF(trace.h_prime.shape(), v), mat)), base) << c;
    }
  }
}

// ---------------------------------------------------------------------------
// inspect-weights

// Parent | child (pp.pp), child (pp.pp)
std::vector<std::vector<double>> parse_table(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  const std::regex share(R"(([^,]+?) \((\d+\.\d\d)\))");
  while (std::getline(in, line)) {
    const auto bar = line.find(" | ");
    if (bar == std::string::npos || line.rfind("Label", 0) == 0) continue;
    std::vector<double> row;
    const std::string rest = line.substr(bar + 3);
    for (std::sregex_iterator it(rest.begin(), rest.end(), share), end; it != end; ++it) row.push_back(std::stod((*it)[2]));
    rows.push_back(row);
  }
  return rows;
}

TEST_F(CliTest, UntrainedRowsAreUniform) {
  const std::string ckpt = micro_checkpoint(false);
  std::ostringstream out;
  cmd_inspect_weights(ckpt, "", out);
  const auto rows = parse_table(out.str());
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<double>{33.34, 33.33, 33.33}));
  EXPECT_EQ(rows[1], (std::vector<double>{50.0, 50.0}));
  EXPECT_NE(out.str().find("X     | a (33.34), b (33.33), c (33.33)"), std::string::npos) << out.str();
}

TEST_F(CliTest, PdtbShapedRowsSumToOneHundred) {
  const LabelHierarchy h = load_hierarchy(source_path("data/pdtb2_hierarchy.json"));
  PemiModel m = testing::micro_model();
  m = init_model(m.encoder, m.layout, m.vocab, h, 4);
  Rng rng(17);
  for (auto& u : m.verbalizer.units) {
    std::vector<float> v(u.size());
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, 2.0));
    u = TensorF({v.size()}, v, true);
  }
  save_checkpoint(m, (dir_ / "p").string());
  std::ostringstream out;
  const auto tables = cmd_inspect_weights((dir_ / "p").string(), "", out);
  ASSERT_EQ(tables.size(), 2u);
  const auto rows = parse_table(out.str());
  ASSERT_EQ(rows.size(), 4u + 11u);
  for (const auto& r : rows) {
    double sum = 0.0;
    for (double v : r) sum += v;
    EXPECT_NEAR(sum, 100.0, 0.01);
  }
  // Connectives with a single sense parent do not appear as parents.
  std::ostringstream level2;
  cmd_inspect_weights((dir_ / "p").string(), "2..3", level2);
  EXPECT_EQ(parse_table(level2.str()).size(), 11u);
  EXPECT_TRUE(std::regex_search(out.str(), std::regex(R"(\nComparison +\| Concession \(\d+\.\d\d\), Contrast \(\d+\.\d\d\)\n)")))
      << out.str();
}

TEST(InspectFormatTest, SingletonParentIsOneHundred) {
  const LabelHierarchy h({{"P", "Q"}, {"a", "b", "c"}}, {{0, 0, 0}, {0, 1, 1}, {0, 1, 2}});
  VerbalizerState<float> s;
  s.units = {TensorF({3}, {1.7f, 0.0f, 0.0f}, true)};
  const auto rows = weight_table(s, h, 0);
  EXPECT_EQ(rows[0].children[0].hundredths, 10000);
  EXPECT_NE(format_weight_table(rows, 0).find("P     | a (100.00)"), std::string::npos);
  EXPECT_THROW(weight_table(s, h, 1), LevelError);
}

TEST(InspectFormatTest, LargestRemainderRounding) {
  EXPECT_EQ(round_percentages({1, 1, 1}), (std::vector<std::int64_t>{3334, 3333, 3333}));
  EXPECT_EQ(round_percentages({0.5183, 0.4817}), (std::vector<std::int64_t>{5183, 4817}));
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> w(1 + rng.below(12));
    for (auto& x : w) x = rng.uniform();
    const auto pct = round_percentages(w);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      total += pct[i];
      double sum = 0.0;
      for (double x : w) sum += x;
      EXPECT_LE(std::abs(pct[i] - w[i] / sum * 10000.0), 1.0);
    }
    EXPECT_EQ(total, 10000);
  }
}

TEST_F(CliTest, InspectRejectsBadRanges) {
  const std::string ckpt = micro_checkpoint();
  std::ostringstream out;
  EXPECT_THROW(cmd_inspect_weights(ckpt, "1..3", out), LevelError);
  EXPECT_THROW(cmd_inspect_weights(ckpt, "2", out), LevelError);
}

// ---------------------------------------------------------------------------
// export-embeddings

TEST(PcaTest, PlanarPointsKeepTheirDistances) {
  Rng rng(4);
  const std::size_t d = 9;
  // Orthonormal pair by Gram-Schmidt.
  std::vector<double> u(d), v(d);
  for (auto& x : u) x = rng.normal(0.0, 1.0);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
  };
  const double nu = std::sqrt(dot(u, u));
  for (auto& x : u) x /= nu;
  const double uv = dot(u, v);
  for (std::size_t i = 0; i < d; ++i) v[i] -= uv * u[i];
  const double nv = std::sqrt(dot(v, v));
  for (auto& x : v) x /= nv;

  std::vector<double> offset(d);
  for (auto& x : offset) x = rng.normal(0.0, 3.0);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 25; ++i) {
    const double a = rng.normal(0.0, 2.0), b = rng.normal(0.0, 0.7);
    std::vector<double> p(d);
    for (std::size_t c = 0; c < d; ++c) p[c] = offset[c] + a * u[c] + b * v[c];
    pts.push_back(p);
  }
  const Projection proj = pca_2d(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      double orig = 0.0;
      for (std::size_t c = 0; c < d; ++c) orig += (pts[i][c] - pts[j][c]) * (pts[i][c] - pts[j][c]);
      const double dx = proj.points[i][0] - proj.points[j][0], dy = proj.points[i][1] - proj.points[j][1];
      EXPECT_NEAR(std::sqrt(dx * dx + dy * dy), std::sqrt(orig), 1e-6);
    }
  }
  EXPECT_GE(proj.variances[0], proj.variances[1]);
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream cl(line);
    for (std::string cell; std::getline(cl, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

TEST_F(CliTest, ExportRowsAndParentMeans) {
  const std::string ckpt = micro_checkpoint();
  std::ostringstream out;
  const auto e = cmd_export_embeddings(ckpt, "", (dir_ / "emb").string(), out);
  const auto rows = csv_rows(read_bytes(e.csv));
  ASSERT_EQ(rows.size(), 2u + 4u);

  const PemiModel m = load_checkpoint(ckpt);
  const auto& h = m.hierarchy;
  const auto units = m.verbalizer.units[0].to_vector();
  const auto w = testing::brute_force_weights(h, std::vector<double>(units.begin(), units.end()), 0,
                                              Normalization::kSoftmax);
  const std::size_t d = m.encoder.config.d_model;
  for (std::size_t p = 0; p < 2; ++p) {
    ASSERT_EQ(rows[p][0], "1");
    for (std::size_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (std::size_t k = 0; k < 4; ++k) mean += w[p][k] * std::stod(rows[2 + k][2 + c]);
      EXPECT_NEAR(std::stod(rows[p][2 + c]), mean, 1e-6);
    }
  }

  const std::string svg = read_bytes(e.svg);
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = svg.find(needle); pos != std::string::npos; pos = svg.find(needle, pos + 1)) ++n;
    return n;
  };
  EXPECT_EQ(count("class=\"parent\""), 2u);
  EXPECT_EQ(count("class=\"child\""), 4u);
}

TEST_F(CliTest, ExportRowCountFollowsTheRange) {
  const LabelHierarchy h = load_hierarchy(source_path("data/pdtb2_hierarchy.json"));
  PemiModel m = testing::micro_model();
  save_checkpoint(init_model(m.encoder, m.layout, m.vocab, h, 4), (dir_ / "p").string());
  std::ostringstream out;
  EXPECT_EQ(csv_rows(read_bytes(cmd_export_embeddings((dir_ / "p").string(), "2..3", "", out).csv)).size(), 113u);
  EXPECT_EQ(csv_rows(read_bytes(cmd_export_embeddings((dir_ / "p").string(), "1", "", out).csv)).size(), 4u);
  EXPECT_EQ(csv_rows(read_bytes(cmd_export_embeddings((dir_ / "p").string(), "", "", out).csv)).size(), 117u);
  EXPECT_THROW(cmd_export_embeddings((dir_ / "p").string(), "2..4", "", out), LevelError);
}

TEST(CsvTest, QuotesFieldsThatNeedIt) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("as a result, then"), "\"as a result, then\"");
  EXPECT_EQ(csv_field("say \"so\""), "\"say \"\"so\"\"\"");
  EXPECT_EQ(xml_escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
}

// ---------------------------------------------------------------------------
// count-params, gen-synth

TEST(CountParamsTest, ShippedConfigs) {
  std::ostringstream out;
  const ParamBreakdown pdtb = cmd_count_params_config(load_run_config(source_path("configs/pdtb2.cfg")), out);
  EXPECT_EQ(pdtb.prompts, 15360u);
  EXPECT_EQ(pdtb.verbalizer, 78336u);
  EXPECT_EQ(pdtb.weight_units, 113u);
  EXPECT_EQ(pdtb.total(), 93809u);
  EXPECT_NE(out.str().find("93,809"), std::string::npos);
  const ParamBreakdown toy = cmd_count_params_config(load_run_config(source_path("configs/toy.cfg")), out);
  EXPECT_EQ(toy.total(), 1670u);
  EXPECT_EQ(toy.total(), toy.prompts + toy.verbalizer + toy.weight_units);
}

TEST_F(CliTest, CountParamsFromCheckpointMatchesPartition) {
  const std::string ckpt = micro_checkpoint();
  std::ostringstream out;
  const ParamBreakdown b = cmd_count_params_checkpoint(ckpt, out);
  EXPECT_EQ(b.prompts, 4u * 16u);
  EXPECT_EQ(b.verbalizer, 4u * 16u);
  EXPECT_EQ(b.weight_units, 5u);
}

TEST(DigitsTest, Grouping) {
  EXPECT_EQ(group_digits(0), "0");
  EXPECT_EQ(group_digits(999), "999");
  EXPECT_EQ(group_digits(1000), "1,000");
  EXPECT_EQ(group_digits(1234567), "1,234,567");
}

TEST_F(CliTest, GenSynthWritesSplitsIntoOutDir) {
  RunConfig c;
  c.paths.hierarchy = source_path("data/planted_hierarchy.json");
  c.synth_n_per_bottom = 20;
  std::ostringstream out;
  const DatasetBundle b = cmd_gen_synth(c, dir_.string(), out);
  const LabelHierarchy h = load_hierarchy(c.paths.hierarchy);
  EXPECT_EQ(parse_dataset((dir_ / "train.jsonl").string(), h).size(), b.train.size());
  EXPECT_EQ(b.train.size() + b.dev.size() + b.test.size(), 120u);
  EXPECT_NE(out.str().find("Total"), std::string::npos);

  RunConfig s = c;
  s.paths.train = (dir_ / "train.jsonl").string();
  s.paths.dev = (dir_ / "dev.jsonl").string();
  s.paths.test = (dir_ / "test.jsonl").string();
  std::ostringstream stats;
  const ClassCounts counts = cmd_stats(s, stats);
  EXPECT_EQ(counts[0][1][3], 16u);
}

}  // namespace
}  // namespace pemi
