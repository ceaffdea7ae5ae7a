#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mtsgl/train.hpp"

namespace mtsgl {
namespace {

namespace fs = std::filesystem;

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    DatasetConfig cfg;
    cfg.counts = {12, 12, 12, 12, 12, 12};
    return build_dataset(cfg);
  }();
  return ds;
}

TrainConfig quick_config(const std::string& tasks, Mode mode = Mode::pareto) {
  TrainConfig c;
  c.tasks = tasks;
  c.mode = mode;
  c.batch = 4;
  c.iterations = 3;
  c.net.depth = 16;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtsgl_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<double> flat(const std::vector<Tensor>& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

TEST(TrainConfig, OptionsAndValidation) {
  TrainConfig c;
  set_option(c, "tasks", "ssa");
  set_option(c, "mode", "fixed");
  set_option(c, "lr", "0.01");
  set_option(c, "iterations", "12");
  set_option(c, "depth", "16");
  EXPECT_EQ(c.tasks, "ssa");
  EXPECT_EQ(c.mode, Mode::fixed);
  EXPECT_EQ(c.lr, 0.01);
  EXPECT_EQ(c.iterations, 12);
  EXPECT_EQ(c.net.depth, 16u);
  EXPECT_EQ(c.variant(), "ssa/fixed");
  EXPECT_THROW(set_option(c, "learning_rate", "1"), Error);
  EXPECT_THROW(set_option(c, "lr", "fast"), Error);
  EXPECT_THROW(set_option(c, "batch", "2.5"), Error);
  EXPECT_THROW(set_option(c, "mode", "greedy"), Error);
  c.tasks = "cls+ssa";
  EXPECT_THROW(c.validate(), Error);
  c.tasks = "baseline";
  c.fraction = 0;
  EXPECT_THROW(c.validate(), Error);
  c.fraction = 1;
  c.lambda = 1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrainConfig, VariantLabels) {
  EXPECT_EQ(quick_config("baseline").variant(), "baseline");
  EXPECT_EQ(quick_config("ssa+scr").variant(), "ssa+scr/pareto");
  EXPECT_EQ(quick_config("scr", Mode::fixed).variant(), "scr/fixed");
  const auto c = quick_config("scr");
  EXPECT_TRUE(c.uses(kCls));
  EXPECT_FALSE(c.uses(kSsa));
  EXPECT_TRUE(c.uses(kScr));
}

TEST(TrainConfig, FileParsing) {
  const auto dir = scratch_dir("cfgfile");
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "# comment\n\n tasks = scr \nseed=7  # trailing\nlambda=0.2\n";
  TrainConfig c;
  load_config_file(c, dir / "run.cfg");
  EXPECT_EQ(c.tasks, "scr");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.lambda, 0.2);
  std::ofstream(dir / "bad.cfg") << "tasks scr\n";
  EXPECT_THROW(load_config_file(c, dir / "bad.cfg"), Error);
  EXPECT_THROW(load_config_file(c, dir / "missing.cfg"), Error);
  fs::remove_all(dir);
}

TEST(TrainConfig, HashTracksEveryTrainingField) {
  const TrainConfig base;
  const std::string h = config_hash(base);
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h, config_hash(TrainConfig{}));
  std::set<std::string> seen{h};
  const std::pair<const char*, const char*> changes[] = {
      {"tasks", "ssa"},   {"mode", "fixed"},  {"lr", "0.002"},     {"weight_decay", "0"},
      {"iterations", "5"}, {"batch", "8"},    {"fraction", "0.5"}, {"lambda", "0.1"},
      {"seed", "2"},      {"phi", "2"},       {"eval_every", "10"}, {"depth", "16"},
      {"blocks", "2"}};
  for (const auto& [k, v] : changes) {
    TrainConfig c;
    set_option(c, k, v);
    EXPECT_TRUE(seen.insert(config_hash(c)).second) << k;
  }
  TrainConfig paths;
  set_option(paths, "out", "elsewhere");
  set_option(paths, "data", "other");
  EXPECT_EQ(config_hash(paths), h);
  EXPECT_NE(config_hash(base, "salt"), h);
}

TEST(FractionSubset, NestedAndPerClass) {
  const auto& ds = small_dataset();
  std::vector<std::vector<std::size_t>> subsets;
  for (double f : {0.2, 0.5, 0.8, 1.0}) subsets.push_back(fraction_subset(ds.train, 6, f, 3));
  for (std::size_t k = 0; k + 1 < subsets.size(); ++k)
    EXPECT_TRUE(std::includes(subsets[k + 1].begin(), subsets[k + 1].end(), subsets[k].begin(),
                              subsets[k].end()));
  EXPECT_EQ(subsets.back().size(), ds.train.size());
  std::vector<int> per_class(6, 0), total(6, 0);
  for (std::size_t i : subsets[1]) ++per_class[std::size_t(ds.train[i].label)];
  for (const auto& r : ds.train) ++total[std::size_t(r.label)];
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(per_class[c], int(std::ceil(0.5 * total[c])));
  EXPECT_NE(fraction_subset(ds.train, 6, 0.5, 3), fraction_subset(ds.train, 6, 0.5, 4));
}

TEST(Trainer, BatchesCycleThroughEpochs) {
  Trainer t(quick_config("baseline"), small_dataset());
  const std::size_t n = t.train_size();
  std::multiset<std::size_t> seen;
  for (std::size_t k = 0; k < n / 4; ++k)
    for (std::size_t i : t.next_batch()) seen.insert(i);
  EXPECT_EQ(seen.size(), n / 4 * 4);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), seen.size());
}

TEST(Trainer, DirectionIsWeightedSumOfTaskGradients) {
  for (Mode mode : {Mode::pareto, Mode::fixed}) {
    Trainer t(quick_config("ssa+scr", mode), small_dataset());
    for (int it = 0; it < 3; ++it) {
      const StepRecord r = t.step();
      ASSERT_EQ(r.encoder_grads.size(), 3u);
      for (std::size_t i = 0; i < r.direction.size(); ++i) {
        double expect = 0;
        for (std::size_t k = 0; k < 3; ++k) expect += r.weight[k] * r.encoder_grads[k][i];
        ASSERT_NEAR(r.direction[i], expect, 1e-9);
      }
      if (mode == Mode::fixed) {
        EXPECT_EQ(r.weight, (std::array<double, 3>{1, 3, 3}));
      } else {
        EXPECT_NEAR(r.weight[0] + r.weight[1] + r.weight[2], 1, 1e-9);
        for (double a : r.weight) EXPECT_GE(a, 0);
      }
    }
  }
}

TEST(Trainer, ParetoWeightsMatchSolver) {
  Trainer t(quick_config("ssa+scr"), small_dataset());
  t.step();
  const StepRecord r = t.step();
  const auto sol = solve_simplex(gram(r.encoder_grads));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(r.weight[k], sol.a[k]);
  EXPECT_EQ(r.method, sol.method);
}

TEST(Trainer, HeadsSeeOnlyTheirOwnLoss) {
  // Same seed, same batch: the classifier head gradient cannot depend on
  // which auxiliary tasks are attached.
  Trainer base(quick_config("baseline"), small_dataset());
  Trainer full(quick_config("ssa+scr"), small_dataset());
  const auto batch = base.next_batch();
  const StepRecord a = base.step_on(batch), b = full.step_on(batch);
  EXPECT_EQ(a.loss[kCls], b.loss[kCls]);
  EXPECT_EQ(a.head_grads[kCls], b.head_grads[kCls]);
  EXPECT_TRUE(a.head_grads[kSsa].empty());
  EXPECT_FALSE(b.head_grads[kSsa].empty());
  EXPECT_FALSE(b.head_grads[kScr].empty());
}

TEST(Trainer, InactiveHeadsStayFrozen) {
  Trainer t(quick_config("ssa"), small_dataset());
  const auto tok = flat(t.model().tokenizer_params());
  const auto dec = flat(t.model().decoder_params());
  const auto enc = flat(t.model().encoder_params());
  for (int i = 0; i < 2; ++i) t.step();
  EXPECT_EQ(flat(t.model().tokenizer_params()), tok);
  EXPECT_NE(flat(t.model().decoder_params()), dec);
  EXPECT_NE(flat(t.model().encoder_params()), enc);
}

TEST(Trainer, SameConfigSameWeights) {
  Trainer a(quick_config("ssa+scr"), small_dataset()), b(quick_config("ssa+scr"), small_dataset());
  for (int i = 0; i < 3; ++i) {
    a.step();
    b.step();
  }
  EXPECT_EQ(flat(a.model().all_params()), flat(b.model().all_params()));
}

TEST(Trainer, LogRowLayout) {
  StepRecord r;
  r.iteration = 4;
  r.active = {true, false, true};
  r.loss = {1.5, 0, -0.25};
  r.weight = {0.25, 0, 0.75};
  r.batch_accuracy = 0.5;
  EXPECT_EQ(train_log_row(r, std::nullopt),
            "4,1.500000,,-0.250000,0.250000,0.000000,0.750000,closed_form,0.5000,");
  EXPECT_EQ(train_log_row(r, 0.625).substr(train_log_row(r, 0.625).rfind(',')), ",0.6250");
  const std::string header = kTrainLogHeader;
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 9);
}

TEST(Inference, DeterministicAndTokenizerFree) {
  Trainer t(quick_config("ssa+scr"), small_dataset());
  t.step();
  std::vector<const GrayImage*> images;
  for (const auto& r : small_dataset().test) images.push_back(&r.image);
  const auto a = predict(t.model(), images), b = predict(t.model(), images, true, 5);
  ASSERT_EQ(a.size(), images.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].scores, b[i].scores);
    EXPECT_EQ(a[i].evidence, b[i].evidence);
    EXPECT_NEAR(std::accumulate(a[i].scores.begin(), a[i].scores.end(), 0.0), 1, 1e-12);
  }
  Model stripped = t.model();
  stripped.has_tokenizer = false;
  const auto c = predict(stripped, images);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].scores, c[i].scores);
}

TEST(Inference, IouEdgeCases) {
  BinaryMask a(4, 4), b(4, 4);
  EXPECT_EQ(iou(a, b), 1.0);
  a.set(0, 0, true);
  EXPECT_EQ(iou(a, b), 0.0);
  b.set(0, 0, true);
  b.set(1, 0, true);
  EXPECT_EQ(iou(a, b), 0.5);
}

TEST(Training, SmokeRunLearnsAndWritesOutputs) {
  DatasetConfig dc;
  dc.counts = {4, 4, 4, 4, 4, 4};
  const Dataset ds = build_dataset(dc);
  auto cfg = quick_config("ssa+scr", Mode::fixed);
  cfg.iterations = 50;
  cfg.batch = 12;
  cfg.lr = 1e-2;
  cfg.out_dir = scratch_dir("smoke");
  const auto res = train_and_evaluate(cfg, ds);
  ASSERT_EQ(res.log.size(), 50u);
  EXPECT_LT(res.log.back().loss[kCls], res.log.front().loss[kCls]);
  const Model back = load_checkpoint(cfg.out_dir / "model.ckpt", &cfg.net);
  EXPECT_FALSE(back.has_tokenizer);
  EXPECT_GT(evaluate(back, ds.train).metrics.oa, 0.5);
  EXPECT_EQ(evaluate(back, ds.test).metrics.oa, res.test.metrics.oa);
  for (const char* f : {"train_log.csv", "eval.csv", "model.ckpt", "config.txt"})
    EXPECT_TRUE(fs::exists(cfg.out_dir / f)) << f;
  EXPECT_EQ(slurp(cfg.out_dir / "config.txt"), canonical(cfg));
  std::istringstream log(slurp(cfg.out_dir / "train_log.csv"));
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, kTrainLogHeader);
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 50);
  fs::remove_all(cfg.out_dir);
}

}  // namespace
}  // namespace mtsgl
