#include <gtest/gtest.h>

#include <sstream>

#include "modmap/pipeline.hpp"
#include "support.hpp"

using namespace modmap;
using namespace modmap::pipeline;
using modmap::testing::temp_dir;

namespace {

RunConfig tiny_config(const fs::path& root) {
  RunConfig c;
  c.dataset = (root / "data").string();
  c.out = (root / "run").string();
  c.seed = 3;
  c.bench.resolution = 48;
  c.bench.n_views = 4;
  c.bench.n_nominal_test = 2;
  c.bench.n_defective_test = 2;
  c.train.epochs = 3;
  return c;
}

class TinyRun : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(temp_dir("pipeline"));
    cfg_ = new RunConfig(tiny_config(*root_));
    std::ostringstream log;
    cmd_gen(*cfg_, false, log);
    cmd_train(*cfg_, log);
    cmd_infer(*cfg_, "", log);
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete root_;
  }
  static fs::path* root_;
  static RunConfig* cfg_;
};

fs::path* TinyRun::root_ = nullptr;
RunConfig* TinyRun::cfg_ = nullptr;

} // namespace

TEST(EvaluateCategory, PerfectOracleScoresOne) {
  const auto b = datagen::make_benchmark(4, [] {
    datagen::BenchmarkConfig c;
    c.resolution = 64;
    return c;
  }());
  for (const auto& cls : b.classes) {
    std::vector<VoxelGrid> grids;
    std::vector<metrics::GroundTruthVolume> gts;
    for (const auto& inst : cls.test) {
      VoxelGrid g(cls.grid);
      std::fill(g.hit_counts.begin(), g.hit_counts.end(), 1);
      for (std::size_t i = 0; i < g.scores.size(); ++i) g.scores[i] = inst.gt_mask[i];
      grids.push_back(std::move(g));
      gts.push_back(metrics::GroundTruthVolume::from_mask(inst.gt_mask, cls.grid.dims));
    }
    std::vector<Scored> items;
    for (std::size_t i = 0; i < cls.test.size(); ++i)
      items.push_back({instance_score(grids[i]), cls.test[i].label, &grids[i], &gts[i]});
    const auto m = evaluate_category(cls.name, items, {0.01, 0.3}, {});
    EXPECT_EQ(m.i_auroc, 1.0) << cls.name;
    EXPECT_NEAR(m.v_aupro[0], 1.0, 1e-12) << cls.name;
    EXPECT_NEAR(m.v_aupro[1], 1.0, 1e-12) << cls.name;
  }
}

TEST(EvaluateCategory, ShuffledScoresAverageOneHalf) {
  // 6 nominal and 10 defective instances as in the benchmark.
  Rng rng(8);
  GridSpec s;
  s.dims = {4, 4, 4};
  VoxelGrid g(s);
  std::fill(g.hit_counts.begin(), g.hit_counts.end(), 1);
  std::vector<std::uint8_t> mask(64, 0);
  mask[0] = 1;
  g.scores[0] = 1;
  const auto gt = metrics::GroundTruthVolume::from_mask(mask, s.dims);
  double sum = 0;
  const int draws = 400;
  for (int d = 0; d < draws; ++d) {
    std::vector<Scored> items;
    for (int i = 0; i < 16; ++i) items.push_back({rng.uniform(), i < 6 ? 0 : 1, &g, &gt});
    sum += evaluate_category("x", items, {0.01}, {}).i_auroc;
  }
  EXPECT_NEAR(sum / draws, 0.5, 0.02);
}

TEST(MetricsCsv, LayoutHasOneColumnPerLimit) {
  const std::vector<CategoryMetrics> rows{{"ball", 0.75, {0.5, 0.625}}, {"vase", 0.25, {0.25, 0.375}}};
  const auto all = std::vector<CategoryMetrics>{rows[0], rows[1], mean_row(rows)};
  const auto csv = format_metrics_csv(all, {0.01, 0.05});
  EXPECT_NE(csv.find("category,I-AUROC,V-AUPRO@1%,V-AUPRO@5%\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("mean,0.500000,0.375000,0.500000\n"), std::string::npos) << csv;
  EXPECT_EQ(parse_compare("fuse=max,min").size(), 2u);
  EXPECT_THROW(parse_compare("fusion=max"), UsageError);
  EXPECT_THROW(parse_compare("fuse=median"), UsageError);
}

TEST_F(TinyRun, WritesTheResultLayout) {
  const fs::path run = cfg_->out;
  for (const char* f : {"resolved_config.json", "models/ball.mmap", "models/vase_loss.csv"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  const auto loss = io::read_text(run / "models" / "ball_loss.csv");
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 4);
  const fs::path inst = run / "results" / "vase" / "003";
  for (const char* f : {"psi_image_view_0.mmtf", "psi_depth_view_3.mmtf", "fused_view_1.pgm", "volume.mmtf",
                        "hits.mmtf", "volume.csv", "score.txt"})
    EXPECT_TRUE(fs::exists(inst / f)) << f;
  EXPECT_EQ(io::load_tensor(inst / "psi_image_view_0.mmtf").dims, (std::vector<std::uint64_t>{6, 6}));
  EXPECT_GE(read_score(inst), 0.0);
}

TEST_F(TinyRun, CheckpointMatchesTheConfig) {
  const auto lm = load_model(*cfg_, "ball");
  EXPECT_EQ(lm.model.dims.n_views, 4u);
  RunConfig other = *cfg_;
  other.train.epochs = 4;
  EXPECT_THROW(load_model(other, "ball"), DataError);
}

TEST_F(TinyRun, EvalAndCompareRows) {
  std::ostringstream log;
  const auto rows = cmd_eval(*cfg_, log);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].category, "mean");
  for (const auto& r : rows) {
    EXPECT_GE(r.i_auroc, 0.0);
    EXPECT_LE(r.i_auroc, 1.0);
    EXPECT_GE(r.v_aupro[0], 0.0);
    EXPECT_LE(r.v_aupro[0], 1.0);
  }
  const auto cmp = cmd_compare(*cfg_, parse_compare("fuse=max,min,product,mean"), log);
  ASSERT_EQ(cmp.size(), 12u);
  // Max fusion reproduces what eval computed from the stored volumes.
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(cmp[i].i_auroc, rows[i].i_auroc);
    EXPECT_EQ(cmp[i].v_aupro, rows[i].v_aupro);
  }
  const auto csv = io::read_text(fs::path(cfg_->out) / "compare.csv");
  EXPECT_NE(csv.find("\nproduct,vase,"), std::string::npos);
}

TEST_F(TinyRun, MinFusedScoresNeverExceedMaxFused) {
  const auto lm = load_model(*cfg_, "vase");
  const auto grid = dataset::read_grid(cfg_->dataset, "vase");
  for (const auto& id : dataset::list_instances(cfg_->dataset, "vase", "test")) {
    const auto views = dataset::read_views(fs::path(cfg_->dataset) / "vase" / "test" / id);
    const auto opt = infer_options(*cfg_, 0, instance_seed(*cfg_, "vase", id));
    const auto hi = run_instance(lm.model, views, grid, opt, FuseFunction::max, UpsamplePolicy::bilinear);
    const auto lo = build_volume(hi.maps.per_view, views, grid, FuseFunction::min, UpsamplePolicy::bilinear);
    EXPECT_LE(instance_score(lo.grid), hi.score) << id;
    for (std::size_t v = 0; v < lo.grid.scores.size(); ++v) ASSERT_LE(lo.grid.scores[v], hi.volume.grid.scores[v]);
  }
}

TEST_F(TinyRun, SubsamplingAllViewsReproducesExhaustive) {
  const auto lm = load_model(*cfg_, "ball");
  const auto grid = dataset::read_grid(cfg_->dataset, "ball");
  const auto views = dataset::read_views(fs::path(cfg_->dataset) / "ball" / "test" / "002");
  auto opt = infer_options(*cfg_, 0, 1);
  const auto full = run_instance(lm.model, views, grid, opt, FuseFunction::max, UpsamplePolicy::bilinear);
  opt.subsample_k = 4;
  const auto k = run_instance(lm.model, views, grid, opt, FuseFunction::max, UpsamplePolicy::bilinear);
  EXPECT_EQ(full.volume.grid.scores, k.volume.grid.scores);
  EXPECT_EQ(full.score, k.score);
}

TEST_F(TinyRun, IncompleteResultsAreReported) {
  RunConfig c = *cfg_;
  c.out = (*root_ / "copy").string();
  fs::copy(cfg_->out, c.out, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  fs::remove(fs::path(c.out) / "results" / "ball" / "001" / "volume.mmtf");
  std::ostringstream log;
  EXPECT_THROW(cmd_eval(c, log), DataError);
}

TEST_F(TinyRun, InferIsDeterministic) {
  RunConfig c = *cfg_;
  c.out = (*root_ / "again").string();
  fs::create_directories(c.out);
  fs::copy(fs::path(cfg_->out) / "models", fs::path(c.out) / "models", fs::copy_options::recursive);
  std::ostringstream log;
  cmd_infer(c, "ball/003", log);
  const auto a = io::read_file(fs::path(cfg_->out) / "results" / "ball" / "003" / "volume.mmtf");
  const auto b = io::read_file(fs::path(c.out) / "results" / "ball" / "003" / "volume.mmtf");
  EXPECT_EQ(a, b);
  EXPECT_FALSE(fs::exists(fs::path(c.out) / "results" / "vase"));
  EXPECT_THROW(cmd_infer(c, "ball/999", log), UsageError);
}

TEST(Gen, SameSeedGivesTheSameDigest) {
  const auto root = temp_dir("gen_digest");
  RunConfig c = tiny_config(root);
  std::ostringstream a, b;
  cmd_gen(c, false, a);
  const auto first = io::directory_digest(c.dataset);
  cmd_gen(c, true, b);
  EXPECT_EQ(io::directory_digest(c.dataset), first);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("ball: 1 train, 4 test (2 nominal, 2 defective)"), std::string::npos) << a.str();
  EXPECT_THROW(cmd_gen(c, false, a), UsageError);
}
