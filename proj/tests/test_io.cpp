#include <gtest/gtest.h>

#include "modmap/checkpoint.hpp"
#include "modmap/config.hpp"
#include "modmap/dataset.hpp"
#include "modmap/io.hpp"
#include "support.hpp"

using namespace modmap;
using modmap::testing::temp_dir;

namespace {

ModMapModel perturbed_model(std::uint64_t seed) {
  auto m = ModMapModel::create(ModelDims::scaled(3, 16, 12, 2), EncoderConfig{}, seed);
  Rng rng(seed);
  for (const auto& [name, net] : m.submodules())
    for (auto& layer : net->mutable_layers()) {
      for (auto& w : layer.weight.flat()) w += float(rng.uniform(-0.1, 0.1));
      for (auto& b : layer.bias) b += float(rng.uniform(-0.1, 0.1));
    }
  return m;
}

} // namespace

TEST(Tensor, RoundTripAndErrors) {
  const auto dir = temp_dir("tensor");
  const io::Tensor t{{2, 3, 4}, std::vector<float>(24)};
  io::Tensor filled = t;
  for (std::size_t i = 0; i < 24; ++i) filled.values[i] = float(i) * 0.25f - 3.0f;
  io::save_tensor(dir / "a.mmtf", filled);
  EXPECT_EQ(io::load_tensor(dir / "a.mmtf"), filled);
  EXPECT_EQ(io::fs::file_size(dir / "a.mmtf"), 4 + 4 + 4 + 4 + 3 * 8 + 24 * 4u);

  auto bytes = io::read_file(dir / "a.mmtf");
  bytes[4] = 9; // version
  EXPECT_THROW(io::decode_tensor(bytes, "x"), DataError);
  bytes = io::read_file(dir / "a.mmtf");
  bytes.pop_back();
  EXPECT_THROW(io::decode_tensor(bytes, "x"), DataError);
  bytes = io::read_file(dir / "a.mmtf");
  bytes[0] = 'X';
  EXPECT_THROW(io::decode_tensor(bytes, "x"), DataError);
  EXPECT_THROW(io::encode_tensor({{2, 2}, std::vector<float>(3)}), DimensionMismatch);
  EXPECT_THROW(io::load_tensor(dir / "missing.mmtf"), DataError);
}

TEST(Pgm, SixteenBitRoundTripIsExactAfterQuantization) {
  const auto dir = temp_dir("pgm");
  Rng rng(1);
  Raster r(5, 7);
  for (auto& v : r.values) v = float(rng.uniform());
  io::quantize16(r);
  io::save_pgm(dir / "a.pgm", r, 65535);
  EXPECT_EQ(io::load_pgm(dir / "a.pgm"), r);
  io::write_text(dir / "bad.pgm", "P2\n1 1\n255\n0");
  EXPECT_THROW(io::load_pgm(dir / "bad.pgm"), DataError);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(io::fnv1a(std::string()), 0xcbf29ce484222325ull);
  EXPECT_EQ(io::fnv1a(std::string("a")), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(io::fnv1a(std::string("foobar")), 0x85944171f73967e8ull);
  EXPECT_EQ(io::hex64(0xabcull), "0000000000000abc");
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  Checkpoint ck{perturbed_model(4), 17, 0x1234};
  const auto bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint(bytes, "mem");
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.config_digest, 0x1234u);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const auto a = std::as_const(ck.model).submodules();
  const auto b = back.model.submodules();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t l = 0; l < a[i].second->depth(); ++l) {
      const auto& la = a[i].second->layers()[l];
      const auto& lb = b[i].second->layers()[l];
      const auto wa = la.weight.flat(), wb = lb.weight.flat();
      EXPECT_TRUE(std::equal(wa.begin(), wa.end(), wb.begin(), wb.end())) << a[i].first << l;
      EXPECT_EQ(la.bias, lb.bias) << a[i].first << l;
    }
}

TEST(Checkpoint, RejectsCorruptionAndFutureVersions) {
  const auto bytes = encode_checkpoint({perturbed_model(5), 1, 2});
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped, "mem"), DataError);

  // A future version with a valid checksum must still be refused.
  auto future = std::vector<unsigned char>(bytes.begin(), bytes.end() - 8);
  future[4] = 2;
  io::ByteWriter w;
  w.bytes(future.data(), future.size());
  w.u64(io::fnv1a(future));
  try {
    decode_checkpoint(w.buffer(), "mem");
    FAIL() << "future version accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(decode_checkpoint(std::vector<unsigned char>(4), "mem"), DataError);
  EXPECT_THROW(load_checkpoint(temp_dir("ck") / "none.mmap"), DataError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = temp_dir("ckfile");
  const Checkpoint ck{perturbed_model(6), 3, 9};
  save_checkpoint(dir / "m.mmap", ck);
  const auto back = load_checkpoint(dir / "m.mmap");
  EXPECT_EQ(encode_checkpoint(back), io::read_file(dir / "m.mmap"));
}

TEST(Config, RoundTripPlainAndAnnotated) {
  RunConfig c;
  c.dataset = "elsewhere";
  c.categories = {"ball"};
  c.train.epochs = 7;
  c.subsample_k = 4;
  c.fuse = FuseFunction::product;
  c.fpr_limits = {0.01, 0.05};
  c.seed = 99;
  c.bench.resolution = 64;
  c.grid = GridSpec{{-1, -1, -1}, 0.05, {40, 40, 40}};
  for (bool annotated : {false, true}) {
    const auto j = to_json(c, annotated);
    const auto back = config_from_json(json::parse(j.dump()));
    EXPECT_EQ(to_json(back, annotated), j) << annotated;
    EXPECT_EQ(model_digest(back), model_digest(c));
  }
  const auto annotated = to_json(c, true);
  EXPECT_EQ(annotated["train"]["epochs"]["source"], "paper");
  EXPECT_EQ(annotated["infer"]["background_threshold"]["source"], "decision");
}

TEST(Config, DefaultsAndErrors) {
  const auto c = config_from_json(json::object());
  EXPECT_EQ(c.train.epochs, 200u);
  EXPECT_EQ(c.train.lr_scale, width_lr_scale(c.encoder.c_image));
  EXPECT_EQ(c.fuse, FuseFunction::max);
  EXPECT_THROW(config_from_json(json{{"bogus", 1}}), UsageError);
  EXPECT_THROW(config_from_json(json{{"train", {{"epoch", 3}}}}), UsageError);
  EXPECT_THROW(config_from_json(json{{"train", {{"epochs", "many"}}}}), UsageError);
  EXPECT_THROW(config_from_json(json{{"infer", {{"subsample_k", 0}}}}), UsageError);
  EXPECT_THROW(config_from_json(json{{"train", {{"weight_decay", 0.1}}}}), UsageError);
  EXPECT_THROW(config_from_json(json{{"metrics", {{"fpr_limits", {1.5}}}}}), UsageError);
  const auto dir = temp_dir("config");
  io::write_text(dir / "broken.json", "{ not json");
  EXPECT_THROW(load_config(dir / "broken.json"), UsageError);
  EXPECT_THROW(load_config(dir / "absent.json"), UsageError);
}

TEST(Config, ModelDigestTracksTrainingInputsOnly) {
  RunConfig a, b;
  b.out = "other";
  b.fuse = FuseFunction::min;
  EXPECT_EQ(model_digest(a), model_digest(b));
  b.train.epochs = 5;
  EXPECT_NE(model_digest(a), model_digest(b));
}

TEST(Dataset, ViewsRoundTripBitwise) {
  const auto dir = temp_dir("views");
  const auto scene = datagen::render_views(modmap::testing::small_scene(3, 32));
  dataset::write_views(dir / "inst", scene.views);
  const auto back = dataset::read_views(dir / "inst");
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back[k].image, scene.views[k].image);
    EXPECT_EQ(back[k].depth, scene.views[k].depth);
    EXPECT_EQ(back[k].calib.cam_to_world, scene.views[k].calib.cam_to_world);
    EXPECT_EQ(back[k].view_index, k);
  }
  EXPECT_THROW(dataset::read_views(dir / "none"), DataError);
  io::fs::remove(dir / "inst" / "view_1" / "calib.json");
  EXPECT_THROW(dataset::read_views(dir / "inst"), DataError);
}

TEST(Dataset, WriteBenchmarkLayoutAndForce) {
  const auto dir = temp_dir("bench") / "data";
  datagen::BenchmarkConfig cfg;
  cfg.resolution = 48;
  cfg.n_views = 4;
  cfg.n_nominal_test = 1;
  cfg.n_defective_test = 1;
  const auto b = datagen::make_benchmark(2, cfg);
  dataset::write_benchmark(dir, b, cfg, false);
  EXPECT_EQ(dataset::list_categories(dir), (std::vector<std::string>{"ball", "vase"}));
  EXPECT_EQ(dataset::list_instances(dir, "ball", "test"), (std::vector<std::string>{"000", "001"}));
  for (const char* f : {"view_0/image.pgm", "view_0/depth.mmtf", "view_2/calib.json", "gt_volume.mmtf", "label.txt"})
    EXPECT_TRUE(io::fs::exists(dir / "ball" / "test" / "001" / f)) << f;
  EXPECT_TRUE(io::fs::exists(dir / "manifest.json"));
  EXPECT_EQ(dataset::read_label(dir / "vase" / "test" / "001"), 1);
  const auto grid = dataset::read_grid(dir, "vase");
  const auto gt = dataset::read_gt(dir / "vase" / "test" / "001", grid);
  EXPECT_EQ(gt.mask, b.classes[1].test[1].gt_mask);

  const auto digest = io::directory_digest(dir);
  EXPECT_THROW(dataset::write_benchmark(dir, b, cfg, false), UsageError);
  dataset::write_benchmark(dir, b, cfg, true);
  EXPECT_EQ(io::directory_digest(dir), digest);
}
