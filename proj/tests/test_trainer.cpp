#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ukan/trainer.hpp"

using namespace ukan;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ukan_trainer_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    data::make_blobs(dir_ / "blobs", {10, 16, 4});
    data::make_two_mode(dir_ / "toy", {8, 16, 0});
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Two conv stages and two token stages: inputs must be multiples of 16.
  TrainConfig tiny(const std::string& run, const std::string& task = "segment") const {
    TrainConfig c;
    c.run.task = task;
    c.run.seed = 3;
    c.run.epochs = 4;
    c.run.output_dir = (dir_ / run).string();
    c.model.conv_channels = {4, 8};
    c.model.kan_dims = {8, 12};
    c.model.layers_per_block = 1;
    c.model.time_embed_dim = 8;
    c.data.root = (dir_ / (task == "segment" ? "blobs" : "toy")).string();
    c.data.height = c.data.width = 16;
    c.data.channels = task == "segment" ? 3 : 1;
    c.optim.batch_size = 4;
    c.optim.lr = 3e-3;
    c.diffusion.timesteps = 20;
    c.generate.num_samples = 4;
    c.generate.batch_size = 3;
    return c;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(TrainerTest, LossDecreasesOverTwoEpochs) {
  auto c = tiny("two");
  c.run.epochs = 2;
  c.data.augment = "none";
  Trainer<float> t(c);
  t.run();
  ASSERT_EQ(t.history().size(), 2u);
  EXPECT_LT(t.history()[1].train_loss, t.history()[0].train_loss);
  EXPECT_EQ(t.steps_done(), 4u);  // 8 training images, batch 4
  EXPECT_TRUE(fs::exists(t.best_path()));
  EXPECT_TRUE(fs::exists(t.last_path()));
  EXPECT_TRUE(fs::exists(t.output_dir() / "config.resolved.ini"));
  const auto tsv = read_file(t.metrics_path());
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "epoch\tlr\ttrain_loss\tval_iou\tval_f1\tsteps");
}

TEST_F(TrainerTest, IdenticalRunsGiveIdenticalLogsAndCheckpoints) {
  Trainer<float> a(tiny("a")), b(tiny("b"));
  a.run();
  b.run();
  EXPECT_EQ(read_file(a.metrics_path()), read_file(b.metrics_path()));
  auto ca = Checkpoint::load(a.last_path()), cb = Checkpoint::load(b.last_path());
  ASSERT_EQ(ca.tensors.size(), cb.tensors.size());
  for (std::size_t i = 0; i < ca.tensors.size(); ++i) {
    EXPECT_EQ(ca.tensors[i].name, cb.tensors[i].name);
    EXPECT_EQ(ca.tensors[i].bytes, cb.tensors[i].bytes) << ca.tensors[i].name;
  }
}

TEST_F(TrainerTest, CheckpointReloadReproducesOutputsBitExactly) {
  auto c = tiny("reload");
  c.run.epochs = 2;
  Trainer<float> t(c);
  t.run();
  auto cfg = t.config();
  auto loaded = load_model<float>(cfg, Checkpoint::load(t.last_path()));
  auto probe = data::stack(t.train_samples()).images;
  NoGradGuard ng;
  EXPECT_EQ(t.model().forward(probe, false).to_vector(), loaded.forward(probe, false).to_vector());
}

TEST_F(TrainerTest, ResumeEqualsUninterrupted) {
  Trainer<float> full(tiny("full"));
  full.run();

  auto first = tiny("part");
  first.run.epochs = 4;
  Trainer<float> part(first);
  part.step_epoch();
  part.step_epoch();  // stop after 2 of 4 epochs
  auto second = tiny("part");
  second.run.resume = (dir_ / "part" / "last.ukan").string();
  Trainer<float> resumed(second);
  resumed.run();
  EXPECT_EQ(resumed.epochs_done(), 4u);
  EXPECT_EQ(read_file(resumed.metrics_path()), read_file(full.metrics_path()));
  auto ca = Checkpoint::load(full.last_path()), cb = Checkpoint::load(resumed.last_path());
  for (std::size_t i = 0; i < ca.tensors.size(); ++i)
    EXPECT_EQ(ca.tensors[i].bytes, cb.tensors[i].bytes) << ca.tensors[i].name;
}

TEST_F(TrainerTest, DiffusionTrainsWithoutMasksAndGenerates) {
  auto c = tiny("diff", "diffuse");
  c.run.epochs = 2;
  Trainer<float> t(c);
  t.run();
  for (const auto& r : t.history()) EXPECT_TRUE(std::isfinite(r.train_loss));
  const auto tsv = read_file(t.metrics_path());
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "epoch\tlr\ttrain_loss\tsteps");
  // Images are scaled to [-1, 1].
  double lo = 1, hi = -1;
  for (const auto& s : t.train_samples())
    for (float v : s.image.to_vector()) {
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
    }
  EXPECT_EQ(lo, -1.0);
  EXPECT_EQ(hi, 1.0);

  auto g = t.config();
  g.run.checkpoint = t.last_path().string();
  g.generate.out_dir = (dir_ / "gen1").string();
  auto files = generate_samples<float>(g);
  g.generate.out_dir = (dir_ / "gen2").string();
  g.generate.batch_size = 4;
  auto again = generate_samples<float>(g);
  ASSERT_EQ(files.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu.png", i);
    EXPECT_EQ(files[i].filename().string(), name);
    EXPECT_EQ(read_file(files[i]), read_file(again[i]));
    auto im = data::read_image(files[i]);
    EXPECT_EQ(im.channels, 1u);
    EXPECT_EQ(im.height, 16u);
  }
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "gen1")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 4u);
}

TEST_F(TrainerTest, NonFiniteLossAbortsWithStep) {
  Trainer<float> t(tiny("nan"));
  t.model().head.bias.data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    t.step_epoch();
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1 step 1"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(fs::exists(t.output_dir() / "abort.txt"));
}

TEST_F(TrainerTest, ConfigErrorsComeBeforeCompute) {
  auto c = tiny("bad");
  c.data.height = 20;
  EXPECT_THROW(Trainer<float>{c}, ConfigError);
  auto d = tiny("bad2");
  d.data.root = (dir_ / "absent").string();
  EXPECT_THROW(Trainer<float>{d}, data::DataError);
  EXPECT_FALSE(fs::exists(dir_ / "bad"));
}

TEST_F(TrainerTest, EvaluateChecksCheckpointAgainstConfig) {
  auto c = tiny("ev");
  c.run.epochs = 1;
  Trainer<float> t(c);
  t.run();
  auto e = t.config();
  e.run.checkpoint = t.best_path().string();
  e.eval.split = "train";
  auto r = evaluate_checkpoint<float>(e);
  EXPECT_EQ(r.ids.size(), 8u);
  EXPECT_TRUE(fs::exists(t.output_dir() / "eval_train.tsv"));
  auto wrong = e;
  wrong.model.kan_dims = {8, 16};
  EXPECT_THROW(evaluate_checkpoint<float>(wrong), CheckpointError);
  auto wrong_dtype = e;
  EXPECT_THROW(evaluate_checkpoint<double>(wrong_dtype), CheckpointError);
}

TEST_F(TrainerTest, OverfitsTinyDataset) {
  // Ten blobs, all in the training split, no augmentation.
  data::make_blobs(dir_ / "all", {8, 16, 11}, 1.0);
  auto c = tiny("overfit");
  c.data.root = (dir_ / "all").string();
  c.data.augment = "none";
  c.optim.batch_size = 8;
  c.optim.lr = 1e-2;
  c.run.epochs = 60;
  Trainer<float> t(c);
  t.run();
  auto r = evaluate_samples(t.model(), t.train_samples(), 8, 0.5);
  EXPECT_GT(r.metrics.mean_iou, 0.8);
}
