#include <gtest/gtest.h>

#include <filesystem>

#include "biocular/errors.hpp"
#include "biocular/segmenter.hpp"

using namespace biocular;
namespace fs = std::filesystem;

namespace {

TripletData procedural_data(int n, int resolution, std::uint64_t seed) {
  TripletData d;
  for (int i = 0; i < n; ++i) {
    auto r = render_sample(sample_valid_params(seed, i, resolution), resolution);
    d.ids.push_back(record_id(i));
    d.vis.push_back(r.vis);
    d.nir.push_back(r.nir);
    d.masks.push_back(r.mask);
  }
  return d;
}

double pixel_accuracy(Segmenter& s, const TripletData& d) {
  auto pred = s.predict(d.vis);
  std::size_t right = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t p = 0; p < pred[i].size(); ++p) {
      right += pred[i].labels[p] == d.masks[i].labels[p];
      ++total;
    }
  return static_cast<double>(right) / total;
}

}  // namespace

TEST(Plateau, DecaysOnFifthStagnantEpochAndStopsOnTenth) {
  PlateauSchedule s(1e-4, 10.0, 5, 10);
  EXPECT_EQ(s.observe(1.0), PlateauSchedule::Action::kImproved);
  EXPECT_EQ(s.observe(0.9), PlateauSchedule::Action::kImproved);
  std::vector<double> lr_trace;
  std::vector<PlateauSchedule::Action> actions;
  for (int i = 0; i < 10; ++i) {
    actions.push_back(s.observe(0.95));
    lr_trace.push_back(s.learning_rate());
  }
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(actions[i], PlateauSchedule::Action::kStagnant);
    EXPECT_DOUBLE_EQ(lr_trace[i], 1e-4);
  }
  EXPECT_EQ(actions[4], PlateauSchedule::Action::kDecayed);
  EXPECT_DOUBLE_EQ(lr_trace[4], 1e-5);
  for (int i = 5; i < 9; ++i) EXPECT_EQ(actions[i], PlateauSchedule::Action::kStagnant);
  EXPECT_EQ(actions[9], PlateauSchedule::Action::kStop);
  EXPECT_DOUBLE_EQ(s.learning_rate(), 1e-5);
}

TEST(Plateau, ImprovementResetsTheCounter) {
  PlateauSchedule s(1e-4, 10.0, 5, 10);
  s.observe(1.0);
  for (int i = 0; i < 4; ++i) s.observe(2.0);
  EXPECT_EQ(s.observe(0.5), PlateauSchedule::Action::kImproved);
  EXPECT_EQ(s.stagnant_epochs(), 0);
  for (int i = 0; i < 4; ++i) s.observe(0.6);
  EXPECT_DOUBLE_EQ(s.learning_rate(), 1e-4);
}

TEST(Segmenter, ConfigValidation) {
  SegTrainConfig c;
  c.patience_stop = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(SegTrainConfig{}.validate());
}

TEST(Segmenter, InputSideMustBeDivisibleByEight) {
  UNet net(3, 4, 8);
  EXPECT_THROW(net->forward(torch::zeros({1, 3, 12, 12})), InputError);
  EXPECT_EQ(net->forward(torch::zeros({2, 3, 16, 16})).sizes(), (std::vector<int64_t>{2, 4, 16, 16}));
}

TEST(Segmenter, DeskScaleParameterCount) {
  UNet net(3, 4, 24);
  std::int64_t n = 0;
  for (auto& p : net->parameters()) n += p.numel();
  EXPECT_GT(n, 500000);
  EXPECT_LT(n, 2000000);
}

TEST(Segmenter, FirstEpochLossIsDeterministic) {
  auto data = procedural_data(8, 16, 3);
  SegTrainConfig c;
  c.max_epochs = 1;
  c.base_width = 8;
  c.seed = 12;
  SegTrainReport a, b;
  train_segmenter(data, data, ClassPalette::ocular4(), Domain::kVis, c, &a);
  train_segmenter(data, data, ClassPalette::ocular4(), Domain::kVis, c, &b);
  ASSERT_EQ(a.epochs.size(), 1u);
  EXPECT_EQ(a.epochs[0].train_loss, b.epochs[0].train_loss);
  EXPECT_EQ(a.epochs[0].val_loss, b.epochs[0].val_loss);
}

TEST(Segmenter, OverfitsFiftyProceduralTriplets) {
  auto data = procedural_data(50, 32, 21);
  SegTrainConfig c;
  c.learning_rate = 3e-3;
  c.max_epochs = 40;
  c.base_width = 16;
  c.seed = 1;
  SegTrainReport report;
  auto model = train_segmenter(data, data, ClassPalette::ocular4(), Domain::kVis, c, &report);
  EXPECT_GT(pixel_accuracy(model, data), 0.95);
  auto table = evaluate_segmenter(model, data, ClassPalette::ocular4());
  EXPECT_EQ(table.size(), 50u);
  EXPECT_GT(table.iou().mean, 0.9);

  auto path = fs::temp_directory_path() / "biocular_segmenter.pt";
  model.save(path);
  auto loaded = Segmenter::load(path);
  EXPECT_EQ(loaded.palette, model.palette);
  EXPECT_EQ(loaded.resolution, 32);
  auto a = model.predict({data.vis[0]});
  auto b = loaded.predict({data.vis[0]});
  EXPECT_EQ(a[0], b[0]);
  fs::remove(path);
}

TEST(Segmenter, EmptyPredictionErrorIsForegroundFraction) {
  auto data = procedural_data(5, 32, 8);
  for (auto& gt : data.masks) {
    SegmentationMask empty(gt.width, gt.height, 0);
    std::size_t fg = 0;
    for (auto l : gt.labels) fg += l != 0;
    auto m = segmentation_metrics(empty, gt, 4);
    EXPECT_DOUBLE_EQ(m.pixel_error, static_cast<double>(fg) / gt.size());
  }
}

TEST(Segmenter, ClassCountMismatchIsHardError) {
  auto data = procedural_data(2, 16, 4);
  SegTrainConfig c;
  c.max_epochs = 1;
  c.base_width = 4;
  auto model = train_segmenter(data, data, ClassPalette::ocular4(), Domain::kNir, c);
  EXPECT_EQ(model.modality, Domain::kNir);
  EXPECT_THROW(evaluate_segmenter(model, data, ClassPalette::ocular10()), InputError);
}

TEST(Segmenter, NirModelRejectsVisImagesAndResizesOthers) {
  auto small = procedural_data(2, 16, 4);
  SegTrainConfig c;
  c.max_epochs = 1;
  c.base_width = 4;
  auto model = train_segmenter(small, small, ClassPalette::ocular4(), Domain::kNir, c);
  EXPECT_THROW(model.predict(small.vis), InputError);
  auto big = procedural_data(2, 32, 4);
  auto table = evaluate_segmenter(model, big, ClassPalette::ocular4());
  EXPECT_EQ(table.size(), 2u);
}
