#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "biocular/dataset.hpp"
#include "biocular/errors.hpp"

using namespace biocular;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("biocular_dataset_" + name);
  fs::remove_all(p);
  return p;
}

Image8 random_rgb(int w, int h, std::mt19937& rng) {
  Image8 img(w, h, 3);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

SynthesisConfig tiny_synthesis() {
  SynthesisConfig c;
  c.latent_dim = 8;
  c.output_resolution = 8;
  c.channels = {{4, 8}, {8, 8}};
  c.mapping_layers = 2;
  return c;
}

SmgModel smg_for(Generator& g) {
  auto stack = synthesize_seed(g, 0).features;
  const int d = static_cast<int>(stack.total_channels());
  std::vector<PixelMlp> members;
  for (int i = 0; i < 3; ++i) {
    PixelMlp m(d, 8, 8, 4);
    m->reset(i);
    members.push_back(m);
  }
  return SmgModel(members, {torch::zeros({d}), torch::ones({d})}, ClassPalette::ocular4(), stack.fingerprint());
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Dataset, GeneratedTripletsAreDeterministic) {
  torch::manual_seed(0);
  Generator g(tiny_synthesis());
  g->eval();
  auto smg = smg_for(g);
  auto a = temp_dir("det_a"), b = temp_dir("det_b");
  auto ma = generate_triplets(g, smg, 4, 100, a, {"ckpt", {{"k", 1}}});
  auto mb = generate_triplets(g, smg, 4, 100, b, {"ckpt", {{"k", 1}}});
  EXPECT_EQ(ma.content_hash, mb.content_hash);
  EXPECT_EQ(read_bytes(a / kManifestName), read_bytes(b / kManifestName));
  ASSERT_EQ(ma.records.size(), 4u);
  EXPECT_EQ(ma.records[2].seed, 102u);
  EXPECT_EQ(ma.records[0].smg_fingerprint, smg.fingerprint());
  EXPECT_EQ(ma.records[0].checkpoint_fingerprint, "ckpt");
  EXPECT_EQ(ma.source, "generated");

  auto other = generate_triplets(g, smg, 4, 200, temp_dir("det_c"), {"ckpt", {{"k", 1}}});
  EXPECT_NE(other.content_hash, ma.content_hash);

  auto data = load_triplets(a, read_manifest(a));
  ASSERT_EQ(data.vis.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(data.vis[i].width, 8);
    EXPECT_EQ(data.nir[i].channels, 1);
    EXPECT_EQ(data.masks[i].width, data.vis[i].width);
    EXPECT_EQ(data.masks[i].height, data.nir[i].height);
  }
  for (auto p : {a, b}) fs::remove_all(p);
  fs::remove_all(temp_dir("det_c"));
}

TEST(Dataset, ZeroRecordsGiveAValidEmptyManifest) {
  torch::manual_seed(0);
  Generator g(tiny_synthesis());
  auto smg = smg_for(g);
  auto root = temp_dir("empty");
  auto m = generate_triplets(g, smg, 0, 0, root);
  EXPECT_TRUE(m.records.empty());
  EXPECT_FALSE(m.content_hash.empty());
  auto back = read_manifest(root);
  EXPECT_TRUE(back.records.empty());
  EXPECT_EQ(back.content_hash, m.content_hash);
  fs::remove_all(root);
}

TEST(Dataset, TapMismatchRefusesToGenerate) {
  torch::manual_seed(0);
  Generator g(tiny_synthesis());
  std::vector<PixelMlp> members{PixelMlp(3, 4, 4, 4)};
  SmgModel wrong(members, {torch::zeros({3}), torch::ones({3})}, ClassPalette::ocular4(), "elsewhere");
  EXPECT_THROW(generate_triplets(g, wrong, 2, 0, temp_dir("mismatch")), ConfigError);
  fs::remove_all(temp_dir("mismatch"));
}

TEST(Dataset, ManifestHashChangesIffBytesChange) {
  auto root = temp_dir("hash");
  auto m = write_procedural_dataset(root, 3, 5, 16);
  EXPECT_EQ(m.source, "procedural");
  EXPECT_EQ(compute_content_hash(root, m.records), m.content_hash);

  auto copy = temp_dir("hash_copy");
  auto m2 = write_procedural_dataset(copy, 3, 5, 16);
  EXPECT_EQ(m2.content_hash, m.content_hash);

  auto file = root / m.records[1].nir_path;
  auto original = read_bytes(file);
  auto changed = original;
  changed[changed.size() / 2] ^= 0x01;
  write_bytes(file, changed);
  EXPECT_NE(compute_content_hash(root, m.records), m.content_hash);
  write_bytes(file, original);
  EXPECT_EQ(compute_content_hash(root, m.records), m.content_hash);

  fs::remove_all(root);
  fs::remove_all(copy);
}

TEST(Dataset, ManifestRoundTrip) {
  auto root = temp_dir("manifest");
  auto m = write_procedural_dataset(root, 2, 1, 16, {ClassScheme::kFine10, false});
  auto back = read_manifest(root);
  EXPECT_EQ(back.records, m.records);
  EXPECT_EQ(back.palette, ClassPalette::ocular10());
  EXPECT_EQ(back.resolution, 16);
  EXPECT_EQ(back.config, m.config);
  EXPECT_THROW(read_manifest(root / "missing"), IoError);
  EXPECT_EQ(record_id(42), "000042");
  fs::remove_all(root);
}

TEST(Dataset, LoadTripletsCropsAndResizes) {
  auto root = temp_dir("resize");
  auto m = write_procedural_dataset(root, 2, 1, 32);
  auto data = load_triplets(root, m, 16);
  ASSERT_EQ(data.vis.size(), 2u);
  EXPECT_EQ(data.vis[0].width, 16);
  EXPECT_EQ(data.nir[0].height, 16);
  EXPECT_EQ(data.masks[0].width, 16);
  for (auto l : data.masks[0].labels) EXPECT_LT(l, 4);
  auto tensors = to_bimodal_dataset(data);
  EXPECT_EQ(tensors.vis.sizes(), (std::vector<int64_t>{2, 3, 16, 16}));
  EXPECT_LE(tensors.vis.max().item<float>(), 1.0f);
  EXPECT_GE(tensors.nir.min().item<float>(), -1.0f);
  fs::remove_all(root);
}

TEST(Composite, LumaSubstitutionIsIdentity) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto vis = random_rgb(16, 16, rng);
    auto comp = composite_alignment_image(vis, luma(vis));
    for (std::size_t i = 0; i < vis.data.size(); ++i) ASSERT_LE(std::abs(comp.data[i] - vis.data[i]), 1);
    auto again = composite_alignment_image(comp, luma(comp));
    for (std::size_t i = 0; i < vis.data.size(); ++i) ASSERT_LE(std::abs(again.data[i] - comp.data[i]), 1);
  }
}

TEST(Composite, GrayVisReplicatesNir) {
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> d(0, 255);
  Image8 vis(12, 12, 3), nir(12, 12, 1);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      const auto g = static_cast<std::uint8_t>(d(rng));
      for (int c = 0; c < 3; ++c) vis.at(x, y, c) = g;
      nir.at(x, y) = static_cast<std::uint8_t>(d(rng));
    }
  auto comp = composite_alignment_image(vis, nir);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x)
      for (int c = 0; c < 3; ++c) ASSERT_LE(std::abs(comp.at(x, y, c) - nir.at(x, y)), 1);
}

TEST(Composite, LumaMatchesBt601) {
  Image8 vis(1, 1, 3);
  vis.data = {200, 100, 50};
  EXPECT_EQ(luma(vis).data[0], static_cast<std::uint8_t>(std::lround(0.299 * 200 + 0.587 * 100 + 0.114 * 50)));
}

TEST(Nearest, ExactMatchAndTies) {
  auto set = torch::rand({10, 3, 4, 4});
  auto hit = nearest_training_sample(set[7], set);
  EXPECT_EQ(hit.index, 7);
  EXPECT_EQ(hit.mse, 0.0);
  auto same = torch::ones({5, 3, 4, 4});
  EXPECT_EQ(nearest_training_sample(torch::ones({3, 4, 4}), same).index, 0);
  EXPECT_ANY_THROW(nearest_training_sample(torch::ones({3, 4, 4}), torch::zeros({0, 3, 4, 4})));
}

TEST(Nearest, HandComputedMse) {
  auto query = torch::zeros({1, 2, 2});
  auto half = torch::full({1, 2, 2}, 0.5);                       // mse 0.25
  auto split = torch::tensor({1.0f, 0.0f, 1.0f, 0.0f}).view({1, 2, 2});  // mse 0.5
  auto r = nearest_training_sample(query, torch::stack({split, half}));
  EXPECT_EQ(r.index, 1);
  EXPECT_NEAR(r.mse, 0.25, 1e-12);

  Image8 q(2, 2, 1, 0), a(2, 2, 1, 255), b(2, 2, 1, 0);
  b.data[0] = 255;
  std::vector<Image8> imgs{a, b};
  auto ri = nearest_training_sample(q, imgs);
  EXPECT_EQ(ri.index, 1);
  EXPECT_NEAR(ri.mse, 0.25, 1e-12);
}
