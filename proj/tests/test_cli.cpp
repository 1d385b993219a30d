#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "biocular/dataset.hpp"

using namespace biocular;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// stderr is folded into the captured output.
Run run(const std::string& args) {
  const std::string cmd = std::string(BIOCULAR_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string last_line(const std::string& s) {
  auto t = s;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  const auto pos = t.rfind('\n');
  return pos == std::string::npos ? t : t.substr(pos + 1);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "biocular_cli";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.toml") << R"([run]
seed = 3
[synthesis]
latent_dim = 8
output_resolution = 16
channels = { 4 = 8, 8 = 8, 16 = 8 }
mapping_layers = 2
[train]
total_kimg = 0.032
checkpoint_kimg = 0.032
[smg]
members = 2
max_epochs = 2
hidden1 = 16
hidden2 = 8
[segmenter]
max_epochs = 1
base_width = 4
[data]
annotator_iterations = 10
)";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string p(const std::string& rel) { return (dir_ / rel).string(); }
  static std::string cfg() { return "--config " + p("tiny.toml"); }

  static inline fs::path dir_;
};

}  // namespace

TEST(Cli, HelpExitsZero) {
  auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gen-dataset"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) { EXPECT_EQ(run("frobnicate").code, 2); }

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run("").code, 2); }

TEST(Cli, UnknownFlagIsUsageError) { EXPECT_EQ(run("render-procedural --out /tmp/x --bogus 1").code, 2); }

TEST(Cli, MissingConfigNamesThePath) {
  auto r = run("render-procedural --config /no/such/run.toml --out /tmp/biocular_cli_none");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("/no/such/run.toml"), std::string::npos) << r.out;
}

TEST(Cli, InvalidConfigIsReported) {
  auto path = fs::temp_directory_path() / "biocular_bad.toml";
  std::ofstream(path) << "[train]\nbogus = 1\n";
  auto r = run("render-procedural --config " + path.string() + " --out /tmp/biocular_cli_none");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("bogus"), std::string::npos) << r.out;
  fs::remove(path);
}

TEST_F(CliPipeline, StagesRunEndToEndAndGenerationIsDeterministic) {
  auto render = run("render-procedural " + cfg() + " --n 12 --resolution 16 --out " + p("proc"));
  ASSERT_EQ(render.code, 0) << render.out;
  EXPECT_EQ(last_line(render.out), read_manifest(p("proc")).content_hash);

  auto gan = run("train-gan " + cfg() + " --data " + p("proc") + " --out " + p("gan"));
  ASSERT_EQ(gan.code, 0) << gan.out;
  const std::string ckpt = last_line(gan.out);
  ASSERT_TRUE(fs::exists(ckpt)) << gan.out;
  EXPECT_TRUE(fs::exists(p("gan/progress.ndjson")));

  auto synth = run("synth " + cfg() + " --checkpoint " + ckpt + " --n 2 --out " + p("ann"));
  ASSERT_EQ(synth.code, 0) << synth.out;
  auto smg = run("train-smg " + cfg() + " --checkpoint " + ckpt + " --annotations " + p("ann") +
                 " --auto-annotate " + p("proc") + " --out " + p("smg.pt"));
  ASSERT_EQ(smg.code, 0) << smg.out;
  for (const auto& r : read_manifest(p("ann")).records) EXPECT_FALSE(r.mask_path.empty());

  auto gen_a = run("gen-dataset " + cfg() + " --checkpoint " + ckpt + " --smg " + p("smg.pt") +
                   " --n 3 --seed 0 --out " + p("gen_a"));
  auto gen_b = run("gen-dataset " + cfg() + " --checkpoint " + ckpt + " --smg " + p("smg.pt") +
                   " --n 3 --seed 0 --out " + p("gen_b"));
  ASSERT_EQ(gen_a.code, 0) << gen_a.out;
  ASSERT_EQ(gen_b.code, 0) << gen_b.out;
  EXPECT_EQ(last_line(gen_a.out), last_line(gen_b.out));
  EXPECT_EQ(last_line(gen_a.out).size(), 64u);
  EXPECT_EQ(read_manifest(p("gen_a")).records.size(), 3u);

  auto seg = run("train-seg " + cfg() + " --train " + p("gen_a") + " --val " + p("gen_b") + " --out " + p("seg.pt"));
  ASSERT_EQ(seg.code, 0) << seg.out;
  auto eval = run("eval " + cfg() + " --model " + p("seg.pt") + " --test " + p("proc") + " --csv " + p("eval.csv"));
  ASSERT_EQ(eval.code, 0) << eval.out;
  std::ifstream csv(p("eval.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "id,iou,f1,pixel_error");

  auto comp = run("composite " + cfg() + " --dataset " + p("gen_a") + " --out " + p("comp"));
  EXPECT_EQ(comp.code, 0) << comp.out;
  auto mix = run("style-mix " + cfg() + " --checkpoint " + ckpt + " --crossover 16 --seeds 1,2 --out " + p("mix.png"));
  ASSERT_EQ(mix.code, 0) << mix.out;
  auto grid = read_png(p("mix.png"));
  EXPECT_EQ(grid.width, 3 * 16);
  EXPECT_EQ(grid.height, 2 * 16);
  EXPECT_EQ(run("style-mix " + cfg() + " --checkpoint " + ckpt + " --seeds 1,x --out " + p("m2.png")).code, 2);
  EXPECT_EQ(run("gen-dataset " + cfg() + " --checkpoint " + p("nope.pt") + " --smg " + p("smg.pt") + " --out " +
                p("gen_c"))
                .code,
            1);
}
