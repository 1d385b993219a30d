#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "biocular/config.hpp"
#include "biocular/dataset.hpp"
#include "biocular/errors.hpp"
#include "biocular/hash.hpp"
#include "biocular/metrics.hpp"
#include "biocular/pipeline.hpp"
#include "biocular/segmenter.hpp"
#include "biocular/service.hpp"
#include "biocular/smg.hpp"
#include "biocular/training.hpp"

namespace fs = std::filesystem;
using namespace biocular;

namespace {

constexpr int kUsageError = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "TOML run configuration");
  cmd->add_option("--seed", c.seed, "overrides [run] seed");
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw UsageError("config file not found: " + c.config);
    cfg = load_run_config(c.config);
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    const auto tok = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (tok.empty()) throw UsageError("bad --seeds list: " + s);
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + tok + "' in --seeds");
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

AnnotationService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biocular: bimodal ocular GAN, mask generator and segmentation pipeline"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common c_render, c_gan, c_synth, c_smg, c_gen, c_seg, c_eval, c_comp, c_mix, c_serve, c_loop;

  auto* render = app.add_subcommand("render-procedural", "render a procedural VIS/NIR/mask dataset");
  add_common(render, c_render);
  std::int64_t render_n = -1;
  int render_res = 0;
  std::string render_out;
  render->add_option("--n", render_n, "number of samples (default: data.procedural_count)");
  render->add_option("--resolution", render_res, "side length (default: synthesis.output_resolution)");
  render->add_option("--out", render_out, "dataset root")->required();

  auto* gan = app.add_subcommand("train-gan", "train the dual-branch generator on a dataset");
  add_common(gan, c_gan);
  std::string gan_data, gan_out, gan_resume;
  std::optional<double> gan_kimg;
  gan->add_option("--data", gan_data, "training dataset root")->required();
  gan->add_option("--out", gan_out, "output directory for checkpoints and progress log")->required();
  gan->add_option("--kimg", gan_kimg, "overrides train.total_kimg");
  gan->add_option("--resume", gan_resume, "checkpoint to continue from");

  auto* synth = app.add_subcommand("synth", "generate image pairs (no masks) for annotation");
  add_common(synth, c_synth);
  std::string synth_ckpt, synth_out, synth_scheme = "coarse4";
  std::int64_t synth_n = 8;
  synth->add_option("--checkpoint", synth_ckpt, "GAN checkpoint")->required();
  synth->add_option("--n", synth_n, "number of pairs");
  synth->add_option("--out", synth_out, "dataset root")->required();
  synth->add_option("--palette", synth_scheme, "coarse4 or fine10");

  auto* smg_cmd = app.add_subcommand("train-smg", "train the semantic mask generator from annotated pairs");
  add_common(smg_cmd, c_smg);
  std::string smg_ckpt, smg_ann, smg_out, smg_auto;
  smg_cmd->add_option("--checkpoint", smg_ckpt, "GAN checkpoint")->required();
  smg_cmd->add_option("--annotations", smg_ann, "dataset root whose records carry masks")->required();
  smg_cmd->add_option("--auto-annotate", smg_auto,
                      "procedural dataset used to fill missing masks by scripted fitting");
  smg_cmd->add_option("--out", smg_out, "model file")->required();

  auto* gen = app.add_subcommand("gen-dataset", "generate labeled triplets");
  add_common(gen, c_gen);
  std::string gen_ckpt, gen_smg, gen_out;
  std::int64_t gen_n = -1;
  gen->add_option("--checkpoint", gen_ckpt, "GAN checkpoint")->required();
  gen->add_option("--smg", gen_smg, "SMG model")->required();
  gen->add_option("--n", gen_n, "number of triplets (default: data.triplets)");
  gen->add_option("--out", gen_out, "dataset root")->required();

  auto* seg = app.add_subcommand("train-seg", "train the segmenter on triplets");
  add_common(seg, c_seg);
  std::string seg_train, seg_val, seg_out, seg_mod = "vis";
  seg->add_option("--train", seg_train, "training dataset root")->required();
  seg->add_option("--val", seg_val, "validation dataset root")->required();
  seg->add_option("--modality", seg_mod, "vis or nir");
  seg->add_option("--out", seg_out, "segmenter file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a segmenter on a labeled dataset");
  add_common(eval, c_eval);
  std::string eval_model, eval_test, eval_csv;
  bool eval_no_bg = false;
  eval->add_option("--model", eval_model, "segmenter file")->required();
  eval->add_option("--test", eval_test, "test dataset root")->required();
  eval->add_option("--csv", eval_csv, "per-image report");
  eval->add_flag("--exclude-background", eval_no_bg, "leave class 0 out of IoU/F1 means");

  auto* comp = app.add_subcommand("composite", "VIS/NIR alignment composites and scores");
  add_common(comp, c_comp);
  std::string comp_data, comp_out;
  comp->add_option("--dataset", comp_data, "dataset root")->required();
  comp->add_option("--out", comp_out, "directory for composite PNGs")->required();

  auto* mix = app.add_subcommand("style-mix", "style-mixing grid from two seeds");
  add_common(mix, c_mix);
  std::string mix_ckpt, mix_seeds, mix_out;
  int mix_cross = 16;
  mix->add_option("--checkpoint", mix_ckpt, "GAN checkpoint")->required();
  mix->add_option("--crossover", mix_cross, "blocks up to this resolution take styles from the first seed");
  mix->add_option("--seeds", mix_seeds, "two comma-separated seeds")->required();
  mix->add_option("--out", mix_out, "grid PNG")->required();

  auto* serve = app.add_subcommand("annotate-serve", "serve a dataset to the annotation UI");
  add_common(serve, c_serve);
  std::string serve_data, serve_host = "127.0.0.1";
  int serve_port = 8765;
  serve->add_option("--dataset", serve_data, "dataset root")->required();
  serve->add_option("--host", serve_host, "bind address");
  serve->add_option("--port", serve_port, "port");

  auto* loop = app.add_subcommand("closed-loop", "run every stage end to end and report held-out metrics");
  add_common(loop, c_loop);
  std::vector<int> loop_counts{8, 2};
  loop->add_option("--annotations", loop_counts, "annotation counts to compare");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*render) {
      const auto cfg = resolve(c_render);
      const auto m = write_procedural_dataset(render_out, render_n >= 0 ? render_n : cfg.data.procedural_count,
                                              cfg.seed, render_res > 0 ? render_res : cfg.synthesis.output_resolution,
                                              cfg.data.render_options());
      std::cout << m.content_hash << "\n";
    } else if (*gan) {
      auto cfg = resolve(c_gan);
      if (gan_kimg) cfg.train.total_kimg = *gan_kimg;
      cfg.validate();
      const auto m = read_manifest(gan_data);
      if (m.resolution != cfg.synthesis.output_resolution)
        throw ConfigError("dataset resolution " + std::to_string(m.resolution) + " differs from the generator's " +
                          std::to_string(cfg.synthesis.output_resolution));
      auto data = to_bimodal_dataset(load_triplets(gan_data, m));
      auto trainer = gan_resume.empty() ? GanTrainer(cfg.synthesis, cfg.train, cfg.seed)
                                        : GanTrainer::load_checkpoint(gan_resume);
      const auto result = trainer.train(data, gan_out, [&](const StepRecord& r) {
        if (cfg.train.log_every > 0 && r.step % cfg.train.log_every == 0) log_line(r.to_json().dump());
        return true;
      });
      for (const auto& p : result.checkpoints) std::cout << p.string() << "\n";
      if (result.status == TrainStatus::kDiverged) {
        std::cerr << "training diverged: " << result.message << "\n";
        return 1;
      }
    } else if (*synth) {
      const auto cfg = resolve(c_synth);
      auto g = load_ema_generator(synth_ckpt);
      const auto palette = synth_scheme == "fine10" ? ClassPalette::ocular10() : ClassPalette::ocular4();
      if (synth_scheme != "fine10" && synth_scheme != "coarse4") throw UsageError("--palette must be coarse4 or fine10");
      const auto m = generate_pairs(g, synth_n, cfg.seed, synth_out, palette, {sha256_file(synth_ckpt), cfg.to_json()});
      std::cout << m.content_hash << "\n";
    } else if (*smg_cmd) {
      const auto cfg = resolve(c_smg);
      auto g = load_ema_generator(smg_ckpt);
      if (!smg_auto.empty()) {
        auto ann = read_manifest(smg_ann);
        const auto proc = read_manifest(smg_auto);
        const auto candidates = procedural_params(proc);
        FitOptions fit;
        fit.render = cfg.data.render_options();
        fit.iterations = cfg.data.annotator_iterations;
        for (auto& r : ann.records) {
          if (!r.mask_path.empty()) continue;
          fit.seed = cfg.seed + r.seed;
          const auto f = fit_procedural_annotation(read_png(fs::path(smg_ann) / r.vis_path),
                                                   read_png(fs::path(smg_ann) / r.nir_path), candidates, fit);
          r.mask_path = mask_relpath(r.id);
          write_png(fs::path(smg_ann) / r.mask_path, mask_to_image(f.mask));
          log_line("annotated " + r.id + " (fit mse " + std::to_string(f.mse) + ")");
        }
        ann.content_hash = compute_content_hash(smg_ann, ann.records);
        write_manifest(smg_ann, ann);
      }
      const auto samples = annotated_samples_from_dataset(g, smg_ann);
      if (samples.empty()) throw InputError("no annotated records under " + smg_ann);
      auto smg_cfg = cfg.smg;
      smg_cfg.seed = cfg.seed;
      SmgTrainReport rep;
      const auto model = train_smg(samples, read_manifest(smg_ann).palette, smg_cfg, &rep);
      for (const auto& w : rep.warnings) log_line("warning: " + w);
      model.save(smg_out);
      std::cout << "ensemble training accuracy " << rep.ensemble_accuracy << "\n" << model.fingerprint() << "\n";
    } else if (*gen) {
      const auto cfg = resolve(c_gen);
      auto g = load_ema_generator(gen_ckpt);
      const auto model = SmgModel::load(gen_smg);
      const auto m = generate_triplets(g, model, gen_n >= 0 ? gen_n : cfg.data.triplets, cfg.seed, gen_out,
                                       {sha256_file(gen_ckpt), cfg.to_json()});
      std::cout << m.content_hash << "\n";
    } else if (*seg) {
      const auto cfg = resolve(c_seg);
      auto seg_cfg = cfg.segmenter;
      seg_cfg.seed = cfg.seed;
      auto model = train_segmenter(seg_train, seg_val, domain_from_string(seg_mod), seg_cfg, nullptr,
                                   [](const SegEpochRecord& e) {
                                     log_line("epoch " + std::to_string(e.epoch) + " train " +
                                              std::to_string(e.train_loss) + " val " + std::to_string(e.val_loss) +
                                              " lr " + std::to_string(e.learning_rate) + " " + to_string(e.action));
                                   });
      model.save(seg_out);
    } else if (*eval) {
      (void)resolve(c_eval);
      auto model = Segmenter::load(eval_model);
      const auto m = read_manifest(eval_test);
      const auto table = evaluate_segmenter(model, load_triplets(eval_test, m), m.palette,
                                            MetricOptions{.include_background = !eval_no_bg});
      if (!eval_csv.empty()) table.write_csv(eval_csv);
      std::cout << table.summary() << "\n";
    } else if (*comp) {
      (void)resolve(c_comp);
      const auto m = read_manifest(comp_data);
      const auto data = load_triplets(comp_data, m);
      fs::create_directories(comp_out);
      std::vector<double> scores;
      for (std::size_t i = 0; i < data.ids.size(); ++i) {
        write_png(fs::path(comp_out) / (data.ids[i] + "_composite.png"),
                  composite_alignment_image(data.vis[i], data.nir[i]));
        scores.push_back(alignment_score(data.vis[i], data.nir[i]));
        std::cout << data.ids[i] << "," << scores.back() << "\n";
      }
      const auto s = mean_std(scores);
      std::cout << "mean," << s.mean << "\nstd," << s.std << "\n";
    } else if (*mix) {
      (void)resolve(c_mix);
      const auto seeds = parse_seeds(mix_seeds);
      if (seeds.size() != 2) throw UsageError("--seeds takes exactly two seeds");
      auto g = load_ema_generator(mix_ckpt);
      torch::NoGradGuard guard;
      const auto& sc = g->config();
      auto wa = g->map_latent(sample_latents(1, sc.latent_dim, seeds[0]));
      auto wb = g->map_latent(sample_latents(1, sc.latent_dim, seeds[1]));
      std::vector<Image8> vis_row, nir_row;
      for (int cross : {kCrossoverAllA, kCrossoverAllB, mix_cross}) {
        const auto r = g->synthesize(style_mix(wa, wb, cross, sc), NoiseMode::kFixed, seeds[0]);
        auto [v, n] = pair_images(r.pair);
        vis_row.push_back(v);
        nir_row.push_back(gray_to_rgb(n));
      }
      const std::vector<Image8> rows{hconcat(vis_row), hconcat(nir_row)};
      write_png(mix_out, vconcat(rows));
      std::cout << mix_out << "\n";
    } else if (*serve) {
      (void)resolve(c_serve);
      AnnotationService service(serve_data);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving " << serve_data << " on http://" << serve_host << ":" << serve_port << std::endl;
      if (!service.listen(serve_host, serve_port)) {
        std::cerr << "cannot bind " << serve_host << ":" << serve_port << "\n";
        return 1;
      }
    } else if (*loop) {
      const auto cfg = resolve(c_loop);
      const auto result = run_closed_loop(cfg, loop_counts, log_line);
      for (const auto& arm : result.arms)
        std::printf("annotations=%d iou=%.4f±%.4f f1=%.4f±%.4f pixel_error=%.4f±%.4f smg_acc=%.4f\n", arm.annotations,
                    arm.iou.mean, arm.iou.std, arm.f1.mean, arm.f1.std, arm.pixel_error.mean, arm.pixel_error.std,
                    arm.smg_training_accuracy);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsageError;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
