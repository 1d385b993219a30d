#include "biocular/pipeline.hpp"

#include <chrono>
#include <cstdio>

#include "biocular/errors.hpp"
#include "biocular/hash.hpp"
#include "biocular/segmenter.hpp"
#include "biocular/training.hpp"

namespace biocular {

namespace fs = std::filesystem;

AnnotatedSample annotated_sample(Generator& generator, std::uint64_t seed, const SegmentationMask& mask,
                                 int num_classes) {
  const auto result = synthesize_seed(generator, seed);
  const int res = generator->config().output_resolution;
  if (mask.width != res || mask.height != res) throw InputError("annotation mask does not match the generator size");
  AnnotatedSample s;
  s.seed = seed;
  s.features = extract_hypercolumns(result.features, res)[0];
  s.mask = mask;
  s.num_classes = num_classes;
  s.fingerprint = result.features.fingerprint();
  return s;
}

std::vector<AnnotatedSample> annotated_samples_from_dataset(Generator& generator, const fs::path& root) {
  const auto manifest = read_manifest(root);
  std::vector<AnnotatedSample> out;
  for (const auto& r : manifest.records) {
    if (r.mask_path.empty()) continue;
    const auto mask = image_to_mask(read_png(root / r.mask_path));
    out.push_back(annotated_sample(generator, r.seed, mask, manifest.palette.size()));
  }
  return out;
}

DatasetManifest scripted_annotation(Generator& generator, const DatasetManifest& procedural, std::int64_t count,
                                    std::uint64_t base_seed, const fs::path& out_root, const FitOptions& fit,
                                    const LogFn& log) {
  const auto candidates = procedural_params(procedural);
  fs::create_directories(out_root / "images");
  fs::create_directories(out_root / "masks");
  DatasetManifest m;
  m.source = "pairs";
  m.resolution = generator->config().output_resolution;
  m.palette = procedural.palette;
  m.config = {{"annotator", "procedural-fit"}, {"iterations", fit.iterations}};
  for (std::int64_t i = 0; i < count; ++i) {
    const auto seed = base_seed + static_cast<std::uint64_t>(i);
    auto [vis, nir] = pair_images(synthesize_seed(generator, seed).pair);
    auto opts = fit;
    opts.seed = fit.seed + static_cast<std::uint64_t>(i);
    const auto f = fit_procedural_annotation(vis, nir, candidates, opts);
    if (log) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "annotated seed %llu: fit mse %.5f (start #%lld)",
                    static_cast<unsigned long long>(seed), f.mse, static_cast<long long>(f.init_index));
      log(buf);
    }
    m.records.push_back(write_record(out_root, record_id(static_cast<std::uint64_t>(i)), seed, vis, nir, &f.mask));
  }
  m.content_hash = compute_content_hash(out_root, m.records);
  write_manifest(out_root, m);
  return m;
}

StageSeeds stage_seeds(std::uint64_t s) {
  return {s, s + 7919, s + 104729, s + 1'000'000, s + 2'000'000, s + 3'000'000, s + 11, s + 13};
}

namespace {

bool has_manifest(const fs::path& root) { return fs::exists(root / kManifestName); }

DatasetManifest ensure_procedural(const fs::path& root, std::int64_t n, std::uint64_t seed, int res,
                                  const RenderOptions& opts, const LogFn& log) {
  if (has_manifest(root)) {
    auto m = read_manifest(root);
    if (static_cast<std::int64_t>(m.records.size()) == n && m.resolution == res) return m;
  }
  if (log) log("rendering " + std::to_string(n) + " procedural pairs into " + root.string());
  return write_procedural_dataset(root, n, seed, res, opts);
}

}  // namespace

ClosedLoopResult run_closed_loop(const RunConfig& cfg, const std::vector<int>& annotation_counts, const LogFn& log) {
  cfg.validate();
  if (annotation_counts.empty()) throw ConfigError("closed loop needs at least one annotation count");
  const fs::path work = cfg.paths.work_dir;
  fs::create_directories(work);
  const auto seeds = stage_seeds(cfg.seed);
  const int res = cfg.synthesis.output_resolution;
  const auto render = cfg.data.render_options();
  ClosedLoopResult out;

  const auto train_m = ensure_procedural(work / "procedural_train", cfg.data.procedural_count,
                                         seeds.procedural_train, res, render, log);
  const auto test_m = ensure_procedural(work / "procedural_test", cfg.data.holdout, seeds.procedural_test, res,
                                        render, log);

  out.checkpoint = work / "gan" / "final.pt";
  if (!fs::exists(out.checkpoint)) {
    if (log) log("training GAN for " + std::to_string(cfg.train.total_kimg) + " kimg");
    const auto t0 = std::chrono::steady_clock::now();
    auto data = to_bimodal_dataset(load_triplets(work / "procedural_train", train_m));
    GanTrainer trainer(cfg.synthesis, cfg.train, seeds.gan);
    auto result = trainer.train(data, work / "gan", [&](const StepRecord& r) {
      if (log && cfg.train.log_every > 0 && r.step % (cfg.train.log_every * 10) == 0)
        log("gan " + r.to_json().dump());
      return true;
    });
    if (result.status == TrainStatus::kDiverged || !result.last_good_checkpoint)
      throw DivergenceError("GAN training diverged: " + result.message);
    fs::copy_file(*result.last_good_checkpoint, out.checkpoint, fs::copy_options::overwrite_existing);
    out.gan_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  auto gen = load_ema_generator(out.checkpoint);
  const auto ckpt_fp = sha256_file(out.checkpoint);

  const int max_ann = *std::max_element(annotation_counts.begin(), annotation_counts.end());
  const auto ann_root = work / "annotations";
  DatasetManifest ann_m;
  if (has_manifest(ann_root) && static_cast<int>(read_manifest(ann_root).records.size()) == max_ann) {
    ann_m = read_manifest(ann_root);
  } else {
    FitOptions fit;
    fit.render = render;
    fit.iterations = cfg.data.annotator_iterations;
    fit.seed = seeds.annotation;
    ann_m = scripted_annotation(gen, train_m, max_ann, seeds.annotation, ann_root, fit, log);
  }
  const auto all_samples = annotated_samples_from_dataset(gen, ann_root);
  const auto test = load_triplets(work / "procedural_test", test_m, res);

  for (int k : annotation_counts) {
    ClosedLoopArm arm;
    arm.annotations = k;
    const std::vector<AnnotatedSample> samples(all_samples.begin(), all_samples.begin() + k);
    auto smg_cfg = cfg.smg;
    smg_cfg.seed = seeds.smg;
    SmgTrainReport smg_rep;
    const auto smg = train_smg(samples, train_m.palette, smg_cfg, &smg_rep);
    for (const auto& w : smg_rep.warnings)
      if (log) log("smg warning: " + w);
    arm.smg_training_accuracy = smg_rep.ensemble_accuracy;
    const auto tag = "a" + std::to_string(k);
    smg.save(work / ("smg_" + tag + ".pt"));
    GenerationInfo info{ckpt_fp, cfg.to_json()};
    if (log) log("generating " + std::to_string(cfg.data.triplets) + " triplets (" + tag + ")");
    const auto trip = generate_triplets(gen, smg, cfg.data.triplets, seeds.triplets, work / ("triplets_" + tag), info);
    arm.manifest_hash = trip.content_hash;
    const auto val = generate_triplets(gen, smg, cfg.data.validation, seeds.validation, work / ("val_" + tag), info);
    auto seg_cfg = cfg.segmenter;
    seg_cfg.seed = seeds.segmenter;
    auto seg = train_segmenter(load_triplets(work / ("triplets_" + tag), trip), load_triplets(work / ("val_" + tag), val),
                               trip.palette, Domain::kVis, seg_cfg, nullptr, [&](const SegEpochRecord& e) {
                                 if (log)
                                   log("seg " + tag + " epoch " + std::to_string(e.epoch) + " train " +
                                       std::to_string(e.train_loss) + " val " + std::to_string(e.val_loss) + " " +
                                       to_string(e.action));
                               });
    seg.save(work / ("segmenter_" + tag + ".pt"));
    const auto table = evaluate_segmenter(seg, test, test_m.palette);
    table.write_csv(work / ("eval_" + tag + ".csv"));
    arm.iou = table.iou();
    arm.f1 = table.f1();
    arm.pixel_error = table.pixel_error();
    if (log) log("closed loop " + tag + ": " + table.summary());
    out.arms.push_back(arm);
  }
  return out;
}

}  // namespace biocular
