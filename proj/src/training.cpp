#include "biocular/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "biocular/errors.hpp"

namespace biocular {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (r1_interval < 1 || pl_interval < 1) throw ConfigError("regularization intervals must be >= 1");
  if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("flip_prob must be in [0, 1]");
  if (pl_decay < 0 || pl_decay > 1) throw ConfigError("pl_decay must be in [0, 1]");
  if (total_kimg < 0) throw ConfigError("total_kimg must be non-negative");
  if (divergence_window < 1) throw ConfigError("divergence_window must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},   {"batch_size", c.batch_size},
                     {"beta1", c.beta1},                   {"beta2", c.beta2},
                     {"eps", c.eps},                       {"total_kimg", c.total_kimg},
                     {"r1_interval", c.r1_interval},       {"pl_interval", c.pl_interval},
                     {"flip_prob", c.flip_prob},           {"pl_decay", c.pl_decay},
                     {"ema_kimg", c.ema_kimg},             {"ema_rampup", c.ema_rampup},
                     {"checkpoint_kimg", c.checkpoint_kimg}, {"log_every", c.log_every},
                     {"divergence_logit", c.divergence_logit}, {"divergence_window", c.divergence_window}};
  j["gamma1"] = c.gamma1 ? nlohmann::json(*c.gamma1) : nlohmann::json(nullptr);
  j["gamma2"] = c.gamma2 ? nlohmann::json(*c.gamma2) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.at("learning_rate");
  c.batch_size = j.at("batch_size");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.eps = j.at("eps");
  c.total_kimg = j.at("total_kimg");
  c.r1_interval = j.at("r1_interval");
  c.pl_interval = j.at("pl_interval");
  c.flip_prob = j.at("flip_prob");
  c.pl_decay = j.at("pl_decay");
  c.ema_kimg = j.at("ema_kimg");
  c.ema_rampup = j.at("ema_rampup");
  c.checkpoint_kimg = j.at("checkpoint_kimg");
  c.log_every = j.at("log_every");
  c.divergence_logit = j.at("divergence_logit");
  c.divergence_window = j.at("divergence_window");
  c.gamma1 = j.at("gamma1").is_null() ? std::nullopt : std::optional<double>(j.at("gamma1").get<double>());
  c.gamma2 = j.at("gamma2").is_null() ? std::nullopt : std::optional<double>(j.at("gamma2").get<double>());
}

void BimodalDataset::validate() const {
  if (size() == 0) throw InputError("dataset is empty");
  if (vis.dim() != 4 || vis.size(1) != 3) throw InputError("dataset VIS images must be [M, 3, R, R]");
  if (nir.dim() != 4 || nir.size(1) != 1) throw InputError("dataset NIR images must be [M, 1, R, R]");
  if (nir.size(0) != vis.size(0) || nir.size(2) != vis.size(2) || nir.size(3) != vis.size(3))
    throw InputError("dataset VIS and NIR images are not aligned");
}

BimodalPair sample_real_batch(const BimodalDataset& data, int batch_size, double flip_prob, at::Generator& gen) {
  auto idx = torch::randint(0, data.size(), {batch_size}, gen, torch::kLong);
  auto flip = (torch::rand({batch_size}, gen) < flip_prob).view({-1, 1, 1, 1});
  auto vis = data.vis.index_select(0, idx);
  auto nir = data.nir.index_select(0, idx);
  return {torch::where(flip, vis.flip({3}), vis), torch::where(flip, nir.flip({3}), nir)};
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

void update_ema(torch::nn::Module& ema, const torch::nn::Module& model, double decay) {
  torch::NoGradGuard guard;
  auto src = model.named_parameters();
  for (auto& item : ema.named_parameters()) {
    const auto& p = src[item.key()];
    item.value().mul_(decay).add_(p, 1.0 - decay);
  }
  auto src_buf = model.named_buffers();
  for (auto& item : ema.named_buffers()) item.value().copy_(src_buf[item.key()]);
}

void copy_module_state(torch::nn::Module& dst, const torch::nn::Module& src) { update_ema(dst, src, 0.0); }

double ema_decay_for(double half_life_images, int batch_size) {
  if (half_life_images <= 0) return 0.0;
  return std::pow(0.5, batch_size / half_life_images);
}

nlohmann::json StepRecord::to_json() const {
  auto d = [](const DiscriminatorLoss& l) {
    return nlohmann::json{{"fake", l.fake_term}, {"real", l.real_term}, {"r1", l.r1_term},
                          {"mean_abs_logit", l.mean_abs_logit}};
  };
  return nlohmann::json{{"step", step},
                        {"images_seen", images_seen},
                        {"d_vis", d(d_vis)},
                        {"d_nir", d(d_nir)},
                        {"g", {{"adv_vis", g.adversarial_vis}, {"adv_nir", g.adversarial_nir}, {"pl", g.pl_term}}},
                        {"pl_mean", pl_mean}};
}

GanTrainer::GanTrainer(const SynthesisConfig& synthesis, const TrainConfig& train, std::uint64_t seed)
    : synthesis_(synthesis), train_(train), rng_(at::make_generator<at::CPUGeneratorImpl>(seed)) {
  synthesis_.validate();
  train_.validate();
  self_test_second_order_gradients();
  torch::manual_seed(seed);
  g_ = Generator(synthesis_);
  g_ema_ = Generator(synthesis_);
  copy_module_state(*g_ema_, *g_);
  set_requires_grad(*g_ema_, false);
  d_vis_ = Discriminator(synthesis_, Domain::kVis);
  d_nir_ = Discriminator(synthesis_, Domain::kNir);

  gammas_ = regularization_gammas(synthesis_.output_resolution, train_.batch_size);
  if (train_.gamma1) gammas_.gamma1 = *train_.gamma1;
  if (train_.gamma2) gammas_.gamma2 = *train_.gamma2;
  pl_.decay = train_.pl_decay;

  auto opts = [&] {
    return torch::optim::AdamOptions(train_.learning_rate).betas({train_.beta1, train_.beta2}).eps(train_.eps);
  };
  // The mapping network shares the generator optimizer and its hyperparameters.
  opt_g_ = std::make_unique<torch::optim::Adam>(g_->parameters(), opts());
  opt_d_vis_ = std::make_unique<torch::optim::Adam>(d_vis_->parameters(), opts());
  opt_d_nir_ = std::make_unique<torch::optim::Adam>(d_nir_->parameters(), opts());
}

// Training noise is drawn from the trainer's own generator so runs replay exactly.
NoiseMode GanTrainer::training_noise_mode() const {
  return synthesis_.noise_mode == NoiseMode::kZero ? NoiseMode::kZero : NoiseMode::kFixed;
}

std::uint64_t GanTrainer::draw_noise_seed() {
  return static_cast<std::uint64_t>(torch::randint(1LL << 62, {1}, rng_).item<std::int64_t>());
}

torch::Tensor GanTrainer::draw_latents() {
  return torch::randn({train_.batch_size, synthesis_.latent_dim}, rng_, torch::kFloat32);
}

void GanTrainer::d_step(const BimodalPair& real, StepRecord& rec) {
  set_requires_grad(*g_, false);
  set_requires_grad(*d_vis_, true);
  set_requires_grad(*d_nir_, true);

  BimodalPair fake;
  {
    torch::NoGradGuard guard;
    const auto noise_seed = draw_noise_seed();
    fake = g_->synthesize(g_->map_latent(draw_latents()), training_noise_mode(), noise_seed).pair;
  }
  const double r1_weight = LazySchedule{train_.r1_interval}.weight(state_.step);
  auto critic_vis = [&](const torch::Tensor& x) { return d_vis_->forward(x); };
  auto critic_nir = [&](const torch::Tensor& x) { return d_nir_->forward(x); };
  rec.d_vis = discriminator_loss(critic_vis, fake.vis, real.vis, gammas_.gamma1, r1_weight);
  rec.d_nir = discriminator_loss(critic_nir, fake.nir, real.nir, gammas_.gamma1, r1_weight);

  opt_d_vis_->zero_grad(true);
  opt_d_nir_->zero_grad(true);
  (rec.d_vis.total + rec.d_nir.total).backward();
  opt_d_vis_->step();
  opt_d_nir_->step();
}

void GanTrainer::g_step(StepRecord& rec) {
  set_requires_grad(*g_, true);
  set_requires_grad(*d_vis_, false);
  set_requires_grad(*d_nir_, false);

  const double pl_weight = LazySchedule{train_.pl_interval}.weight(state_.step);
  const auto noise_mode = training_noise_mode();
  const auto noise_seed = draw_noise_seed();
  auto ws = g_->map_latent(draw_latents());
  auto pair_fn = [&](const torch::Tensor& styles) { return g_->synthesize(styles, noise_mode, noise_seed).pair; };
  auto critic_vis = [&](const torch::Tensor& x) { return d_vis_->forward(x); };
  auto critic_nir = [&](const torch::Tensor& x) { return d_nir_->forward(x); };
  std::optional<PathLengthProbes> probes;
  if (pl_weight > 0) {
    const auto r = synthesis_.output_resolution;
    const double norm = std::sqrt(static_cast<double>(r * r));
    probes = PathLengthProbes{torch::randn({train_.batch_size, 3, r, r}, rng_, torch::kFloat32) / norm,
                              torch::randn({train_.batch_size, 1, r, r}, rng_, torch::kFloat32) / norm};
  }
  rec.g = generator_loss(ws, pair_fn, critic_vis, critic_nir, pl_, gammas_.gamma2, pl_weight, probes);

  opt_g_->zero_grad(true);
  rec.g.total.backward();
  opt_g_->step();
  set_requires_grad(*d_vis_, true);
  set_requires_grad(*d_nir_, true);
}

StepRecord GanTrainer::step(const BimodalDataset& data) {
  if (data.resolution() != synthesis_.output_resolution)
    throw InputError("dataset resolution " + std::to_string(data.resolution()) +
                     " does not match the generator output resolution " +
                     std::to_string(synthesis_.output_resolution));
  StepRecord rec;
  auto real = sample_real_batch(data, train_.batch_size, train_.flip_prob, rng_);
  d_step(real, rec);
  g_step(rec);

  double half_life = train_.ema_kimg * 1000.0;
  if (train_.ema_rampup > 0)
    half_life = std::min(half_life, static_cast<double>(state_.images_seen + train_.batch_size) * train_.ema_rampup);
  state_.ema_decay = ema_decay_for(half_life, train_.batch_size);
  update_ema(*g_ema_, *g_, state_.ema_decay);

  ++state_.step;
  state_.images_seen = state_.step * train_.batch_size;
  state_.pl_mean = pl_.mean;

  if (std::max(rec.d_vis.mean_abs_logit, rec.d_nir.mean_abs_logit) > train_.divergence_logit)
    ++logit_streak_;
  else
    logit_streak_ = 0;

  rec.step = state_.step;
  rec.images_seen = state_.images_seen;
  rec.pl_mean = state_.pl_mean;
  return rec;
}

TrainResult GanTrainer::train(const BimodalDataset& data, const fs::path& out_dir,
                              const std::function<bool(const StepRecord&)>& on_step) {
  data.validate();
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "progress.ndjson", std::ios::app);
  if (!log) throw IoError("cannot open progress log in " + out_dir.string());

  TrainResult result;
  const auto target_images = static_cast<std::int64_t>(std::llround(train_.total_kimg * 1000.0));
  const auto ckpt_images = std::max<std::int64_t>(1, std::llround(train_.checkpoint_kimg * 1000.0));
  std::int64_t next_ckpt = (state_.images_seen / ckpt_images + 1) * ckpt_images;
  const auto t0 = std::chrono::steady_clock::now();

  std::int64_t last_ckpt_images = -1;
  auto write_checkpoint = [&] {
    std::ostringstream name;
    name << "network-" << std::setw(8) << std::setfill('0') << state_.images_seen << ".pt";
    auto path = out_dir / name.str();
    save_checkpoint(path);
    result.checkpoints.push_back(path);
    result.last_good_checkpoint = path;
    last_ckpt_images = state_.images_seen;
  };

  while (state_.images_seen < target_images) {
    StepRecord rec;
    try {
      rec = step(data);
    } catch (const DivergenceError& e) {
      nlohmann::json snap{{"step", state_.step}, {"images_seen", state_.images_seen}, {"error", e.what()},
                          {"pl_mean", state_.pl_mean}};
      std::ofstream(out_dir / "divergence.json") << snap.dump(2) << '\n';
      result.status = TrainStatus::kDiverged;
      result.message = e.what();
      return result;
    }
    const bool log_now = train_.log_every > 0 && (rec.step % train_.log_every == 0 || rec.step == 1);
    if (log_now) {
      auto j = rec.to_json();
      j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << j.dump() << '\n' << std::flush;
    }
    if (logit_streak_ >= train_.divergence_window) {
      result.status = TrainStatus::kDiverged;
      result.message = "discriminator logits exceeded " + std::to_string(train_.divergence_logit) + " for " +
                       std::to_string(logit_streak_) + " consecutive steps";
      std::ofstream(out_dir / "divergence.json")
          << nlohmann::json{{"step", state_.step}, {"error", result.message}}.dump(2) << '\n';
      return result;
    }
    if (state_.images_seen >= next_ckpt) {
      write_checkpoint();
      next_ckpt += ckpt_images;
    }
    if (on_step && !on_step(rec)) {
      result.status = TrainStatus::kStopped;
      break;
    }
  }
  if (last_ckpt_images != state_.images_seen) write_checkpoint();
  return result;
}

void GanTrainer::save_checkpoint(const fs::path& path) const {
  torch::serialize::OutputArchive root;
  nlohmann::json cfg{{"synthesis", synthesis_}, {"train", train_}};
  root.write("config", c10::IValue(cfg.dump()));
  root.write("step", c10::IValue(state_.step));
  root.write("pl_mean", c10::IValue(state_.pl_mean));
  torch::serialize::OutputArchive g, g_ema, d_vis, d_nir, opt, opt_g, opt_dv, opt_dn;
  g_->save(g);
  g_ema_->save(g_ema);
  d_vis_->save(d_vis);
  d_nir_->save(d_nir);
  opt_g_->save(opt_g);
  opt_d_vis_->save(opt_dv);
  opt_d_nir_->save(opt_dn);
  opt.write("g", opt_g);
  opt.write("d_vis", opt_dv);
  opt.write("d_nir", opt_dn);
  opt.write("rng_state", rng_.get_state());
  opt.write("logit_streak", c10::IValue(static_cast<std::int64_t>(logit_streak_)));
  root.write("g", g);
  root.write("g_ema", g_ema);
  root.write("d_vis", d_vis);
  root.write("d_nir", d_nir);
  root.write("opt", opt);
  auto tmp = path;
  tmp += ".tmp";
  root.save_to(tmp.string());
  fs::rename(tmp, path);
}

namespace {

std::pair<SynthesisConfig, TrainConfig> read_configs(torch::serialize::InputArchive& root) {
  c10::IValue cfg_value;
  root.read("config", cfg_value);
  auto cfg = nlohmann::json::parse(cfg_value.toStringRef());
  return {cfg.at("synthesis").get<SynthesisConfig>(), cfg.at("train").get<TrainConfig>()};
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive root;
  root.load_from(path.string());
  return root;
}

}  // namespace

GanTrainer GanTrainer::load_checkpoint(const fs::path& path) {
  auto root = open_archive(path);
  auto [synthesis, train] = read_configs(root);
  GanTrainer t(synthesis, train, 0);
  c10::IValue v;
  root.read("step", v);
  t.state_.step = v.toInt();
  t.state_.images_seen = t.state_.step * train.batch_size;
  root.read("pl_mean", v);
  t.state_.pl_mean = v.toDouble();
  t.pl_.mean = t.state_.pl_mean;
  torch::serialize::InputArchive g, g_ema, d_vis, d_nir, opt, opt_g, opt_dv, opt_dn;
  root.read("g", g);
  root.read("g_ema", g_ema);
  root.read("d_vis", d_vis);
  root.read("d_nir", d_nir);
  root.read("opt", opt);
  t.g_->load(g);
  t.g_ema_->load(g_ema);
  t.d_vis_->load(d_vis);
  t.d_nir_->load(d_nir);
  set_requires_grad(*t.g_ema_, false);
  opt.read("g", opt_g);
  opt.read("d_vis", opt_dv);
  opt.read("d_nir", opt_dn);
  t.opt_g_->load(opt_g);
  t.opt_d_vis_->load(opt_dv);
  t.opt_d_nir_->load(opt_dn);
  torch::Tensor rng_state;
  opt.read("rng_state", rng_state);
  t.rng_.set_state(rng_state);
  opt.read("logit_streak", v);
  t.logit_streak_ = static_cast<int>(v.toInt());
  return t;
}

Generator load_ema_generator(const fs::path& checkpoint) {
  auto root = open_archive(checkpoint);
  auto [synthesis, train] = read_configs(root);
  Generator g(synthesis);
  torch::serialize::InputArchive g_ema;
  root.read("g_ema", g_ema);
  g->load(g_ema);
  g->eval();
  set_requires_grad(*g, false);
  return g;
}

}  // namespace biocular
