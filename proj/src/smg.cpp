#include "biocular/smg.hpp"

#include <deque>
#include <future>
#include <numeric>

#include "biocular/errors.hpp"
#include "biocular/hash.hpp"
#include "biocular/layers.hpp"

namespace biocular {

namespace fs = std::filesystem;

torch::Tensor extract_hypercolumns(const FeatureStack& stack, int out_resolution) {
  if (stack.taps.empty()) throw InputError("extract_hypercolumns: empty feature stack");
  if (out_resolution <= 0) throw ConfigError("extract_hypercolumns: resolution must be positive");
  std::vector<torch::Tensor> planes;
  planes.reserve(stack.taps.size());
  const auto n = stack.taps.front().tensor.size(0);
  for (const auto& tap : stack.taps) {
    if (tap.tensor.dim() != 4 || tap.tensor.size(0) != n)
      throw InputError("extract_hypercolumns: tap " + tap.id + " does not belong to the same synthesis call");
    planes.push_back(upsample_bilinear(tap.tensor.to(torch::kFloat32), out_resolution));
  }
  return torch::cat(planes, 1);
}

void SmgConfig::validate() const {
  if (members < 1) throw ConfigError("smg.members must be >= 1");
  if (hidden1 < 1 || hidden2 < 1) throw ConfigError("smg hidden widths must be >= 1");
  if (learning_rate <= 0) throw ConfigError("smg.learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("smg.batch_size must be >= 1");
  if (patience < 1) throw ConfigError("smg.patience must be >= 1");
  if (min_epochs < 0 || max_epochs < 1) throw ConfigError("smg epoch limits are invalid");
  if (tolerance < 0) throw ConfigError("smg.tolerance must be non-negative");
  if (threads < 1) throw ConfigError("smg.threads must be >= 1");
}

void to_json(nlohmann::json& j, const SmgConfig& c) {
  j = {{"members", c.members},       {"hidden1", c.hidden1},       {"hidden2", c.hidden2},
       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"patience", c.patience},
       {"min_epochs", c.min_epochs}, {"max_epochs", c.max_epochs}, {"tolerance", c.tolerance},
       {"seed", c.seed},             {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, SmgConfig& c) {
  c = SmgConfig{};
  c.members = j.value("members", c.members);
  c.hidden1 = j.value("hidden1", c.hidden1);
  c.hidden2 = j.value("hidden2", c.hidden2);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patience = j.value("patience", c.patience);
  c.min_epochs = j.value("min_epochs", c.min_epochs);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
}

PixelMlpImpl::PixelMlpImpl(int in_features, int hidden1, int hidden2, int num_classes) {
  fc1 = register_module("fc1", torch::nn::Linear(in_features, hidden1));
  fc2 = register_module("fc2", torch::nn::Linear(hidden1, hidden2));
  fc3 = register_module("fc3", torch::nn::Linear(hidden2, num_classes));
}

torch::Tensor PixelMlpImpl::forward(const torch::Tensor& x) { return fc3(lrelu(fc2(lrelu(fc1(x))))); }

void PixelMlpImpl::reset(std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto* fc : {&fc1, &fc2, &fc3}) {
    const double bound = 1.0 / std::sqrt(static_cast<double>((*fc)->weight.size(1)));
    (*fc)->weight.uniform_(-bound, bound, gen);
    (*fc)->bias.uniform_(-bound, bound, gen);
  }
}

torch::Tensor majority_vote(const torch::Tensor& votes, int num_classes) {
  if (votes.dim() != 2) throw InputError("majority_vote: votes must be [members, pixels]");
  if (num_classes < 1) throw InputError("majority_vote: num_classes must be >= 1");
  auto v = votes.to(torch::kInt64);
  if (v.numel() > 0 && (v.min().item<std::int64_t>() < 0 || v.max().item<std::int64_t>() >= num_classes))
    throw InputError("majority_vote: vote outside [0, num_classes)");
  auto counts = torch::zeros({num_classes, v.size(1)}, torch::kInt64);
  counts.scatter_add_(0, v, torch::ones_like(v));
  // Lower class ids get a larger tie-break bonus; the bonus never outweighs one vote.
  auto bonus = torch::arange(num_classes - 1, -1, -1, torch::kInt64).unsqueeze(1);
  return (counts * num_classes + bonus).argmax(0);
}

SmgModel::SmgModel(std::vector<PixelMlp> members, FeatureStats stats, ClassPalette palette,
                   std::string tap_fingerprint)
    : members_(std::move(members)),
      stats_(std::move(stats)),
      palette_(std::move(palette)),
      tap_fingerprint_(std::move(tap_fingerprint)) {}

torch::Tensor SmgModel::standardize(const torch::Tensor& x) const {
  if (x.dim() != 2 || x.size(1) != feature_dim())
    throw InputError("smg: expected pixel features [P, " + std::to_string(feature_dim()) + "], got " +
                     c10::str(x.sizes()));
  return (x.to(torch::kFloat32) - stats_.mean) / stats_.std;
}

torch::Tensor SmgModel::member_votes(const torch::Tensor& pixel_features) const {
  if (members_.empty()) throw ConfigError("smg: model has no members");
  torch::NoGradGuard guard;
  auto x = standardize(pixel_features);
  std::vector<torch::Tensor> votes;
  votes.reserve(members_.size());
  for (auto m : members_) votes.push_back(m->forward(x).argmax(1));
  return torch::stack(votes);
}

torch::Tensor SmgModel::predict_labels(const torch::Tensor& pixel_features) const {
  return majority_vote(member_votes(pixel_features), num_classes());
}

std::vector<SegmentationMask> SmgModel::predict_masks(const FeatureStack& stack, int resolution) const {
  if (stack.fingerprint() != tap_fingerprint_)
    throw ConfigError("smg: tap layout mismatch, model expects '" + tap_fingerprint_ + "' but generator gives '" +
                      stack.fingerprint() + "'");
  auto hc = extract_hypercolumns(stack, resolution);
  std::vector<SegmentationMask> masks;
  masks.reserve(hc.size(0));
  for (std::int64_t i = 0; i < hc.size(0); ++i) {
    auto pixels = hc[i].flatten(1).t();
    masks.push_back(tensor_to_mask(predict_labels(pixels).view({resolution, resolution})));
  }
  return masks;
}

std::string SmgModel::fingerprint() const {
  Sha256 h;
  auto feed = [&h](const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    h.update(c.data_ptr(), static_cast<std::size_t>(c.numel()) * sizeof(float));
  };
  for (const auto& m : members_)
    for (const auto& p : m->parameters()) feed(p);
  feed(stats_.mean);
  feed(stats_.std);
  h.update(nlohmann::json(palette_).dump());
  h.update(tap_fingerprint_);
  return h.hex_digest();
}

void SmgModel::save(const fs::path& path) const {
  if (members_.empty()) throw ConfigError("smg: refusing to save an empty model");
  torch::serialize::OutputArchive root, members, stats;
  const auto& first = members_.front();
  members.write("shape", c10::IValue(std::vector<std::int64_t>{
                             first->fc1->weight.size(1), first->fc1->weight.size(0),
                             first->fc2->weight.size(0), first->fc3->weight.size(0)}));
  members.write("count", c10::IValue(static_cast<std::int64_t>(members_.size())));
  for (std::size_t i = 0; i < members_.size(); ++i) {
    torch::serialize::OutputArchive a;
    members_[i]->save(a);
    members.write(std::to_string(i), a);
  }
  stats.write("mean", stats_.mean);
  stats.write("std", stats_.std);
  root.write("members", members);
  root.write("feature_stats", stats);
  root.write("class_palette", c10::IValue(nlohmann::json(palette_).dump()));
  root.write("tap_fingerprint", c10::IValue(tap_fingerprint_));
  root.write("C", c10::IValue(static_cast<std::int64_t>(num_classes())));
  auto tmp = path;
  tmp += ".tmp";
  root.save_to(tmp.string());
  fs::rename(tmp, path);
}

SmgModel SmgModel::load(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("smg model not found: " + path.string());
  torch::serialize::InputArchive root, members, stats;
  root.load_from(path.string());
  root.read("members", members);
  root.read("feature_stats", stats);
  c10::IValue v;
  members.read("shape", v);
  const auto shape = v.toIntVector();
  if (shape.size() != 4) throw IoError("smg model: bad member shape record");
  members.read("count", v);
  const auto count = v.toInt();
  std::vector<PixelMlp> mlps;
  for (std::int64_t i = 0; i < count; ++i) {
    PixelMlp m(static_cast<int>(shape[0]), static_cast<int>(shape[1]), static_cast<int>(shape[2]),
               static_cast<int>(shape[3]));
    torch::serialize::InputArchive a;
    members.read(std::to_string(i), a);
    m->load(a);
    m->eval();
    mlps.push_back(m);
  }
  FeatureStats fs_;
  stats.read("mean", fs_.mean);
  stats.read("std", fs_.std);
  root.read("class_palette", v);
  auto palette = nlohmann::json::parse(v.toStringRef()).get<ClassPalette>();
  root.read("tap_fingerprint", v);
  std::string tap = v.toStringRef();
  root.read("C", v);
  if (v.toInt() != palette.size() || v.toInt() != shape[3])
    throw IoError("smg model: class count disagrees with palette or member shape");
  return SmgModel(std::move(mlps), std::move(fs_), std::move(palette), std::move(tap));
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SmgMemberReport train_member(PixelMlp& mlp, const torch::Tensor& x, const torch::Tensor& y,
                             const SmgConfig& cfg, std::uint64_t order_seed) {
  SmgMemberReport rep;
  torch::optim::Adam opt(mlp->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(order_seed);
  const auto n = x.size(0);
  std::deque<double> window;
  double window_sum = 0;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    auto perm = torch::randperm(n, gen, torch::kInt64);
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      auto idx = perm.slice(0, start, std::min<std::int64_t>(start + cfg.batch_size, n));
      auto loss = torch::nn::functional::cross_entropy(mlp->forward(x.index_select(0, idx)), y.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
      ++rep.batches;
      const double l = loss.item<double>();
      window.push_back(l);
      window_sum += l;
      if (static_cast<int>(window.size()) > cfg.patience) {
        window_sum -= window.front();
        window.pop_front();
      }
      if (static_cast<int>(window.size()) < cfg.patience) continue;
      const double running = window_sum / static_cast<double>(window.size());
      rep.final_running_loss = running;
      if (running < best - cfg.tolerance) {
        best = running;
        stale = 0;
      } else if (++stale >= cfg.patience && epoch >= cfg.min_epochs) {
        stop = true;
        rep.early_stopped = true;
        break;
      }
    }
    rep.epochs = epoch + 1;
  }
  if (!window.empty()) rep.final_running_loss = window_sum / static_cast<double>(window.size());
  torch::NoGradGuard guard;
  mlp->eval();
  rep.train_accuracy = mlp->forward(x).argmax(1).eq(y).to(torch::kFloat64).mean().item<double>();
  return rep;
}

}  // namespace

SmgModel train_smg(const std::vector<AnnotatedSample>& samples, const ClassPalette& palette,
                   const SmgConfig& config, SmgTrainReport* report) {
  config.validate();
  if (samples.empty()) throw InputError("train_smg: no annotated samples");
  const int C = palette.size();
  const auto& first = samples.front();
  if (first.features.dim() != 3) throw InputError("train_smg: features must be [d, R, R]");
  const auto d = first.features.size(0);
  std::vector<torch::Tensor> xs, ys;
  for (const auto& s : samples) {
    if (s.num_classes != C)
      throw InputError("train_smg: sample " + std::to_string(s.seed) + " declares " + std::to_string(s.num_classes) +
                       " classes, palette has " + std::to_string(C));
    if (s.fingerprint != first.fingerprint)
      throw InputError("train_smg: samples come from different tap layouts");
    if (s.features.dim() != 3 || s.features.size(0) != d || s.features.size(1) != s.mask.height ||
        s.features.size(2) != s.mask.width)
      throw InputError("train_smg: features and mask of sample " + std::to_string(s.seed) + " disagree in shape");
    auto y = mask_to_tensor(s.mask).flatten();
    if (y.numel() > 0 && y.max().item<std::int64_t>() >= C)
      throw InputError("train_smg: mask of sample " + std::to_string(s.seed) + " has a class outside the palette");
    xs.push_back(s.features.to(torch::kFloat32).flatten(1).t());
    ys.push_back(y);
  }
  auto x = torch::cat(xs);
  auto y = torch::cat(ys);

  SmgTrainReport rep;
  auto counts = torch::bincount(y, {}, C);
  for (int c = 0; c < C; ++c)
    if (counts[c].item<std::int64_t>() == 0) {
      rep.empty_classes.push_back(c);
      rep.warnings.push_back("class " + std::to_string(c) + " (" + palette.classes[c].name +
                             ") has no annotated pixels and can never be predicted");
    }

  FeatureStats stats;
  stats.mean = x.mean(0);
  stats.std = x.std(0, /*unbiased=*/false);
  stats.std = torch::where(stats.std > 1e-8, stats.std, torch::ones_like(stats.std));
  auto xn = (x - stats.mean) / stats.std;

  std::vector<PixelMlp> mlps;
  for (int m = 0; m < config.members; ++m) {
    PixelMlp mlp(static_cast<int>(d), config.hidden1, config.hidden2, C);
    mlp->reset(mix_seed(config.seed, 2 * static_cast<std::uint64_t>(m)));
    mlps.push_back(mlp);
  }
  rep.members.resize(config.members);
  auto run = [&](int m) {
    rep.members[m] = train_member(mlps[m], xn, y, config, mix_seed(config.seed, 2 * static_cast<std::uint64_t>(m) + 1));
  };
  if (config.threads <= 1) {
    for (int m = 0; m < config.members; ++m) run(m);
  } else {
    for (int start = 0; start < config.members; start += config.threads) {
      std::vector<std::future<void>> jobs;
      for (int m = start; m < std::min(config.members, start + config.threads); ++m)
        jobs.push_back(std::async(std::launch::async, run, m));
      for (auto& j : jobs) j.get();
    }
  }

  SmgModel model(std::move(mlps), std::move(stats), palette, first.fingerprint);
  rep.ensemble_accuracy = model.predict_labels(x).eq(y).to(torch::kFloat64).mean().item<double>();
  if (report) *report = std::move(rep);
  return model;
}

}  // namespace biocular
