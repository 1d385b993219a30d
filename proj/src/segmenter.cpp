#include "biocular/segmenter.hpp"

#include <map>

#include "biocular/errors.hpp"

namespace biocular {

namespace fs = std::filesystem;
namespace nn = torch::nn;

void SegTrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("segmenter.learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("segmenter.batch_size must be >= 1");
  if (lr_decay_factor <= 1) throw ConfigError("segmenter.lr_decay_factor must exceed 1");
  if (patience_decay < 1) throw ConfigError("segmenter.patience_decay must be >= 1");
  if (patience_stop < patience_decay) throw ConfigError("segmenter.patience_stop must be >= patience_decay");
  if (max_epochs < 1) throw ConfigError("segmenter.max_epochs must be >= 1");
  if (base_width < 1) throw ConfigError("segmenter.base_width must be >= 1");
}

void to_json(nlohmann::json& j, const SegTrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
       {"lr_decay_factor", c.lr_decay_factor}, {"patience_decay", c.patience_decay},
       {"patience_stop", c.patience_stop}, {"max_epochs", c.max_epochs},
       {"base_width", c.base_width}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SegTrainConfig& c) {
  c = SegTrainConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.patience_decay = j.value("patience_decay", c.patience_decay);
  c.patience_stop = j.value("patience_stop", c.patience_stop);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.base_width = j.value("base_width", c.base_width);
  c.seed = j.value("seed", c.seed);
}

std::string to_string(PlateauSchedule::Action a) {
  switch (a) {
    case PlateauSchedule::Action::kImproved: return "improved";
    case PlateauSchedule::Action::kStagnant: return "stagnant";
    case PlateauSchedule::Action::kDecayed: return "decayed";
    case PlateauSchedule::Action::kStop: return "stop";
  }
  return "?";
}

PlateauSchedule::PlateauSchedule(double learning_rate, double decay_factor, int patience_decay, int patience_stop)
    : lr_(learning_rate), factor_(decay_factor), patience_decay_(patience_decay), patience_stop_(patience_stop) {}

PlateauSchedule::Action PlateauSchedule::observe(double validation_loss) {
  if (validation_loss < best_) {
    best_ = validation_loss;
    stagnant_ = 0;
    return Action::kImproved;
  }
  ++stagnant_;
  if (stagnant_ >= patience_stop_) return Action::kStop;
  if (stagnant_ == patience_decay_) {
    lr_ /= factor_;
    return Action::kDecayed;
  }
  return Action::kStagnant;
}

namespace {

nn::Sequential conv_block(int in, int out) {
  auto conv = [](int i, int o) { return nn::Conv2d(nn::Conv2dOptions(i, o, 3).padding(1).bias(false)); };
  return nn::Sequential(conv(in, out), nn::BatchNorm2d(out), nn::ReLU(), conv(out, out), nn::BatchNorm2d(out),
                        nn::ReLU());
}

}  // namespace

UNetImpl::UNetImpl(int in_channels, int num_classes, int base_width) {
  const int w[4] = {base_width, base_width * 2, base_width * 4, base_width * 8};
  for (int i = 0; i < 4; ++i)
    down_.push_back(register_module("down" + std::to_string(i), conv_block(i ? w[i - 1] : in_channels, w[i])));
  for (int i = 3; i > 0; --i) {
    up_.push_back(register_module("up" + std::to_string(i),
                                  nn::ConvTranspose2d(nn::ConvTranspose2dOptions(w[i], w[i - 1], 2).stride(2))));
    dec_.push_back(register_module("dec" + std::to_string(i), conv_block(w[i - 1] * 2, w[i - 1])));
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(w[0], num_classes, 1)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  if (x.size(-1) % 8 != 0 || x.size(-2) % 8 != 0) throw InputError("segmenter input side must be divisible by 8");
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (std::size_t i = 0; i < down_.size(); ++i) {
    if (i) h = torch::max_pool2d(h, 2);
    h = down_[i]->forward(h);
    skips.push_back(h);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    h = up_[i]->forward(h);
    h = dec_[i]->forward(torch::cat({h, skips[skips.size() - 2 - i]}, 1));
  }
  return head_->forward(h);
}

namespace {

torch::Tensor images_tensor(const std::vector<Image8>& images) {
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const auto& im : images) ts.push_back(image_to_tensor(im));
  return torch::stack(ts);
}

torch::Tensor masks_tensor(const std::vector<SegmentationMask>& masks) {
  std::vector<torch::Tensor> ts;
  ts.reserve(masks.size());
  for (const auto& m : masks) {
    if (m.size() == 0) throw InputError("segmenter: a record has no mask");
    ts.push_back(mask_to_tensor(m));
  }
  return torch::stack(ts);
}

const std::vector<Image8>& modality_images(const TripletData& d, Domain m) { return m == Domain::kVis ? d.vis : d.nir; }

using StateCopy = std::map<std::string, torch::Tensor>;

StateCopy snapshot(nn::Module& net) {
  StateCopy s;
  for (const auto& p : net.named_parameters()) s[p.key()] = p.value().detach().clone();
  for (const auto& b : net.named_buffers()) s[b.key()] = b.value().detach().clone();
  return s;
}

void restore(nn::Module& net, const StateCopy& s) {
  torch::NoGradGuard guard;
  for (auto& p : net.named_parameters()) p.value().copy_(s.at(p.key()));
  for (auto& b : net.named_buffers()) b.value().copy_(s.at(b.key()));
}

double mean_loss(UNet& net, const torch::Tensor& x, const torch::Tensor& y, int batch) {
  torch::NoGradGuard guard;
  net->eval();
  double total = 0;
  for (std::int64_t s = 0; s < x.size(0); s += batch) {
    const auto e = std::min<std::int64_t>(s + batch, x.size(0));
    total += torch::nn::functional::cross_entropy(net->forward(x.slice(0, s, e)), y.slice(0, s, e),
                                                  torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kSum))
                 .item<double>();
  }
  return total / static_cast<double>(y.numel());
}

}  // namespace

Segmenter train_segmenter(const TripletData& train, const TripletData& val, const ClassPalette& palette,
                          Domain modality, const SegTrainConfig& config, SegTrainReport* report,
                          const std::function<void(const SegEpochRecord&)>& on_epoch) {
  config.validate();
  if (train.vis.empty()) throw InputError("train_segmenter: empty training set");
  auto x = images_tensor(modality_images(train, modality));
  auto y = masks_tensor(train.masks);
  if (y.max().item<std::int64_t>() >= palette.size()) throw InputError("train_segmenter: mask class outside palette");
  const bool has_val = !val.vis.empty();
  torch::Tensor vx, vy;
  if (has_val) {
    vx = images_tensor(modality_images(val, modality));
    vy = masks_tensor(val.masks);
    if (vx.sizes().slice(1) != x.sizes().slice(1)) throw InputError("train_segmenter: train/val resolution mismatch");
  }

  torch::manual_seed(config.seed);
  Segmenter seg;
  seg.net = UNet(image_channels(modality), palette.size(), config.base_width);
  seg.palette = palette;
  seg.modality = modality;
  seg.resolution = static_cast<int>(x.size(-1));
  seg.config = config;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed + 1);
  torch::optim::Adam opt(seg.net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  PlateauSchedule schedule(config.learning_rate, config.lr_decay_factor, config.patience_decay, config.patience_stop);

  SegTrainReport rep;
  StateCopy best = snapshot(*seg.net);
  const auto n = x.size(0);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    seg.net->train();
    auto perm = torch::randperm(n, gen, torch::kInt64);
    double total = 0;
    for (std::int64_t s = 0; s < n; s += config.batch_size) {
      auto idx = perm.slice(0, s, std::min<std::int64_t>(s + config.batch_size, n));
      auto yb = y.index_select(0, idx);
      auto loss = torch::nn::functional::cross_entropy(seg.net->forward(x.index_select(0, idx)), yb);
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item<double>() * static_cast<double>(idx.size(0));
    }
    SegEpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(n);
    rec.val_loss = has_val ? mean_loss(seg.net, vx, vy, config.batch_size) : rec.train_loss;
    rec.learning_rate = schedule.learning_rate();
    rec.action = schedule.observe(rec.val_loss);
    if (rec.action == PlateauSchedule::Action::kImproved) {
      best = snapshot(*seg.net);
      rep.best_epoch = epoch;
      rep.best_val_loss = rec.val_loss;
    }
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(schedule.learning_rate());
    rep.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.action == PlateauSchedule::Action::kStop) break;
  }
  restore(*seg.net, best);
  seg.net->eval();
  if (report) *report = std::move(rep);
  return seg;
}

Segmenter train_segmenter(const fs::path& train_root, const fs::path& val_root, Domain modality,
                          const SegTrainConfig& config, SegTrainReport* report,
                          const std::function<void(const SegEpochRecord&)>& on_epoch) {
  const auto tm = read_manifest(train_root);
  if (tm.records.empty()) throw InputError("train_segmenter: training manifest is empty");
  const auto vm = read_manifest(val_root);
  if (!(tm.palette == vm.palette)) throw InputError("train_segmenter: training and validation palettes differ");
  if (tm.resolution != vm.resolution) throw InputError("train_segmenter: training and validation resolutions differ");
  return train_segmenter(load_triplets(train_root, tm), load_triplets(val_root, vm, tm.resolution), tm.palette,
                         modality, config, report, on_epoch);
}

std::vector<SegmentationMask> Segmenter::predict(const std::vector<Image8>& images) {
  std::vector<SegmentationMask> out;
  if (images.empty()) return out;
  std::vector<Image8> sized;
  sized.reserve(images.size());
  for (const auto& im : images) {
    if (im.channels != image_channels(modality))
      throw InputError(std::string("segmenter expects ") + to_string(modality) + " images");
    sized.push_back(im.width == resolution && im.height == resolution ? im : center_crop_resize(im, resolution));
  }
  torch::NoGradGuard guard;
  net->eval();
  auto x = images_tensor(sized);
  for (std::int64_t s = 0; s < x.size(0); s += 32) {
    auto labels = net->forward(x.slice(0, s, std::min<std::int64_t>(s + 32, x.size(0)))).argmax(1);
    for (std::int64_t i = 0; i < labels.size(0); ++i) out.push_back(tensor_to_mask(labels[i]));
  }
  return out;
}

void Segmenter::save(const fs::path& path) const {
  torch::serialize::OutputArchive root, weights;
  net->save(weights);
  nlohmann::json meta{{"palette", palette}, {"modality", to_string(modality)}, {"resolution", resolution},
                      {"config", config}};
  root.write("meta", c10::IValue(meta.dump()));
  root.write("weights", weights);
  auto tmp = path;
  tmp += ".tmp";
  root.save_to(tmp.string());
  fs::rename(tmp, path);
}

Segmenter Segmenter::load(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("segmenter checkpoint not found: " + path.string());
  torch::serialize::InputArchive root, weights;
  root.load_from(path.string());
  c10::IValue v;
  root.read("meta", v);
  const auto meta = nlohmann::json::parse(v.toStringRef());
  Segmenter s;
  s.palette = meta.at("palette").get<ClassPalette>();
  s.modality = domain_from_string(meta.at("modality").get<std::string>());
  s.resolution = meta.at("resolution").get<int>();
  s.config = meta.at("config").get<SegTrainConfig>();
  s.net = UNet(image_channels(s.modality), s.palette.size(), s.config.base_width);
  root.read("weights", weights);
  s.net->load(weights);
  s.net->eval();
  return s;
}

MetricsTable evaluate_segmenter(Segmenter& model, const TripletData& test, const ClassPalette& test_palette,
                                const MetricOptions& options) {
  if (test_palette.size() != model.palette.size())
    throw InputError("evaluate_segmenter: model has " + std::to_string(model.palette.size()) +
                     " classes, test set has " + std::to_string(test_palette.size()));
  const auto preds = model.predict(modality_images(test, model.modality));
  MetricsTable table;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto gt = test.masks[i];
    if (gt.size() == 0) throw InputError("evaluate_segmenter: record " + test.ids[i] + " has no mask");
    if (gt.width != model.resolution || gt.height != model.resolution) gt = center_crop_resize(gt, model.resolution);
    table.add(test.ids[i], segmentation_metrics(preds[i], gt, test_palette.size(), options));
  }
  return table;
}

}  // namespace biocular
