#include "biocular/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "biocular/dataset.hpp"
#include "biocular/errors.hpp"

namespace biocular {

SegMetrics segmentation_metrics(const SegmentationMask& pred, const SegmentationMask& gt, int num_classes,
                                const MetricOptions& options) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw InputError("segmentation_metrics: shape mismatch " + std::to_string(pred.width) + "x" +
                     std::to_string(pred.height) + " vs " + std::to_string(gt.width) + "x" +
                     std::to_string(gt.height));
  if (num_classes < 1) throw InputError("segmentation_metrics: num_classes must be >= 1");
  SegMetrics m;
  m.per_class.resize(num_classes);
  std::int64_t wrong = 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int p = pred.labels[i], g = gt.labels[i];
    if (p >= num_classes || g >= num_classes)
      throw InputError("segmentation_metrics: class id " + std::to_string(std::max(p, g)) + " >= " +
                       std::to_string(num_classes));
    ++m.per_class[p].pred;
    ++m.per_class[g].gt;
    if (p == g) ++m.per_class[p].intersection;
    else ++wrong;
  }
  m.pixel_error = gt.labels.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(gt.labels.size());
  double iou_sum = 0, f1_sum = 0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    auto& s = m.per_class[c];
    s.id = c;
    s.present = s.pred + s.gt > 0;
    if (!s.present) continue;
    const auto uni = s.pred + s.gt - s.intersection;
    s.iou = static_cast<double>(s.intersection) / static_cast<double>(uni);
    s.f1 = 2.0 * static_cast<double>(s.intersection) / static_cast<double>(s.pred + s.gt);
    if (c == 0 && !options.include_background) continue;
    iou_sum += s.iou;
    f1_sum += s.f1;
    ++counted;
  }
  m.iou = counted ? iou_sum / counted : 1.0;
  m.f1 = counted ? f1_sum / counted : 1.0;
  return m;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

void MetricsTable::add(const std::string& id, const SegMetrics& m) { rows_.push_back({id, m}); }

namespace {

template <typename F>
MeanStd column(const auto& rows, F f) {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& r : rows) v.push_back(f(r.metrics));
  return mean_std(v);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

MeanStd MetricsTable::iou() const { return column(rows_, [](const SegMetrics& m) { return m.iou; }); }
MeanStd MetricsTable::f1() const { return column(rows_, [](const SegMetrics& m) { return m.f1; }); }
MeanStd MetricsTable::pixel_error() const {
  return column(rows_, [](const SegMetrics& m) { return m.pixel_error; });
}

std::string MetricsTable::to_csv() const {
  std::ostringstream os;
  os << "id,iou,f1,pixel_error\n";
  for (const auto& r : rows_)
    os << r.id << ',' << fmt(r.metrics.iou) << ',' << fmt(r.metrics.f1) << ',' << fmt(r.metrics.pixel_error) << '\n';
  const auto i = iou(), f = f1(), p = pixel_error();
  os << "mean," << fmt(i.mean) << ',' << fmt(f.mean) << ',' << fmt(p.mean) << '\n';
  os << "std," << fmt(i.std) << ',' << fmt(f.std) << ',' << fmt(p.std) << '\n';
  return os.str();
}

void MetricsTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv();
}

std::string MetricsTable::summary() const {
  char buf[160];
  const auto i = iou(), f = f1(), p = pixel_error();
  std::snprintf(buf, sizeof buf, "IoU %.3f ± %.3f, F1 %.3f ± %.3f, pixel error %.3f ± %.3f (n=%zu)", i.mean, i.std,
                f.mean, f.std, p.mean, p.std, rows_.size());
  return buf;
}

namespace {

double relative_chroma(const Image8& img, int x, int y) {
  const double r = img.at(x, y, 0), g = img.at(x, y, 1), b = img.at(x, y, 2);
  const double lum = 0.299 * r + 0.587 * g + 0.114 * b;
  const double cb = -0.168736 * r - 0.331264 * g + 0.5 * b;
  const double cr = 0.5 * r - 0.418688 * g - 0.081312 * b;
  return std::hypot(cb, cr) / (lum + 16.0);
}

}  // namespace

double alignment_score(const Image8& vis, const Image8& nir) {
  const auto comp = composite_alignment_image(vis, nir);
  const auto ref = composite_alignment_image(vis, luma(vis));
  if (vis.pixel_count() == 0) return 0.0;
  double acc = 0;
  for (int y = 0; y < vis.height; ++y)
    for (int x = 0; x < vis.width; ++x) acc += std::abs(relative_chroma(comp, x, y) - relative_chroma(ref, x, y));
  return acc / static_cast<double>(vis.pixel_count());
}

namespace {

std::vector<double> to_unit(const Image8& img) {
  std::vector<double> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.data[i] / 255.0;
  return v;
}

std::vector<double> halve(const std::vector<double>& v, int& w, int& h, int c) {
  const int nw = std::max(1, w / 2), nh = std::max(1, h / 2);
  std::vector<double> out(static_cast<std::size_t>(nw) * nh * c);
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x)
      for (int k = 0; k < c; ++k) {
        double acc = 0;
        int n = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sx = std::min(2 * x + dx, w - 1), sy = std::min(2 * y + dy, h - 1);
            acc += v[(static_cast<std::size_t>(sy) * w + sx) * c + k];
            ++n;
          }
        out[(static_cast<std::size_t>(y) * nw + x) * c + k] = acc / n;
      }
  w = nw;
  h = nh;
  return out;
}

}  // namespace

double PyramidL2Distance::distance(const Image8& a, const Image8& b) const {
  if (!a.same_shape(b)) throw InputError("perceptual distance: shape mismatch");
  if (a.data.empty()) return 0.0;
  auto va = to_unit(a), vb = to_unit(b);
  int w = a.width, h = a.height;
  double total = 0;
  for (int level = 0; level < levels_; ++level) {
    double acc = 0;
    for (std::size_t i = 0; i < va.size(); ++i) acc += (va[i] - vb[i]) * (va[i] - vb[i]);
    total += std::sqrt(acc / static_cast<double>(va.size()));
    if (level + 1 < levels_) {
      int wb = w, hb = h;
      va = halve(va, w, h, a.channels);
      vb = halve(vb, wb, hb, a.channels);
    }
  }
  return total / levels_;
}

std::unique_ptr<PerceptualDistance> make_perceptual_distance(const std::string& name) {
  if (name == "pyramid-l2") return std::make_unique<PyramidL2Distance>();
  throw ConfigError("unknown perceptual distance backend: " + name);
}

}  // namespace biocular
