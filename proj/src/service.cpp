#include "biocular/service.hpp"

#include <cstdio>
#include <fstream>

#include <httplib.h>

#include "biocular/errors.hpp"
#include "biocular/hash.hpp"

namespace biocular {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void error(httplib::Response& res, int status, const std::string& msg) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
}

std::string hex_color(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

}  // namespace

AnnotationService::AnnotationService(fs::path dataset_root)
    : root_(std::move(dataset_root)), manifest_(read_manifest(root_)), server_(std::make_unique<httplib::Server>()) {
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    index_[manifest_.records[i].id] = i;
    id_locks_[manifest_.records[i].id] = std::make_unique<std::mutex>();
  }
  fs::create_directories(root_ / "masks");
  install_routes();
}

AnnotationService::~AnnotationService() { stop(); }

std::mutex& AnnotationService::lock_for(const std::string& id) { return *id_locks_.at(id); }

std::string AnnotationService::version_of(const std::string& id) const {
  std::string rel;
  {
    std::lock_guard lk(manifest_mutex_);
    rel = manifest_.records.at(index_.at(id)).mask_path;
  }
  if (rel.empty() || !fs::exists(root_ / rel)) return "none";
  return sha256_file(root_ / rel);
}

void AnnotationService::install_routes() {
  auto& s = *server_;

  s.Get("/api/samples", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json out = nlohmann::json::array();
    std::vector<std::string> ids;
    {
      std::lock_guard lk(manifest_mutex_);
      for (const auto& r : manifest_.records) ids.push_back(r.id);
    }
    for (const auto& id : ids) {
      const auto v = version_of(id);
      out.push_back({{"id", id}, {"annotated", v != "none"}, {"version", v}});
    }
    res.set_content(out.dump(), "application/json");
  });

  s.Get("/api/palette", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : manifest_.palette.classes)
      out.push_back({{"class_id", c.id}, {"name", c.name}, {"display_color", hex_color(c.color)}});
    res.set_content(out.dump(), "application/json");
  });

  s.Get(R"(/api/samples/([^/]+)/(vis|nir|mask)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const std::string kind = req.matches[2];
    if (!index_.count(id)) return error(res, 404, "unknown sample id " + id);
    std::string rel;
    {
      std::lock_guard lk(manifest_mutex_);
      const auto& r = manifest_.records[index_.at(id)];
      rel = kind == "vis" ? r.vis_path : kind == "nir" ? r.nir_path : r.mask_path;
    }
    if (rel.empty() || !fs::exists(root_ / rel)) return error(res, 404, "sample " + id + " has no " + kind + " image");
    std::lock_guard lk(lock_for(id));
    res.set_content(read_file(root_ / rel), "image/png");
    if (kind == "mask") res.set_header("ETag", version_of(id));
  });

  s.Put(R"(/api/samples/([^/]+)/mask)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!index_.count(id)) return error(res, 404, "unknown sample id " + id);
    if (!req.has_header("If-Match")) return error(res, 400, "If-Match header with the current version is required");
    Image8 img;
    try {
      img = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
    } catch (const std::exception& e) {
      return error(res, 400, std::string("body is not a PNG: ") + e.what());
    }
    if (img.channels != 1) return error(res, 400, "mask must be a single-channel PNG of class ids");
    if (img.width != manifest_.resolution || img.height != manifest_.resolution)
      return error(res, 400, "mask is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 ", expected " + std::to_string(manifest_.resolution) + "x" +
                                 std::to_string(manifest_.resolution));
    for (auto v : img.data)
      if (v >= manifest_.palette.size())
        return error(res, 400, "class id " + std::to_string(v) + " is outside the " +
                                   std::to_string(manifest_.palette.size()) + "-class palette");

    std::lock_guard lk(lock_for(id));
    const auto current = version_of(id);
    const auto expected = req.get_header_value("If-Match");
    if (expected != current) {
      res.set_header("ETag", current);
      return error(res, 409, "version conflict: stored version is " + current);
    }
    const auto bytes = encode_png(img);
    const auto rel = mask_relpath(id);
    const auto tmp = root_ / (rel + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!out) return error(res, 500, "cannot write mask");
    }
    fs::rename(tmp, root_ / rel);
    {
      std::lock_guard mk(manifest_mutex_);
      manifest_.records[index_.at(id)].mask_path = rel;
      manifest_.content_hash = compute_content_hash(root_, manifest_.records);
      write_manifest(root_, manifest_);
    }
    const auto hash = sha256_hex(std::span<const std::uint8_t>(bytes));
    res.set_header("ETag", hash);
    res.set_content(nlohmann::json{{"id", id}, {"hash", hash}}.dump(), "application/json");
  });
}

bool AnnotationService::listen(const std::string& host, int port) { return server_->listen(host, port); }
int AnnotationService::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool AnnotationService::listen_after_bind() { return server_->listen_after_bind(); }
void AnnotationService::stop() {
  if (server_) server_->stop();
}
bool AnnotationService::running() const { return server_->is_running(); }

}  // namespace biocular
