#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "biocular/dataset.hpp"

namespace httplib {
class Server;
}

namespace biocular {

/// Local annotation backend. No authentication; bind to localhost.
///
///   GET /api/samples                 [{id, annotated, version}]
///   GET /api/samples/{id}/vis.png
///   GET /api/samples/{id}/nir.png
///   GET /api/samples/{id}/mask.png   404 until annotated
///   GET /api/palette                 [{class_id, name, display_color}]
///   PUT /api/samples/{id}/mask       body: gray PNG of class ids
///
/// A sample's version is the SHA-256 of its stored mask file, or "none".
/// PUT must carry `If-Match: <version>`; a stale version gives 409, a missing
/// header 400. Mask files and the manifest are replaced atomically.
class AnnotationService {
 public:
  explicit AnnotationService(std::filesystem::path dataset_root);
  ~AnnotationService();

  /// Binds and serves until stop(). Returns false if binding failed.
  bool listen(const std::string& host, int port);
  /// Binds to a free port and returns it (serve with listen_after_bind()).
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  bool running() const;

  std::string version_of(const std::string& id) const;

 private:
  void install_routes();
  std::mutex& lock_for(const std::string& id);

  std::filesystem::path root_;
  DatasetManifest manifest_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::unique_ptr<std::mutex>> id_locks_;
  mutable std::mutex manifest_mutex_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace biocular
