#pragma once

// HTTP backend: image ingestion, similarity search, outlier reports, 3D
// projections, and store statistics. Every response body is JSON; failures
// are {"error": {"code": ..., "message": ...}} with a matching status.
//
//   POST /v1/ingest               multipart: image (file), id?, metadata? (JSON object of strings)
//   POST /v1/search               multipart: image (file), k?, mode? (exact|ann), beam?
//   GET  /v1/stats
//   GET  /v1/outliers             ?method=&threshold=&clusters=&sigma=&minority_fraction=&seed=
//   GET  /v1/projection
//   POST /v1/admin/rebuild-index
//
// Request and response schemas live in schemas/.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "agsv/analytics.hpp"
#include "agsv/store.hpp"
#include "agsv/trainer.hpp"

namespace agsv {

inline constexpr std::size_t kMiB = 1024 * 1024;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path checkpoint_path;
  std::filesystem::path store_path;  // loaded at start if present, written on stop
  AnnParams index;
  std::size_t max_upload_bytes = 16 * kMiB;
  std::size_t default_k = 12;
  std::size_t workers = 4;

  /// Throws ParameterError.
  void validate() const;
};

/// Keys: "listen" ("host:port"), "host", "port", "checkpoint_path",
/// "store_path", "index" {"max_neighbors","build_beam","search_beam","seed"},
/// "max_upload_bytes", "default_k", "workers". Relative paths resolve against
/// base_dir. Throws ParameterError on unknown keys or wrong types.
ServiceConfig service_config_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir = {});

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

/// ADDR ("host:port"), STORE_PATH, CHECKPOINT_PATH.
void apply_env_overrides(ServiceConfig& config, const EnvLookup& env);
std::optional<std::string> process_env(const char* name);

/// Reads the JSON config file, applies environment overrides, validates.
ServiceConfig load_service_config(const std::filesystem::path& path,
                                  const EnvLookup& env = process_env);

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

ApiResponse api_error(int status, const std::string& code, const std::string& message);

/// Default id for an uploaded image: "sha256-" plus the first 32 hex digits
/// of the SHA-256 of its bytes.
std::string content_id(std::string_view bytes);

class Service {
 public:
  /// Throws DataError if the store's dimension does not match the encoder.
  Service(ServiceConfig config, EncoderCheckpoint checkpoint, EmbeddingStore store = {});

  /// Loads the checkpoint and, when the file exists, the store.
  static std::unique_ptr<Service> open(const ServiceConfig& config);

  ApiResponse ingest(std::string_view image, std::optional<std::string> id, Metadata metadata);
  ApiResponse search(std::string_view image, std::optional<std::size_t> k, const std::string& mode,
                     std::optional<std::size_t> beam = std::nullopt) const;
  ApiResponse stats() const;
  ApiResponse outliers(const OutlierConfig& config) const;
  ApiResponse projection() const;
  ApiResponse rebuild_index();

  /// Decode, resize to the encoder input, encode. Throws DecodeError,
  /// InputError (empty or oversized upload).
  Vector embed(std::string_view image) const;

  /// Writes the store to config().store_path when one is configured.
  void persist() const;

  const ServiceConfig& config() const noexcept { return config_; }
  const EncoderCheckpoint& checkpoint() const noexcept { return checkpoint_; }
  const EmbeddingStore& store() const noexcept { return store_; }

 private:
  ServiceConfig config_;
  EncoderCheckpoint checkpoint_;
  EmbeddingStore store_;
};

/// HTTP transport over a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds config().host:config().port and returns the bound port. Throws
  /// BindError.
  int bind();
  /// Serves until stop(); requires bind().
  void run();
  /// Safe from any thread; run() returns afterwards.
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace agsv
