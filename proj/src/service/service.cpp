#include "agsv/service.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>

#include <openssl/sha.h>

#include "agsv/errors.hpp"
#include "agsv/image.hpp"
#include "agsv/checkpoint.hpp"

namespace agsv {

using nlohmann::json;

// ---- configuration ----

void ServiceConfig::validate() const {
  if (host.empty()) throw ParameterError("host must not be empty");
  if (port < 0 || port > 65535) throw ParameterError("port must lie in [0, 65535]");
  if (max_upload_bytes < kMiB) throw ParameterError("max_upload_bytes must be at least 1 MiB");
  if (default_k < 1) throw ParameterError("default_k must be >= 1");
  if (workers < 1) throw ParameterError("workers must be >= 1");
  index.validate();
}

namespace {

std::pair<std::string, int> split_listen(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0)
    throw ParameterError("listen address must be host:port, got '" + addr + "'");
  int port = -1;
  const char* begin = addr.data() + colon + 1;
  const char* end = addr.data() + addr.size();
  const auto [ptr, ec] = std::from_chars(begin, end, port);
  if (ec != std::errc() || ptr != end || begin == end)
    throw ParameterError("listen address has a bad port: '" + addr + "'");
  return {addr.substr(0, colon), port};
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.empty() || p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

ServiceConfig service_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ParameterError("service config must be a JSON object");
  ServiceConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "listen") {
        std::tie(c.host, c.port) = split_listen(value.get<std::string>());
      } else if (key == "host") {
        c.host = value.get<std::string>();
      } else if (key == "port") {
        c.port = value.get<int>();
      } else if (key == "checkpoint_path") {
        c.checkpoint_path = resolve(value.get<std::string>(), base_dir);
      } else if (key == "store_path") {
        c.store_path = resolve(value.get<std::string>(), base_dir);
      } else if (key == "max_upload_bytes") {
        c.max_upload_bytes = value.get<std::size_t>();
      } else if (key == "default_k") {
        c.default_k = value.get<std::size_t>();
      } else if (key == "workers") {
        c.workers = value.get<std::size_t>();
      } else if (key == "index") {
        if (!value.is_object()) throw ParameterError("\"index\" must be an object");
        for (const auto& [k, v] : value.items()) {
          if (k == "max_neighbors") c.index.max_neighbors = v.get<std::size_t>();
          else if (k == "build_beam") c.index.build_beam = v.get<std::size_t>();
          else if (k == "search_beam") c.index.search_beam = v.get<std::size_t>();
          else if (k == "seed") c.index.seed = v.get<std::uint64_t>();
          else throw ParameterError("unknown index key '" + k + "'");
        }
      } else {
        throw ParameterError("unknown service config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ParameterError(std::string("service config: ") + e.what());
  }
  return c;
}

void apply_env_overrides(ServiceConfig& config, const EnvLookup& env) {
  if (const auto addr = env("ADDR")) std::tie(config.host, config.port) = split_listen(*addr);
  if (const auto p = env("STORE_PATH")) config.store_path = *p;
  if (const auto p = env("CHECKPOINT_PATH")) config.checkpoint_path = *p;
}

std::optional<std::string> process_env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr) return std::nullopt;
  return std::string(v);
}

ServiceConfig load_service_config(const std::filesystem::path& path, const EnvLookup& env) {
  const auto bytes = read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ParameterError("service config " + path.string() + " is not valid JSON: " + e.what());
  }
  ServiceConfig c = service_config_from_json(j, path.parent_path());
  apply_env_overrides(c, env);
  c.validate();
  return c;
}

// ---- responses ----

ApiResponse api_error(int status, const std::string& code, const std::string& message) {
  return {status, json{{"error", {{"code", code}, {"message", message}}}}};
}

std::string content_id(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id = "sha256-";
  for (int i = 0; i < 16; ++i) {
    id += kHex[digest[i] >> 4];
    id += kHex[digest[i] & 15];
  }
  return id;
}

namespace {

template <class F>
ApiResponse guarded(F&& f) {
  try {
    return f();
  } catch (const DecodeError& e) {
    return api_error(415, "unsupported_media_type", e.what());
  } catch (const DuplicateId& e) {
    return api_error(409, "duplicate_id", e.what());
  } catch (const EmptyStore& e) {
    return api_error(409, "empty_store", e.what());
  } catch (const StaleIndex& e) {
    return api_error(409, "stale_index", e.what());
  } catch (const NormalizationError&) {
    return api_error(422, "zero_embedding", "the image encodes to a zero vector and cannot be compared");
  } catch (const ParameterError& e) {
    return api_error(400, "bad_request", e.what());
  } catch (const InputError& e) {
    return api_error(400, "bad_request", e.what());
  } catch (const ShapeError& e) {
    return api_error(400, "bad_request", e.what());
  } catch (const Error& e) {
    return api_error(422, "data_error", e.what());
  } catch (const std::exception& e) {
    return api_error(500, "internal", e.what());
  }
}

json params_json(const AnnParams& p) {
  return {{"max_neighbors", p.max_neighbors},
          {"build_beam", p.build_beam},
          {"search_beam", p.search_beam},
          {"seed", p.seed}};
}

struct Snapshot {
  std::vector<std::string> ids;
  std::vector<Metadata> metadata;
  Matrix vectors;
};

Snapshot snapshot(const EmbeddingStore& store) {
  const auto records = store.records();
  Snapshot s;
  const auto d = records.empty() ? 0 : static_cast<Eigen::Index>(records[0].vector.size());
  s.vectors.resize(static_cast<Eigen::Index>(records.size()), d);
  for (std::size_t i = 0; i < records.size(); ++i) {
    s.ids.push_back(records[i].id);
    s.metadata.push_back(records[i].metadata);
    for (Eigen::Index j = 0; j < d; ++j)
      s.vectors(static_cast<Eigen::Index>(i), j) = records[i].vector[static_cast<std::size_t>(j)];
  }
  return s;
}

}  // namespace

// ---- service ----

Service::Service(ServiceConfig config, EncoderCheckpoint checkpoint, EmbeddingStore store)
    : config_(std::move(config)), checkpoint_(std::move(checkpoint)), store_(std::move(store)) {
  config_.validate();
  checkpoint_.validate();
  if (const auto d = store_.dim(); d && *d != checkpoint_.embed_dim())
    throw DataError("store holds " + std::to_string(*d) + "-dimensional vectors but the encoder produces " +
                    std::to_string(checkpoint_.embed_dim()));
}

std::unique_ptr<Service> Service::open(const ServiceConfig& config) {
  if (config.checkpoint_path.empty()) throw ParameterError("checkpoint_path is required");
  EncoderCheckpoint checkpoint = load_checkpoint(config.checkpoint_path);
  EmbeddingStore store;
  if (!config.store_path.empty() && std::filesystem::exists(config.store_path))
    store = EmbeddingStore::load(config.store_path);
  return std::make_unique<Service>(config, std::move(checkpoint), std::move(store));
}

Vector Service::embed(std::string_view image) const {
  if (image.empty()) throw DecodeError("empty upload");
  if (image.size() > config_.max_upload_bytes) throw InputError("upload exceeds the size limit");
  const Raster raster = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(image.data()), image.size()));
  const ModelConfig& m = checkpoint_.model();
  const Image img = conform(raster, m.input_height, m.input_width, m.channels);
  const Matrix h = encode(checkpoint_, std::span(&img, 1));
  return h.row(0).transpose();
}

ApiResponse Service::ingest(std::string_view image, std::optional<std::string> id, Metadata metadata) {
  return guarded([&]() -> ApiResponse {
    if (image.size() > config_.max_upload_bytes)
      return api_error(413, "payload_too_large", "image exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
    const std::string key = id ? *id : content_id(image);
    if (key.empty()) return api_error(400, "bad_request", "id must not be empty");
    if (store_.contains(key)) throw DuplicateId(key);
    const Vector h = embed(image);
    store_.insert(key, std::span(h.data(), static_cast<std::size_t>(h.size())), std::move(metadata));
    return {200, json{{"id", key}}};
  });
}

ApiResponse Service::search(std::string_view image, std::optional<std::size_t> k, const std::string& mode,
                            std::optional<std::size_t> beam) const {
  return guarded([&]() -> ApiResponse {
    if (image.size() > config_.max_upload_bytes)
      return api_error(413, "payload_too_large", "image exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
    if (mode != "exact" && mode != "ann") return api_error(400, "bad_request", "mode must be exact or ann");
    const std::size_t top = k.value_or(config_.default_k);
    if (top < 1) return api_error(400, "bad_request", "k must be >= 1");
    if (store_.size() == 0) throw EmptyStore();
    const Vector q = embed(image);
    const std::span<const double> query(q.data(), static_cast<std::size_t>(q.size()));
    const auto hits = mode == "exact" ? store_.exact_search(query, top) : store_.ann_search(query, top, beam);
    json out = json::array();
    for (const auto& h : hits) {
      const auto record = store_.get(h.id);
      out.push_back({{"id", h.id}, {"similarity", h.similarity}, {"metadata", record ? record->metadata : Metadata{}}});
    }
    return {200, json{{"mode", mode}, {"k", top}, {"hits", std::move(out)}}};
  });
}

ApiResponse Service::stats() const {
  return guarded([&]() -> ApiResponse {
    const StoreStats s = store_.stats();
    json index = nullptr;
    if (s.index)
      index = {{"snapshot_size", s.index->snapshot_size}, {"stale", s.index->stale}, {"params", params_json(s.index->params)}};
    const ModelConfig& m = checkpoint_.model();
    return {200, json{{"count", s.count},
                      {"dim", s.dim ? json(*s.dim) : json(nullptr)},
                      {"index", index},
                      {"checkpoint",
                       {{"path", config_.checkpoint_path.string()},
                        {"encoder", to_string(m.kind)},
                        {"embed_dim", checkpoint_.embed_dim()},
                        {"input", {m.input_height, m.input_width, m.channels}}}}}};
  });
}

ApiResponse Service::outliers(const OutlierConfig& config) const {
  return guarded([&]() -> ApiResponse {
    config.validate();
    const Snapshot s = snapshot(store_);
    if (s.ids.size() < 10)
      return api_error(409, "too_few_records", "outlier detection needs at least 10 records, the store has " + std::to_string(s.ids.size()));
    const OutlierReport r = detect_outliers(s.vectors, config, s.ids);
    std::vector<bool> flag(s.ids.size(), false);
    json flagged = json::array();
    for (std::size_t i : r.flagged) {
      flag[i] = true;
      flagged.push_back(s.ids[i]);
    }
    json items = json::array();
    for (std::size_t i = 0; i < s.ids.size(); ++i)
      items.push_back({{"id", s.ids[i]}, {"score", r.scores[i]}, {"flagged", static_cast<bool>(flag[i])}, {"metadata", s.metadata[i]}});
    return {200, json{{"method", r.method}, {"threshold", r.threshold}, {"count", s.ids.size()},
                      {"flagged", std::move(flagged)}, {"items", std::move(items)}}};
  });
}

ApiResponse Service::projection() const {
  return guarded([&]() -> ApiResponse {
    const Snapshot s = snapshot(store_);
    if (s.ids.size() < 4)
      return api_error(409, "too_few_records", "projection needs at least 4 records, the store has " + std::to_string(s.ids.size()));
    const Projection3D p = project_3d(s.vectors);
    json points = json::array();
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      const auto row = p.coordinates.row(static_cast<Eigen::Index>(i));
      points.push_back({{"id", s.ids[i]}, {"x", row(0)}, {"y", row(1)}, {"z", row(2)}, {"metadata", s.metadata[i]}});
    }
    const Vector& ev = p.explained_variance;
    return {200, json{{"count", s.ids.size()},
                      {"explained_variance", {ev(0), ev(1), ev(2)}},
                      {"discarded_variance", p.discarded_variance},
                      {"points", std::move(points)}}};
  });
}

ApiResponse Service::rebuild_index() {
  return guarded([&]() -> ApiResponse {
    const auto index = store_.build_index(config_.index);
    return {200, json{{"snapshot_size", index->size()}, {"params", params_json(index->params())}}};
  });
}

void Service::persist() const {
  if (!config_.store_path.empty()) store_.save(config_.store_path);
}

}  // namespace agsv
