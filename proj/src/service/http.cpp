// Eigen must come before httplib: <resolv.h> defines a _res macro that
// breaks Eigen's product kernels.
#include "agsv/errors.hpp"
#include "agsv/service.hpp"

#include <sys/socket.h>

#include <charconv>

#include <httplib.h>

namespace agsv {

using nlohmann::json;

namespace {

void send(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

const char* code_for(int status) {
  switch (status) {
    case 400: return "bad_request";
    case 404: return "not_found";
    case 405: return "method_not_allowed";
    case 413: return "payload_too_large";
    case 415: return "unsupported_media_type";
    default: return status >= 500 ? "internal" : "error";
  }
}

// Multipart field or query parameter.
std::optional<std::string> field(const httplib::Request& req, const std::string& name) {
  if (req.has_file(name)) return req.get_file_value(name).content;
  if (req.has_param(name)) return req.get_param_value(name);
  return std::nullopt;
}

template <class T>
std::optional<T> parse_number(const httplib::Request& req, const std::string& name) {
  const auto text = field(req, name);
  if (!text) return std::nullopt;
  T value{};
  const char* end = text->data() + text->size();
  const auto [ptr, ec] = std::from_chars(text->data(), end, value);
  if (ec != std::errc() || ptr != end || text->empty())
    throw ParameterError("'" + name + "' is not a valid number: '" + *text + "'");
  return value;
}

// The upload part named "image", or an error response.
std::optional<ApiResponse> image_part(const httplib::Request& req, std::string& out) {
  if (!req.is_multipart_form_data())
    return api_error(415, "unsupported_media_type", "expected multipart/form-data with an image part");
  if (!req.has_file("image")) return api_error(415, "unsupported_media_type", "missing the image part");
  out = req.get_file_value("image").content;
  return std::nullopt;
}

}  // namespace

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  bool bound = false;

  explicit Impl(Service& s) : service(s) {
    const ServiceConfig& cfg = service.config();
    // Exclusive binding: the library default (SO_REUSEPORT) would let a
    // second server share a busy port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    server.set_payload_max_length(cfg.max_upload_bytes + kMiB);
    const std::size_t workers = cfg.workers;
    server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };

    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      send(res, api_error(res.status, code_for(res.status), httplib::status_message(res.status)));
      return httplib::Server::HandlerResponse::Handled;
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string message = "unknown failure";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        message = e.what();
      } catch (...) {
      }
      send(res, api_error(500, "internal", message));
    });

    server.Post("/v1/ingest", [this](const httplib::Request& req, httplib::Response& res) {
      std::string image;
      if (auto err = image_part(req, image)) return send(res, *err);
      Metadata metadata;
      if (const auto text = field(req, "metadata")) {
        json j;
        try {
          j = json::parse(*text);
        } catch (const json::parse_error&) {
          return send(res, api_error(400, "bad_request", "metadata is not valid JSON"));
        }
        if (!j.is_object()) return send(res, api_error(400, "bad_request", "metadata must be a JSON object"));
        for (const auto& [key, value] : j.items()) {
          if (!value.is_string())
            return send(res, api_error(400, "bad_request", "metadata values must be strings"));
          metadata[key] = value.get<std::string>();
        }
      }
      send(res, service.ingest(image, field(req, "id"), std::move(metadata)));
    });

    server.Post("/v1/search", [this](const httplib::Request& req, httplib::Response& res) {
      std::string image;
      if (auto err = image_part(req, image)) return send(res, *err);
      std::optional<std::size_t> k, beam;
      try {
        k = parse_number<std::size_t>(req, "k");
        beam = parse_number<std::size_t>(req, "beam");
      } catch (const ParameterError& e) {
        return send(res, api_error(400, "bad_request", e.what()));
      }
      send(res, service.search(image, k, field(req, "mode").value_or("exact"), beam));
    });

    server.Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
      send(res, service.stats());
    });

    server.Get("/v1/outliers", [this](const httplib::Request& req, httplib::Response& res) {
      OutlierConfig cfg;
      try {
        if (const auto m = field(req, "method")) cfg.method = *m;
        if (const auto v = parse_number<double>(req, "threshold")) cfg.threshold = *v;
        if (const auto v = parse_number<std::size_t>(req, "clusters")) cfg.clusters = *v;
        if (const auto v = parse_number<double>(req, "sigma")) cfg.sigma = *v;
        if (const auto v = parse_number<double>(req, "minority_fraction")) cfg.minority_fraction = *v;
        if (const auto v = parse_number<std::uint64_t>(req, "seed")) cfg.seed = *v;
      } catch (const ParameterError& e) {
        return send(res, api_error(400, "bad_request", e.what()));
      }
      send(res, service.outliers(cfg));
    });

    server.Get("/v1/projection", [this](const httplib::Request&, httplib::Response& res) {
      send(res, service.projection());
    });

    server.Post("/v1/admin/rebuild-index", [this](const httplib::Request&, httplib::Response& res) {
      send(res, service.rebuild_index());
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  const ServiceConfig& cfg = impl_->service.config();
  int port = cfg.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(cfg.host);
    if (port < 0) throw BindError("cannot bind " + cfg.host + " to any port");
  } else if (!impl_->server.bind_to_port(cfg.host, port)) {
    throw BindError("cannot bind " + cfg.host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return port;
}

void HttpServer::run() {
  if (!impl_->bound) throw ParameterError("bind() must precede run()");
  impl_->server.listen_after_bind();
}

void HttpServer::stop() { impl_->server.stop(); }

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace agsv
