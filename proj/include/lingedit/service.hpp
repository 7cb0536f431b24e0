#pragma once

// HTTP inference service over one loaded checkpoint. Request handlers are
// plain functions of the request body so they can be exercised without a
// socket; serve() binds them to routes.

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "lingedit/model.hpp"

namespace lingedit {

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string checkpoint;
  std::string vocabulary;  // optional; must match the checkpoint when given
  std::size_t max_payload = 8u << 20;
  int max_steps = 16;
};

/// Fills unset fields from LINGEDIT_HOST, LINGEDIT_PORT, LINGEDIT_CHECKPOINT,
/// LINGEDIT_VOCAB and LINGEDIT_MAX_PAYLOAD.
ServiceConfig apply_environment(ServiceConfig config);

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  /// Loads the checkpoint. A load failure leaves the service up but every
  /// inference request answers 503 with the reason.
  explicit Service(ServiceConfig config);
  Service(ServiceConfig config, Model model);

  bool ready() const { return model_ != nullptr; }
  const ServiceConfig& config() const { return config_; }

  /// Body: {"image": base64 PNG/JPEG, "description": str, "heatmaps": bool}.
  ServiceResponse manipulate(const std::string& body) const;
  /// Body: {"image", "description", "target": str, "steps": int in [2, 16]}.
  ServiceResponse interpolate(const std::string& body) const;
  ServiceResponse health() const;
  ServiceResponse model_info() const;

 private:
  ServiceConfig config_;
  std::shared_ptr<const Model> model_;
  std::string model_id_;
  std::string load_error_;
};

/// Blocks serving POST /manipulate, POST /interpolate, GET /healthz and
/// GET /model-info. Once the port is bound, `on_ready` (if set) receives a
/// callback that stops the server from another thread.
void serve(const Service& service, const std::function<void(std::function<void()>)>& on_ready = {});

}  // namespace lingedit
