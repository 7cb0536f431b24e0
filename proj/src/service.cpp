#include "lingedit/service.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "httplib.h"
#include "lingedit/evaluation.hpp"
#include "lingedit/hashing.hpp"

namespace lingedit {

namespace {

ServiceResponse error(int status, const std::string& kind, const std::string& message) {
  return ServiceResponse{status, {{"error", kind}, {"message", message}}};
}

std::string png_base64(const RgbImage& image) { return base64_encode(encode_png(image)); }
std::string png_base64(const GrayImage& image) { return base64_encode(encode_png(image)); }

struct Request {
  RgbImage image;
  std::string description;
  nlohmann::json json;
};

// Parses and validates the common request fields; throws the matching
// exception type for error mapping.
Request parse_request(const std::string& body, const Model& model) {
  Request r;
  try {
    r.json = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("request body is not JSON: ") + e.what());
  }
  if (!r.json.is_object()) throw DataError("request body must be a JSON object");
  if (!r.json.contains("image") || !r.json["image"].is_string()) throw DataError("missing base64 \"image\" field");
  if (!r.json.contains("description") || !r.json["description"].is_string())
    throw InvalidDescription("missing \"description\" field");
  r.description = r.json["description"].get<std::string>();
  if (normalize_words(r.description).empty()) throw InvalidDescription("description is empty");
  const RgbImage decoded = decode_image(base64_decode(r.json["image"].get<std::string>()));
  const int side = int(model.image_size());
  if (decoded.width < side || decoded.height < side)
    throw ShapeError("image is " + std::to_string(decoded.width) + "x" + std::to_string(decoded.height) +
                     ", smaller than the model resolution " + std::to_string(side));
  r.image = model_ready(model, decoded);
  return r;
}

template <typename F>
ServiceResponse guarded(const ServiceConfig& config, const std::shared_ptr<const Model>& model,
                        const std::string& load_error, const std::string& body, F&& handler) {
  if (!model) return error(503, "unavailable", "no model loaded: " + load_error);
  if (body.size() > config.max_payload)
    return error(413, "payload_too_large",
                 "request is " + std::to_string(body.size()) + " bytes; limit " + std::to_string(config.max_payload));
  try {
    return handler(parse_request(body, *model));
  } catch (const InvalidDescription& e) {
    return error(400, "invalid_description", e.what());
  } catch (const ShapeError& e) {
    return error(400, "bad_image", e.what());
  } catch (const DataError& e) {
    return error(400, "bad_request", e.what());
  } catch (const NumericalFailure& e) {
    return error(500, "numerical_failure", e.what());
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

ServiceConfig apply_environment(ServiceConfig config) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v && *v) return std::string(v);
    return std::nullopt;
  };
  try {
    if (auto v = env("LINGEDIT_HOST")) config.host = *v;
    if (auto v = env("LINGEDIT_PORT")) config.port = std::stoi(*v);
    if (auto v = env("LINGEDIT_CHECKPOINT"); v && config.checkpoint.empty()) config.checkpoint = *v;
    if (auto v = env("LINGEDIT_VOCAB"); v && config.vocabulary.empty()) config.vocabulary = *v;
    if (auto v = env("LINGEDIT_MAX_PAYLOAD")) config.max_payload = std::stoull(*v);
  } catch (const std::logic_error&) {
    throw DataError("malformed numeric service environment variable");
  }
  return config;
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  try {
    if (config_.checkpoint.empty()) throw DataError("no checkpoint configured");
    std::optional<Vocabulary> vocab;
    if (!config_.vocabulary.empty()) vocab = Vocabulary::load(config_.vocabulary);
    auto model = std::make_shared<Model>(load_model(config_.checkpoint, vocab ? &*vocab : nullptr));
    model_id_ = model_id(*model);
    model_ = std::move(model);
  } catch (const std::exception& e) {
    load_error_ = e.what();
  }
}

Service::Service(ServiceConfig config, Model model) : config_(std::move(config)) {
  auto m = std::make_shared<Model>(std::move(model));
  model_id_ = model_id(*m);
  model_ = std::move(m);
}

ServiceResponse Service::manipulate(const std::string& body) const {
  return guarded(config_, model_, load_error_, body, [&](const Request& r) {
    const auto start = std::chrono::steady_clock::now();
    const Manipulation m = lingedit::manipulate(*model_, r.image, r.description);
    nlohmann::json out{{"image", png_base64(m.output)},
                       {"width", m.output.width},
                       {"height", m.output.height},
                       {"words", m.words},
                       {"model_id", model_id_}};
    if (r.json.value("heatmaps", false)) {
      const HeatmapSet set = heatmaps_from_capture(m.attention, m.words, int(model_->image_size()));
      nlohmann::json maps = nlohmann::json::array();
      for (std::size_t k = 0; k < set.maps.size(); ++k)
        maps.push_back({{"word", set.words[k]}, {"index", k}, {"image", png_base64(heatmap_image(set.maps[k]))}});
      out["heatmaps"] = std::move(maps);
    }
    out["elapsed_ms"] = elapsed_ms(start);
    return ServiceResponse{200, std::move(out)};
  });
}

ServiceResponse Service::interpolate(const std::string& body) const {
  return guarded(config_, model_, load_error_, body, [&](const Request& r) {
    const auto start = std::chrono::steady_clock::now();
    if (!r.json.contains("target") || !r.json["target"].is_string())
      throw InvalidDescription("missing \"target\" description");
    const int steps = r.json.value("steps", 5);
    if (steps < 2 || steps > config_.max_steps)
      throw DataError("steps must lie in [2, " + std::to_string(config_.max_steps) + "]");
    const auto frames = interpolate_text(*model_, r.image, r.description, r.json["target"].get<std::string>(), steps);
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t k = 0; k < frames.size(); ++k)
      list.push_back({{"t", double(k) / double(steps - 1)}, {"image", png_base64(frames[k])}});
    return ServiceResponse{200, {{"frames", std::move(list)},
                                 {"steps", steps},
                                 {"width", frames.front().width},
                                 {"height", frames.front().height},
                                 {"model_id", model_id_},
                                 {"elapsed_ms", elapsed_ms(start)}}};
  });
}

ServiceResponse Service::health() const {
  if (!model_) return ServiceResponse{503, {{"status", "unavailable"}, {"message", load_error_}}};
  return ServiceResponse{200, {{"status", "ok"}}};
}

ServiceResponse Service::model_info() const {
  if (!model_) return error(503, "unavailable", "no model loaded: " + load_error_);
  return ServiceResponse{200,
                         {{"model_id", model_id_},
                          {"mode", to_string(model_->config.mode)},
                          {"resolution", model_->image_size()},
                          {"scales", model_->config.mode == GeneratorMode::multi ? model_->config.scales : 1},
                          {"vocab_hash", model_->vocab.hash()},
                          {"vocab_size", model_->vocab.size()},
                          {"max_payload", config_.max_payload},
                          {"max_steps", config_.max_steps}}};
}

void serve(const Service& service, const std::function<void(std::function<void()>)>& on_ready) {
  httplib::Server server;
  server.set_payload_max_length(service.config().max_payload + 1024);
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/manipulate", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.manipulate(req.body));
  });
  server.Post("/interpolate", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.interpolate(req.body));
  });
  server.Get("/healthz", [&](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });
  server.Get("/model-info", [&](const httplib::Request&, httplib::Response& res) { reply(res, service.model_info()); });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      res.set_content(R"({"error":"payload_too_large","message":"request exceeds the payload limit"})",
                      "application/json");
    } else if (res.body.empty()) {
      res.set_content(nlohmann::json{{"error", "http"}, {"status", res.status}}.dump(), "application/json");
    }
  });
  if (!server.bind_to_port(service.config().host, service.config().port))
    throw DataError("cannot listen on " + service.config().host + ":" + std::to_string(service.config().port));
  std::cerr << "serving on " << service.config().host << ":" << service.config().port
            << (service.ready() ? "" : " (no model loaded)") << "\n";
  if (on_ready) on_ready([&server] { server.stop(); });
  server.listen_after_bind();
}

}  // namespace lingedit
