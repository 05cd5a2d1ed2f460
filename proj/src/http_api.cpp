#include "chitchat/http_api.hpp"

#include <httplib.h>

#include "chitchat/error.hpp"

namespace chitchat::http {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
    case ErrorCode::kUnknownModel:
      return 404;
    case ErrorCode::kNotYourTurn:
    case ErrorCode::kSessionClosed:
    case ErrorCode::kWrongState:
    case ErrorCode::kDuplicate:
      return 409;
    case ErrorCode::kValidation:
    case ErrorCode::kMissingInfo:
      return 422;
    case ErrorCode::kIo:
    case ErrorCode::kZeroProbability:
      return 500;
    default:
      return 400;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, std::string_view code,
                const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "BAD_REQUEST", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "INTERNAL", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json body = json::parse(req.body);
  if (!body.is_object()) {
    throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  }
  return body;
}

}  // namespace

ApiServer::ApiServer(std::shared_ptr<session::SessionStore> store)
    : store_(std::move(store)), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  auto store_ref = store_;

  srv.Post("/sessions", guarded([store_ref](const httplib::Request& req,
                                            httplib::Response& res) {
    const json body = parse_body(req);
    const auto spec = body.at("system_spec").get<session::SystemSpec>();
    const auto protocol = body.value("protocol", session::ProtocolConfig{});
    std::optional<std::uint64_t> seed;
    if (body.contains("seed") && !body["seed"].is_null()) {
      seed = body["seed"].get<std::uint64_t>();
    }
    const auto s = store_ref->create_session(spec, protocol, seed);
    send_json(res, 201, {{"session_id", s.id}, {"opening", s.turns.front().text}});
  }));

  srv.Post(R"(/sessions/([^/]+)/utterance)",
           guarded([store_ref](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const auto& text = body.at("text");
             if (!text.is_string()) {
               throw Error(ErrorCode::kValidation, "text must be a string");
             }
             const auto r = store_ref->post_user_utterance(req.matches[1],
                                                           text.get<std::string>());
             if (r.reply) {
               send_json(res, 200, {{"reply", *r.reply}, {"fallback", r.fallback}});
             } else {
               send_json(res, 200, {{"closing", r.closing}});
             }
           }));

  srv.Post(R"(/sessions/([^/]+)/evaluation)",
           guarded([store_ref](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.contains("scores")) {
               throw Error(ErrorCode::kValidation, "scores are required");
             }
             const auto rater = body.value("rater_id", std::string{});
             const auto record =
                 store_ref->submit_evaluation(req.matches[1], body["scores"], rater);
             send_json(res, 201, {{"evaluation", record}});
           }));

  srv.Get(R"(/sessions/([^/]+))",
          guarded([store_ref](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, session::to_json(store_ref->get(req.matches[1])));
          }));

  srv.Get("/export", guarded([store_ref](const httplib::Request& req,
                                         httplib::Response& res) {
    session::ExportFilter filter;
    if (req.has_param("state")) {
      filter.state = session::parse_state(req.get_param_value("state"));
    }
    if (req.has_param("model_id")) filter.model_id = req.get_param_value("model_id");
    res.status = 200;
    res.set_content(store_ref->export_dialogues(filter),
                    "application/x-ndjson; charset=utf-8");
  }));
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void ApiServer::serve() { server_->listen_after_bind(); }

void ApiServer::stop() {
  if (server_) server_->stop();
}

}  // namespace chitchat::http
