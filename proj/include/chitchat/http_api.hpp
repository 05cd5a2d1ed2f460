#pragma once

#include <memory>
#include <string>

#include "chitchat/error.hpp"
#include "chitchat/session.hpp"

namespace httplib {
class Server;
}

namespace chitchat::http {

/// JSON-over-HTTP front end for a SessionStore.
///
///   POST /sessions                  {system_spec, protocol?, seed?}
///                                   -> 201 {session_id, opening}
///   POST /sessions/{id}/utterance   {text} -> {reply, fallback} | {closing}
///   POST /sessions/{id}/evaluation  {scores, rater_id} -> 201 {evaluation}
///   GET  /sessions/{id}             session transcript
///   GET  /export[?state=&model_id=] JSON Lines export
///
/// Errors are {error: CODE, message} with 400/404/409/422 statuses.
class ApiServer {
 public:
  explicit ApiServer(std::shared_ptr<session::SessionStore> store);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds to host:port (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop() is called.
  void serve();
  void stop();

 private:
  std::shared_ptr<session::SessionStore> store_;
  std::unique_ptr<httplib::Server> server_;
};

int http_status(ErrorCode code);

}  // namespace chitchat::http
