#pragma once

#include "bestview/judge/study.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace bestview::judge {

/// HTTP JSON front end over a StudyService.
///
///   GET  /api/health
///   GET  /api/session/{id}/next?judge={jid}
///   POST /api/judgment   {session_id, judge_id, pair_index, verdict}
///   GET  /api/session/{id}/tally[?policy=a|b&mode=judgments|pairs]
///   GET  /media/...      static files from media_root, when given
///
/// Errors are {"error": message} with 400, 404 or 409.
class JudgeServer {
 public:
  explicit JudgeServer(StudyService& service, std::optional<std::filesystem::path> media_root = std::nullopt);
  ~JudgeServer();
  JudgeServer(const JudgeServer&) = delete;
  JudgeServer& operator=(const JudgeServer&) = delete;

  /// Returns the bound port, or -1 on failure.
  int bind_to_any_port(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bestview::judge
