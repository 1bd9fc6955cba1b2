#include "bestview/judge/server.hpp"

#include "httplib.h"
#include "json.hpp"

namespace bestview::judge {

using nlohmann::json;

namespace {

int status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::bad_request: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
  }
  return 500;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const JudgeError& e) {
      reply(res, status_of(e.kind()), {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

json tally_json(const Tally& t) {
  return {{"win", t.win_pct}, {"loss", t.loss_pct}, {"tie", t.tie_pct}, {"p", t.p_value},
          {"wins", t.wins},   {"losses", t.losses}, {"ties", t.ties}};
}

}  // namespace

struct JudgeServer::Impl {
  explicit Impl(StudyService& s) : service(s) {}
  StudyService& service;
  httplib::Server server;
};

JudgeServer::JudgeServer(StudyService& service, std::optional<std::filesystem::path> media_root)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  StudyService& svc = impl_->service;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/api/health", guarded([&svc](const httplib::Request&, httplib::Response& res) {
            reply(res, 200, {{"status", "ok"}, {"sessions", svc.session_ids().size()}});
          }));

  srv.Get(R"(/api/session/([^/]+)/next)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            if (!req.has_param("judge")) throw JudgeError(ErrorKind::bad_request, "missing judge parameter");
            const std::string judge = req.get_param_value("judge");
            const auto d = svc.next_pair(id, judge);
            const std::size_t total = svc.session(id).pairs().size();
            if (!d) {
              reply(res, 200, {{"done", true}, {"progress", {{"done", total}, {"total", total}}}});
              return;
            }
            reply(res, 200,
                  {{"pair_index", d->pair_index},
                   {"left_uri", d->left_uri},
                   {"right_uri", d->right_uri},
                   {"progress", {{"done", d->done}, {"total", d->total}}}});
          }));

  srv.Post("/api/judgment", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             json body;
             try {
               body = json::parse(req.body);
             } catch (const json::exception&) {
               throw JudgeError(ErrorKind::bad_request, "request body is not JSON");
             }
             for (const char* k : {"session_id", "judge_id", "pair_index", "verdict"}) {
               if (!body.contains(k)) throw JudgeError(ErrorKind::bad_request, std::string("missing field ") + k);
             }
             if (!body["session_id"].is_string() || !body["judge_id"].is_string() || !body["verdict"].is_string() ||
                 !body["pair_index"].is_number_unsigned()) {
               throw JudgeError(ErrorKind::bad_request, "malformed judgment fields");
             }
             const auto r = svc.submit(body["session_id"].get<std::string>(), body["judge_id"].get<std::string>(),
                                       body["pair_index"].get<std::size_t>(),
                                       parse_verdict(body["verdict"].get<std::string>()));
             reply(res, 200, {{"ok", true}, {"pair_index", r.pair_index}});
           }));

  srv.Get(R"(/api/session/([^/]+)/tally)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const Side side = parse_side(req.has_param("policy") ? req.get_param_value("policy") : "a");
            const TallyMode mode =
                parse_tally_mode(req.has_param("mode") ? req.get_param_value("mode") : "judgments");
            reply(res, 200, tally_json(svc.tally(req.matches[1], side, mode)));
          }));

  if (media_root) srv.set_mount_point("/media", media_root->string());
}

JudgeServer::~JudgeServer() { stop(); }

int JudgeServer::bind_to_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool JudgeServer::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }
bool JudgeServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void JudgeServer::stop() {
  if (impl_) impl_->server.stop();
}
void JudgeServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace bestview::judge
