#include "server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "error.hpp"

namespace qlk {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using json = nlohmann::json;
namespace fs = std::filesystem;

ServerOptions ServerOptions::from_config(const Config& cfg) {
  ServerOptions o;
  o.bind = cfg.service.bind;
  o.port = cfg.service.port;
  o.static_dir = cfg.service.static_dir;
  o.tick_ms = cfg.service.tick_ms;
  o.budget_ms = cfg.service.budget_ms;
  o.multi_session = cfg.service.multi_session;
  o.seed = cfg.planner.seed;
  return o;
}

namespace {

const char* mime_type(const fs::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".map" || ext == ".txt") return "text/plain; charset=utf-8";
  return "application/octet-stream";
}

std::string strip_query(beast::string_view target) {
  std::string t(target);
  const auto q = t.find_first_of("?#");
  return q == std::string::npos ? t : t.substr(0, q);
}

// Maps a request path into root; nullopt when the path escapes it.
std::optional<fs::path> resolve_static(const fs::path& root, const std::string& target) {
  if (target.empty() || target[0] != '/') return std::nullopt;
  if (target.find('\0') != std::string::npos || target.find('\\') != std::string::npos)
    return std::nullopt;
  fs::path rel;
  std::istringstream in(target.substr(1));
  std::string seg;
  while (std::getline(in, seg, '/')) {
    if (seg.empty() || seg == ".") continue;
    if (seg == "..") return std::nullopt;
    rel /= seg;
  }
  if (rel.empty()) rel = "index.html";
  std::error_code ec;
  const fs::path base = fs::weakly_canonical(root, ec);
  if (ec) return std::nullopt;
  fs::path full = fs::weakly_canonical(base / rel, ec);
  if (ec) return std::nullopt;
  if (fs::is_directory(full, ec)) full /= "index.html";
  const auto [b, f] = std::mismatch(base.begin(), base.end(), full.begin(), full.end());
  if (b != base.end()) return std::nullopt;
  return full;
}

}  // namespace

class WsConnection;

struct Server::Impl {
  std::shared_ptr<const Runtime> rt;
  ServerOptions opts;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread io_thread;
  int bound_port = 0;

  std::atomic<int> active{0};
  std::atomic<int> next_id{0};
  std::mutex conns_mu;
  std::vector<std::shared_ptr<WsConnection>> conns;

  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool started = false;
  bool stopped = false;

  void log(const std::string& msg) const {
    if (opts.quiet) return;
    static std::mutex mu;
    std::lock_guard lk(mu);
    std::cerr << "[qlkplan] " << msg << "\n";
  }
  void do_accept();
  std::atomic<bool> stopping{false};
  // False once stop() has begun; the caller must not start a loop thread.
  bool add_connection(std::shared_ptr<WsConnection> c);
  json health() const;
};

// One WebSocket client. Network I/O runs on the io_context thread; the
// episode runs on a dedicated loop thread that owns the Session.
class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket&& s, Server::Impl* srv) : ws_(std::move(s)), srv_(srv) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsConnection::on_accept, shared_from_this()));
  }

  // Thread-safe.
  void send(std::string text) {
    net::post(ws_.get_executor(), [self = shared_from_this(), t = std::move(text)]() mutable {
      self->outq_.push_back(std::move(t));
      if (self->outq_.size() == 1) self->do_write();
    });
  }

  // Thread-safe: flush pending frames, then close.
  void close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      self->close_after_flush_ = true;
      if (self->outq_.empty()) self->do_close();
    });
  }

  // Ends the loop thread (client gone or server stopping).
  void mark_closed() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  void join() {
    if (loop_.joinable()) loop_.join();
  }
  bool done() const { return done_; }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) {
      srv_->log("websocket handshake failed: " + ec.message());
      done_ = true;
      return;
    }
    id_ = "session-" + std::to_string(++srv_->next_id);
    if (!srv_->opts.multi_session) {
      int expected = 0;
      if (!srv_->active.compare_exchange_strong(expected, 1)) {
        srv_->log(id_ + " refused: a session is already active");
        json m = {{"type", "error"},
                  {"version", kProtocolVersion},
                  {"message", "another session is already active"}};
        send(m.dump());
        close();
        done_ = true;
        return;
      }
      counted_ = true;
    } else {
      ++srv_->active;
      counted_ = true;
    }
    if (!srv_->add_connection(shared_from_this())) {
      --srv_->active;
      close();
      done_ = true;
      return;
    }
    srv_->log(id_ + " opened");
    loop_ = std::thread([self = shared_from_this()] { self->loop(); });
    do_read();
  }

  void do_read() {
    ws_.async_read(buf_, beast::bind_front_handler(&WsConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      mark_closed();
      return;
    }
    std::string text = beast::buffers_to_string(buf_.data());
    buf_.consume(buf_.size());
    {
      std::lock_guard lk(mu_);
      inbox_.push_back(std::move(text));
    }
    cv_.notify_all();
    do_read();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(outq_.front()),
                    beast::bind_front_handler(&WsConnection::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      outq_.clear();
      mark_closed();
      return;
    }
    outq_.pop_front();
    if (!outq_.empty())
      do_write();
    else if (close_after_flush_)
      do_close();
  }

  void do_close() {
    if (close_started_) return;
    close_started_ = true;
    ws_.async_close(websocket::close_code::normal,
                    [self = shared_from_this()](beast::error_code) { self->mark_closed(); });
  }

  void loop() {
    const auto tick = std::chrono::milliseconds(std::max(1, srv_->opts.tick_ms));
    try {
      SessionOptions so;
      so.id = id_;
      so.controller = srv_->opts.controller;
      so.budget_ms = srv_->opts.budget_ms;
      so.max_simulations = srv_->opts.max_simulations;
      so.seed = srv_->opts.seed;
      so.trace_dir = srv_->opts.trace_dir;
      Session session(
          srv_->rt, so, [this](const std::string& t) { send(t); },
          [this](const std::string& m) { srv_->log(id_ + ": " + m); });
      session.open();
      auto next = std::chrono::steady_clock::now() + tick;
      bool refused = false;
      while (!refused) {
        std::deque<std::string> batch;
        {
          std::unique_lock lk(mu_);
          cv_.wait_until(lk, next, [&] { return closed_ || !inbox_.empty(); });
          if (closed_) break;
          batch.swap(inbox_);
        }
        for (const auto& m : batch) {
          if (!session.on_message(m)) {
            refused = true;
            break;
          }
        }
        if (refused) break;
        const auto now = std::chrono::steady_clock::now();
        if (now >= next) {
          session.tick();
          next += tick;
          if (next < now) next = now + tick;
        }
      }
      session.disconnect();
      if (session.aborted()) srv_->log(id_ + ": episode aborted on disconnect");
      if (refused) close();
    } catch (const std::exception& e) {
      srv_->log(id_ + ": session failed: " + e.what());
      json m = {{"type", "error"}, {"version", kProtocolVersion}, {"message", e.what()}};
      send(m.dump());
      close();
    }
    if (counted_) --srv_->active;
    srv_->log(id_ + " closed");
    done_ = true;
  }

  websocket::stream<beast::tcp_stream> ws_;
  Server::Impl* srv_;
  std::string id_;
  beast::flat_buffer buf_;
  std::deque<std::string> outq_;  // io thread only
  bool close_after_flush_ = false;
  bool close_started_ = false;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> inbox_;
  bool closed_ = false;

  std::thread loop_;
  std::atomic<bool> done_{false};
  bool counted_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& s, Server::Impl* srv) : stream_(std::move(s)), srv_(srv) {}

  void run() { do_read(); }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buf_, req_,
                     beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    const std::string path = strip_query(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (path == "/session") {
        stream_.expires_never();
        std::make_shared<WsConnection>(stream_.release_socket(), srv_)->run(std::move(req_));
        return;
      }
      respond(text_response(http::status::not_found, "no websocket endpoint at " + path));
      return;
    }
    respond(handle(path));
  }

  http::response<http::string_body> text_response(http::status st, const std::string& body,
                                                  const char* type = "text/plain; charset=utf-8") {
    http::response<http::string_body> res{st, req_.version()};
    res.set(http::field::server, "qlkplan");
    res.set(http::field::content_type, type);
    res.keep_alive(req_.keep_alive());
    res.body() = body;
    res.prepare_payload();
    return res;
  }

  http::response<http::string_body> handle(const std::string& path) {
    if (req_.method() != http::verb::get && req_.method() != http::verb::head)
      return text_response(http::status::method_not_allowed, "method not allowed");
    if (path == "/health")
      return text_response(http::status::ok, srv_->health().dump(), "application/json");
    const auto file = resolve_static(srv_->opts.static_dir, path);
    if (!file) return text_response(http::status::forbidden, "forbidden");
    std::ifstream in(*file, std::ios::binary);
    if (!in) return text_response(http::status::not_found, "not found");
    std::ostringstream body;
    body << in.rdbuf();
    auto res = text_response(http::status::ok, body.str(), mime_type(*file));
    if (req_.method() == http::verb::head) res.body().clear();
    return res;
  }

  void respond(http::response<http::string_body> res) {
    auto sp = std::make_shared<http::response<http::string_body>>(std::move(res));
    http::async_write(stream_, *sp,
                      [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
                        if (ec) return;
                        if (sp->need_eof()) {
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                          return;
                        }
                        self->do_read();
                      });
  }

  beast::tcp_stream stream_;
  Server::Impl* srv_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
};

void Server::Impl::do_accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket s) {
    if (ec) {
      if (ec != net::error::operation_aborted) log("accept failed: " + ec.message());
      if (!acceptor.is_open()) return;
    } else {
      std::make_shared<HttpConnection>(std::move(s), this)->run();
    }
    do_accept();
  });
}

bool Server::Impl::add_connection(std::shared_ptr<WsConnection> c) {
  std::lock_guard lk(conns_mu);
  if (stopping) return false;
  for (auto it = conns.begin(); it != conns.end();) {
    if ((*it)->done()) {
      (*it)->join();
      it = conns.erase(it);
    } else {
      ++it;
    }
  }
  conns.push_back(std::move(c));
  return true;
}

json Server::Impl::health() const {
  return {{"status", "ok"},
          {"version", QLK_VERSION_STRING},
          {"config", rt->config().name},
          {"config_hash", hash_hex(rt->hash())},
          {"protocol_version", kProtocolVersion},
          {"active_sessions", active.load()}};
}

Server::Server(std::shared_ptr<const Runtime> rt, ServerOptions opts)
    : impl_(std::make_unique<Impl>()) {
  impl_->rt = std::move(rt);
  impl_->opts = std::move(opts);
  if (impl_->opts.port < 0 || impl_->opts.port > 65535)
    throw ConfigError("service port must be in [0, 65535]");
  if (impl_->opts.tick_ms <= 0) throw ConfigError("service tick_ms must be positive");
}

Server::~Server() { stop(); }

void Server::start() {
  Impl& s = *impl_;
  if (s.started) return;
  beast::error_code ec;
  const auto addr = net::ip::make_address(s.opts.bind, ec);
  if (ec) throw ConfigError("invalid bind address '" + s.opts.bind + "'");
  const tcp::endpoint ep{addr, static_cast<unsigned short>(s.opts.port)};
  s.acceptor.open(ep.protocol(), ec);
  if (!ec) s.acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) s.acceptor.bind(ep, ec);
  if (!ec) s.acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec)
    throw Error(ErrorCode::kIo, "cannot listen on " + s.opts.bind + ":" +
                                    std::to_string(s.opts.port) + ": " + ec.message());
  s.bound_port = s.acceptor.local_endpoint().port();
  s.started = true;
  s.do_accept();
  s.io_thread = std::thread([&s] { s.ioc.run(); });
  s.log("listening on http://" + s.opts.bind + ":" + std::to_string(s.bound_port) +
        " (static " + s.opts.static_dir + ", tick " + std::to_string(s.opts.tick_ms) + " ms)");
}

int Server::port() const { return impl_->bound_port; }

void Server::stop() {
  Impl& s = *impl_;
  {
    std::lock_guard lk(s.stop_mu);
    if (!s.started || s.stopped) {
      s.stopped = true;
      s.stop_cv.notify_all();
      return;
    }
    s.stopped = true;
  }
  s.stop_cv.notify_all();
  net::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
  });
  std::vector<std::shared_ptr<WsConnection>> conns;
  {
    std::lock_guard lk(s.conns_mu);
    s.stopping = true;
    conns.swap(s.conns);
  }
  for (auto& c : conns) c->mark_closed();
  for (auto& c : conns) c->join();
  s.ioc.stop();
  if (s.io_thread.joinable()) s.io_thread.join();
}

void Server::wait() {
  std::unique_lock lk(impl_->stop_mu);
  impl_->stop_cv.wait(lk, [&] { return impl_->stopped; });
}

}  // namespace qlk
