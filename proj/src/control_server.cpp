// SPDX-License-Identifier: Apache-2.0
#include "canwire/control_server.hpp"

#include <atomic>
#include <deque>
#include <set>
#include <stdexcept>
#include <system_error>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

namespace canwire {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

constexpr std::size_t kMaxBacklog = 256;
constexpr std::size_t kMaxMessage = 64 * 1024;

}  // namespace

Endpoint parse_endpoint(const std::string& text) {
  std::string s = text;
  if (s.rfind("ws://", 0) == 0) s = s.substr(5);
  if (auto slash = s.find('/'); slash != std::string::npos) {
    if (s.substr(slash) != protocol::kPath) throw std::invalid_argument("endpoint path must be /control");
    s = s.substr(0, slash);
  }
  Endpoint ep;
  std::string port = s;
  if (auto colon = s.rfind(':'); colon != std::string::npos) {
    if (colon > 0) ep.host = s.substr(0, colon);
    port = s.substr(colon + 1);
  }
  if (port.empty() || port.size() > 5 || port.find_first_not_of("0123456789") != std::string::npos ||
      std::stoul(port) > 65535) {
    throw std::invalid_argument("bad endpoint '" + text + "'");
  }
  ep.port = static_cast<std::uint16_t>(std::stoul(port));
  return ep;
}

class Session;

struct ControlServer::Impl : std::enable_shared_from_this<ControlServer::Impl> {
  LiveSim& sim;
  net::io_context ioc;
  tcp::acceptor acceptor;
  std::set<std::shared_ptr<Session>> sessions;  // io thread only
  std::atomic<std::size_t> client_count{0};
  std::thread thread;

  Impl(LiveSim& s, const Endpoint& ep) : sim(s), acceptor(ioc) {
    try {
      const tcp::endpoint endpoint(net::ip::make_address(ep.host), ep.port);
      acceptor.open(endpoint.protocol());
      acceptor.set_option(net::socket_base::reuse_address(true));
      acceptor.bind(endpoint);
      acceptor.listen();
    } catch (const boost::system::system_error& e) {
      throw std::system_error(e.code().value(), std::system_category(), e.what());
    }
  }

  void accept();
  void broadcast(std::shared_ptr<const std::string> msg);
  void remove(const std::shared_ptr<Session>& s);
};

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, std::weak_ptr<ControlServer::Impl> server)
      : ws_(std::move(socket)), server_(std::move(server)), guard_(std::make_shared<protocol::SeqGuard>()) {}

  void run() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_request(ec); });
  }

  void send(std::shared_ptr<const std::string> msg) {
    if (!open_) return;
    if (queue_.size() >= kMaxBacklog) {
      spdlog::warn("control client too slow, dropping connection");
      close();
      return;
    }
    queue_.push_back(std::move(msg));
    if (queue_.size() == 1) write_next();
  }

  void close() {
    open_ = false;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return finish();
    const auto target = request_.target();
    if (std::string_view(target.data(), target.size()) != protocol::kPath || !websocket::is_upgrade(request_)) {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
      res->set(http::field::content_type, "text/plain");
      res->body() = "websocket endpoint is " + std::string(protocol::kPath) + "\n";
      res->prepare_payload();
      http::async_write(ws_.next_layer(), *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
        self->finish();
      });
      return;
    }
    ws_.read_message_max(kMaxMessage);
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

  void on_accept(beast::error_code ec) {
    if (ec) return finish();
    open_ = true;
    ws_.text(true);
    send(std::make_shared<const std::string>(protocol::hello().dump()));
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) return finish();
    std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    if (auto server = server_.lock()) {
      std::weak_ptr<Session> weak = shared_from_this();
      auto* ioc = &server->ioc;
      std::weak_ptr<ControlServer::Impl> weak_server = server_;
      server->sim.submit(guard_, std::move(text), [weak, weak_server, ioc](std::string reply) {
        auto alive = weak_server.lock();
        if (!alive) return;
        net::post(*ioc, [weak, msg = std::make_shared<const std::string>(std::move(reply))] {
          if (auto self = weak.lock()) self->send(msg);
        });
      });
    }
    read();
  }

  void write_next() {
    ws_.async_write(net::buffer(*queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec); });
  }

  void on_write(beast::error_code ec) {
    if (ec) return finish();
    queue_.pop_front();
    if (!queue_.empty() && open_) write_next();
  }

  void finish() {
    close();
    if (auto server = server_.lock()) server->remove(shared_from_this());
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::weak_ptr<ControlServer::Impl> server_;
  std::shared_ptr<protocol::SeqGuard> guard_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool open_ = false;
};

void ControlServer::Impl::accept() {
  acceptor.async_accept([self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec != net::error::operation_aborted) spdlog::warn("accept failed: {}", ec.message());
      if (!self->acceptor.is_open()) return;
    } else {
      auto session = std::make_shared<Session>(std::move(socket), self);
      self->sessions.insert(session);
      self->client_count = self->sessions.size();
      spdlog::info("control client connected ({} total)", self->sessions.size());
      session->run();
    }
    self->accept();
  });
}

void ControlServer::Impl::broadcast(std::shared_ptr<const std::string> msg) {
  for (const auto& s : sessions) s->send(msg);
}

void ControlServer::Impl::remove(const std::shared_ptr<Session>& s) {
  if (sessions.erase(s)) {
    client_count = sessions.size();
    spdlog::info("control client left ({} total)", sessions.size());
  }
}

ControlServer::ControlServer(LiveSim& sim, const Endpoint& endpoint)
    : impl_(std::make_shared<Impl>(sim, endpoint)) {
  std::weak_ptr<Impl> weak = impl_;
  sim.set_sink([weak](std::shared_ptr<const std::string> msg) {
    if (auto impl = weak.lock()) {
      net::post(impl->ioc, [weak, msg = std::move(msg)] {
        if (auto i = weak.lock()) i->broadcast(msg);
      });
    }
  });
}

ControlServer::~ControlServer() {
  impl_->sim.set_sink({});
  stop();
}

std::uint16_t ControlServer::port() const { return impl_->acceptor.local_endpoint().port(); }

std::size_t ControlServer::clients() const { return impl_->client_count; }

void ControlServer::start() {
  if (impl_->thread.joinable()) return;
  impl_->accept();
  impl_->thread = std::thread([impl = impl_] { impl->ioc.run(); });
}

void ControlServer::stop() {
  if (!impl_->thread.joinable()) return;
  net::post(impl_->ioc, [impl = impl_] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    for (const auto& s : impl->sessions) s->close();
    impl->client_count = 0;
  });
  impl_->thread.join();
}

}  // namespace canwire
