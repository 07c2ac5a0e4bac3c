#include "fol/federation.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <numeric>
#include <utility>

#include "fol/errors.hpp"
#include "fol/wire.hpp"

namespace fol {

namespace {

constexpr std::uint8_t kTagHello = 0;
constexpr std::uint8_t kTagWelcome = 1;
constexpr std::uint8_t kTagBatchStart = 2;
constexpr std::uint8_t kTagGlobalBroadcast = 3;
constexpr std::uint8_t kTagLocalUpdate = 4;
constexpr std::uint8_t kTagConverged = 5;

// Frames above this are corrupt or hostile, not model state.
constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

void put_vector(std::vector<std::uint8_t>& out, const Eigen::VectorXd& v) {
  wire::put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) wire::put_f64(out, v[i]);
}

Eigen::VectorXd take_vector(wire::Reader& r) {
  const std::uint32_t n = r.u32();
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::uint32_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = r.f64();
  return v;
}

void put_matrix(std::vector<std::uint8_t>& out, const Eigen::MatrixXd& m) {
  wire::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  wire::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) wire::put_f64(out, m(r, c));
}

Eigen::MatrixXd take_matrix(wire::Reader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::uint32_t c = 0; c < cols; ++c)
    for (std::uint32_t i = 0; i < rows; ++i)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r.f64();
  return m;
}

}  // namespace

std::vector<std::uint8_t> encode_message(const Message& msg) {
  std::vector<std::uint8_t> out;
  wire::put_u32(out, kProtocolVersion);
  if (const auto* m = std::get_if<HelloMsg>(&msg)) {
    wire::put_u8(out, kTagHello);
    wire::put_i32(out, m->source_id);
    wire::put_i32(out, m->batches_seen);
    put_vector(out, m->beta_prev);
  } else if (const auto* m = std::get_if<WelcomeMsg>(&msg)) {
    wire::put_u8(out, kTagWelcome);
    wire::put_i32(out, m->rank);
    wire::put_i32(out, m->n_sources);
  } else if (const auto* m = std::get_if<BatchStartMsg>(&msg)) {
    wire::put_u8(out, kTagBatchStart);
    wire::put_i32(out, m->batch_index);
    wire::put_f64(out, m->lambda1);
    wire::put_f64(out, m->lambda2);
    wire::put_f64(out, m->step);
  } else if (const auto* m = std::get_if<GlobalBroadcastMsg>(&msg)) {
    wire::put_u8(out, kTagGlobalBroadcast);
    wire::put_i32(out, m->round);
    put_matrix(out, m->B);
  } else if (const auto* m = std::get_if<LocalUpdateMsg>(&msg)) {
    wire::put_u8(out, kTagLocalUpdate);
    wire::put_i32(out, m->source_id);
    wire::put_i32(out, m->round);
    put_vector(out, m->beta_bar);
    wire::put_f64(out, m->loss);
    wire::put_f64(out, m->lipschitz);
    wire::put_u64(out, m->n_total);
  } else {
    const auto& cv = std::get<ConvergedMsg>(msg);
    wire::put_u8(out, kTagConverged);
    wire::put_u32(out, static_cast<std::uint32_t>(cv.fit.size()));
    out.insert(out.end(), cv.fit.begin(), cv.fit.end());
  }
  return out;
}

Message decode_message(const std::vector<std::uint8_t>& payload) {
  wire::Reader r{payload, "message"};
  const std::uint32_t version = r.u32();
  if (version != kProtocolVersion)
    throw DataError("protocol version mismatch: peer speaks " +
                    std::to_string(version) + ", this build speaks " +
                    std::to_string(kProtocolVersion));
  const std::uint8_t tag = r.u8();
  Message msg;
  switch (tag) {
    case kTagHello: {
      HelloMsg m;
      m.source_id = r.i32();
      m.batches_seen = r.i32();
      m.beta_prev = take_vector(r);
      msg = std::move(m);
      break;
    }
    case kTagWelcome: {
      WelcomeMsg m;
      m.rank = r.i32();
      m.n_sources = r.i32();
      msg = m;
      break;
    }
    case kTagBatchStart: {
      BatchStartMsg m;
      m.batch_index = r.i32();
      m.lambda1 = r.f64();
      m.lambda2 = r.f64();
      m.step = r.f64();
      msg = m;
      break;
    }
    case kTagGlobalBroadcast: {
      GlobalBroadcastMsg m;
      m.round = r.i32();
      m.B = take_matrix(r);
      msg = std::move(m);
      break;
    }
    case kTagLocalUpdate: {
      LocalUpdateMsg m;
      m.source_id = r.i32();
      m.round = r.i32();
      m.beta_bar = take_vector(r);
      m.loss = r.f64();
      m.lipschitz = r.f64();
      m.n_total = r.u64();
      msg = std::move(m);
      break;
    }
    case kTagConverged: {
      ConvergedMsg m;
      const std::uint32_t n = r.u32();
      m.fit.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) m.fit.push_back(r.u8());
      msg = std::move(m);
      break;
    }
    default:
      throw DataError("unknown message tag " + std::to_string(int(tag)));
  }
  r.expect_done();
  return msg;
}

// ---------------------------------------------------------------------------
// Framing.
// ---------------------------------------------------------------------------

void send_frame(int fd, const std::vector<std::uint8_t>& payload,
                const std::string& who) {
  if (payload.size() > kMaxFrameBytes)
    throw DataError("frame to " + who + " exceeds the size limit");
  std::uint8_t header[4];
  const std::uint32_t n = static_cast<std::uint32_t>(payload.size());
  header[0] = static_cast<std::uint8_t>(n >> 24);
  header[1] = static_cast<std::uint8_t>(n >> 16);
  header[2] = static_cast<std::uint8_t>(n >> 8);
  header[3] = static_cast<std::uint8_t>(n);

  std::vector<std::uint8_t> buf;
  buf.reserve(4 + payload.size());
  buf.insert(buf.end(), header, header + 4);
  buf.insert(buf.end(), payload.begin(), payload.end());

  std::size_t sent = 0;
  while (sent < buf.size()) {
    const ssize_t rc =
        ::send(fd, buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw DataError("send to " + who + " failed: " + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(rc);
  }
}

namespace {

void recv_exact(int fd, std::uint8_t* dst, std::size_t n, const std::string& who) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t rc = ::recv(fd, dst + got, n - got, 0);
    if (rc == 0) throw DataError("connection closed by " + who);
    if (rc < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        throw DataError("timed out waiting for " + who);
      throw DataError("receive from " + who + " failed: " +
                      std::strerror(errno));
    }
    got += static_cast<std::size_t>(rc);
  }
}

void set_recv_timeout(int fd, int timeout_ms) {
  timeval tv{};
  tv.tv_sec = timeout_ms / 1000;
  tv.tv_usec = (timeout_ms % 1000) * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

}  // namespace

std::vector<std::uint8_t> recv_frame(int fd, const std::string& who) {
  std::uint8_t header[4];
  recv_exact(fd, header, 4, who);
  const std::uint32_t n = (std::uint32_t(header[0]) << 24) |
                          (std::uint32_t(header[1]) << 16) |
                          (std::uint32_t(header[2]) << 8) | std::uint32_t(header[3]);
  if (n > kMaxFrameBytes)
    throw DataError("frame from " + who + " exceeds the size limit");
  std::vector<std::uint8_t> payload(n);
  if (n > 0) recv_exact(fd, payload.data(), n, who);
  return payload;
}

void send_message(int fd, const Message& msg, const std::string& who) {
  send_frame(fd, encode_message(msg), who);
}

Message recv_message(int fd, const std::string& who) {
  return decode_message(recv_frame(fd, who));
}

// ---------------------------------------------------------------------------
// Coordinator.
// ---------------------------------------------------------------------------

Coordinator::Coordinator(std::uint16_t port, int expected_sources, int timeout_ms)
    : expected_(expected_sources), timeout_ms_(timeout_ms) {
  if (expected_sources <= 0)
    throw ConfigError("coordinator needs a positive source count");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0)
    throw DataError(std::string("socket failed: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw DataError("bind to loopback port " + std::to_string(port) +
                    " failed: " + err);
  }
  if (::listen(listen_fd_, expected_sources) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw DataError("listen failed: " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Coordinator::~Coordinator() {
  for (int fd : fds_) ::close(fd);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void Coordinator::accept_sources() {
  struct Pending {
    int fd;
    HelloMsg hello;
  };
  std::vector<Pending> pending;
  pending.reserve(static_cast<std::size_t>(expected_));

  for (int i = 0; i < expected_; ++i) {
    pollfd pf{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&pf, 1, timeout_ms_);
    if (rc == 0) {
      for (const Pending& p : pending) ::close(p.fd);
      throw DataError("timed out waiting for client connections (" +
                      std::to_string(pending.size()) + " of " +
                      std::to_string(expected_) + " arrived)");
    }
    if (rc < 0) {
      if (errno == EINTR) { --i; continue; }
      throw DataError(std::string("poll failed: ") + std::strerror(errno));
    }
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0)
      throw DataError(std::string("accept failed: ") + std::strerror(errno));
    set_recv_timeout(fd, timeout_ms_);
    Message msg = recv_message(fd, "connecting client");
    if (!std::holds_alternative<HelloMsg>(msg)) {
      ::close(fd);
      throw DataError("expected a handshake message from a connecting client");
    }
    pending.push_back({fd, std::get<HelloMsg>(std::move(msg))});
  }

  std::sort(pending.begin(), pending.end(),
            [](const Pending& a, const Pending& b) {
              return a.hello.source_id < b.hello.source_id;
            });
  for (std::size_t i = 1; i < pending.size(); ++i) {
    if (pending[i].hello.source_id == pending[i - 1].hello.source_id)
      throw DataError("duplicate source id " +
                      std::to_string(pending[i].hello.source_id) +
                      " in handshake");
  }

  const Eigen::Index p = pending.front().hello.beta_prev.size();
  batches_seen_ = pending.front().hello.batches_seen;
  for (const Pending& c : pending) {
    if (c.hello.beta_prev.size() != p)
      throw DataError("clients disagree on the coefficient dimension");
    if (c.hello.batches_seen != batches_seen_)
      throw DataError("clients disagree on batches seen: source " +
                      std::to_string(c.hello.source_id) + " reports " +
                      std::to_string(c.hello.batches_seen) + ", source " +
                      std::to_string(pending.front().hello.source_id) +
                      " reports " + std::to_string(batches_seen_));
  }

  B_prev_.resize(p, static_cast<Eigen::Index>(pending.size()));
  fds_.reserve(pending.size());
  source_ids_.reserve(pending.size());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    fds_.push_back(pending[i].fd);
    source_ids_.push_back(pending[i].hello.source_id);
    B_prev_.col(static_cast<Eigen::Index>(i)) = pending[i].hello.beta_prev;
    WelcomeMsg w;
    w.rank = static_cast<std::int32_t>(i);
    w.n_sources = static_cast<std::int32_t>(pending.size());
    send_message(pending[i].fd, w,
                 "source " + std::to_string(pending[i].hello.source_id));
  }
}

void Coordinator::batch_start(int batch_index, double lambda1, double lambda2,
                              double step) {
  BatchStartMsg m;
  m.batch_index = batch_index;
  m.lambda1 = lambda1;
  m.lambda2 = lambda2;
  m.step = step;
  for (std::size_t i = 0; i < fds_.size(); ++i)
    send_message(fds_[i], m, "source " + std::to_string(source_ids_[i]));
}

std::vector<LocalReply> Coordinator::broadcast(
    int round, const Eigen::Ref<const Eigen::MatrixXd>& B) {
  GlobalBroadcastMsg g;
  g.round = round;
  g.B = B;
  for (std::size_t i = 0; i < fds_.size(); ++i)
    send_message(fds_[i], g, "source " + std::to_string(source_ids_[i]));

  std::vector<LocalReply> replies(fds_.size());
  for (std::size_t i = 0; i < fds_.size(); ++i) {
    const std::string who = "source " + std::to_string(source_ids_[i]);
    Message msg = recv_message(fds_[i], who);
    const auto* m = std::get_if<LocalUpdateMsg>(&msg);
    if (!m) throw DataError("expected a local update from " + who);
    if (m->source_id != source_ids_[i])
      throw DataError("local update from " + who + " claims source id " +
                      std::to_string(m->source_id));
    if (m->round != round)
      throw DataError("local update from " + who + " is for round " +
                      std::to_string(m->round) + ", expected " +
                      std::to_string(round));
    replies[i].beta_bar = m->beta_bar;
    replies[i].loss = m->loss;
    replies[i].lipschitz = m->lipschitz;
    replies[i].n_total = m->n_total;
  }
  return replies;
}

void Coordinator::finish_batch(const FitResult& fit) {
  ConvergedMsg m;
  m.fit = fit_to_bytes(fit);
  for (std::size_t i = 0; i < fds_.size(); ++i)
    send_message(fds_[i], m, "source " + std::to_string(source_ids_[i]));
  B_prev_ = fit.B_hat;
  ++batches_seen_;
}

std::vector<FitResult> coordinate_stream(
    Coordinator& coord, const FolConfig& cfg, int n_batches,
    const std::function<void(int batch_index, const FitResult& fit)>& on_batch) {
  if (n_batches <= 0)
    throw ConfigError("stream needs a positive batch count");
  std::vector<FitResult> fits;
  fits.reserve(static_cast<std::size_t>(n_batches));
  for (int i = 0; i < n_batches; ++i) {
    const int b = coord.batches_seen() + 1;
    FitOutput out = tune_rounds(coord, cfg, b, coord.initial_iterate());
    coord.finish_batch(out.result);
    if (on_batch) on_batch(b, out.result);
    fits.push_back(std::move(out.result));
  }
  return fits;
}

// ---------------------------------------------------------------------------
// Client.
// ---------------------------------------------------------------------------

ClientSession::ClientSession(const std::string& host, std::uint16_t port,
                             SourceState* state, Family fam, int timeout_ms)
    : state_(state), fam_(fam) {
  if (!state) throw ConfigError("client session needs a source state");
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0)
    throw DataError(std::string("socket failed: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    fd_ = -1;
    throw ConfigError("bad coordinator address: " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string err = std::strerror(errno);
    ::close(fd_);
    fd_ = -1;
    throw DataError("connect to " + host + ":" + std::to_string(port) +
                    " failed: " + err);
  }
  set_recv_timeout(fd_, timeout_ms);

  who_ = "coordinator";
  HelloMsg hello;
  hello.source_id = state->source_id;
  hello.batches_seen = state->batches_seen;
  hello.beta_prev = state->beta_prev;
  send_message(fd_, hello, who_);
  Message msg = recv_message(fd_, who_);
  const auto* w = std::get_if<WelcomeMsg>(&msg);
  if (!w) throw DataError("expected a handshake reply from the coordinator");
  rank_ = w->rank;
  n_sources_ = w->n_sources;
}

ClientSession::~ClientSession() {
  if (fd_ >= 0) ::close(fd_);
}

FitResult ClientSession::run_batch(const Batch& batch) {
  if (batch.n() == 0)
    throw ConfigError("source " + std::to_string(state_->source_id) +
                      " has an empty batch; batches must arrive synchronously");
  if (batch.p() != state_->p())
    throw DataError("batch width " + std::to_string(batch.p()) +
                    " does not match the model dimension " +
                    std::to_string(state_->p()));

  LocalSource local(state_, &batch, fam_);
  const int expected_index = state_->batches_seen + 1;
  while (true) {
    Message msg = recv_message(fd_, who_);
    if (const auto* m = std::get_if<BatchStartMsg>(&msg)) {
      if (m->batch_index != expected_index)
        throw DataError("coordinator announced batch " +
                        std::to_string(m->batch_index) + ", client is at batch " +
                        std::to_string(expected_index));
      local.batch_start(m->step);
    } else if (const auto* g = std::get_if<GlobalBroadcastMsg>(&msg)) {
      if (g->B.rows() != state_->p() || g->B.cols() != n_sources_)
        throw DataError("broadcast shape " + std::to_string(g->B.rows()) + "x" +
                        std::to_string(g->B.cols()) + " does not match p=" +
                        std::to_string(state_->p()) + ", K=" +
                        std::to_string(n_sources_));
      const LocalReply reply = local.on_broadcast(g->B.col(rank_));
      LocalUpdateMsg up;
      up.source_id = state_->source_id;
      up.round = g->round;
      up.beta_bar = reply.beta_bar;
      up.loss = reply.loss;
      up.lipschitz = reply.lipschitz;
      up.n_total = reply.n_total;
      send_message(fd_, up, who_);
    } else if (const auto* c = std::get_if<ConvergedMsg>(&msg)) {
      FitResult fit = fit_from_bytes(c->fit);
      if (fit.B_hat.rows() != state_->p() || fit.B_hat.cols() != n_sources_)
        throw DataError("converged fit shape does not match this session");
      absorb_batch(*state_, fam_, fit.B_hat.col(rank_), batch);
      return fit;
    } else {
      throw DataError("unexpected message from the coordinator");
    }
  }
}

}  // namespace fol
