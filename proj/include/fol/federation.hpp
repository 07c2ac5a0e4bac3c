#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "fol/glm.hpp"
#include "fol/renewable.hpp"
#include "fol/solver.hpp"

namespace fol {

// ---------------------------------------------------------------------------
// Message model. One coordinator drives K clients through synchronous rounds;
// every payload is either a model vector/matrix or a summary scalar, so the
// schema cannot carry rows of (X, y) at any batch size.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kProtocolVersion = 1;

// Client introduces itself after connecting. beta_prev and batches_seen let a
// coordinator resume a stream against already-advanced client states.
struct HelloMsg {
  std::int32_t source_id = 0;
  std::int32_t batches_seen = 0;
  Eigen::VectorXd beta_prev;
};

// Coordinator's handshake reply: the client's column rank among the K
// registered sources (ranks follow ascending source_id).
struct WelcomeMsg {
  std::int32_t rank = 0;
  std::int32_t n_sources = 0;
};

// Announces the batch and penalty levels for the rounds that follow. step is
// the per-sample step the client applies in Step I (learning rate divided by
// the global cumulative sample count, which clients never see).
struct BatchStartMsg {
  std::int32_t batch_index = 0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double step = 0.0;
};

struct GlobalBroadcastMsg {
  std::int32_t round = 0;
  Eigen::MatrixXd B;  // p x K, column k belongs to the rank-k source
};

struct LocalUpdateMsg {
  std::int32_t source_id = 0;
  std::int32_t round = 0;
  Eigen::VectorXd beta_bar;
  double loss = 0.0;
  double lipschitz = 0.0;
  std::uint64_t n_total = 0;
};

// Ends a batch: the tuned fit every client should absorb.
struct ConvergedMsg {
  std::vector<std::uint8_t> fit;  // fit_to_bytes payload
};

using Message = std::variant<HelloMsg, WelcomeMsg, BatchStartMsg,
                             GlobalBroadcastMsg, LocalUpdateMsg, ConvergedMsg>;

// Payload encoding: protocol version u32, variant tag u8, fields in declared
// order (integers and doubles little-endian). Throws DataError on truncated,
// trailing, unknown-tag, or version-mismatched input.
std::vector<std::uint8_t> encode_message(const Message& msg);
Message decode_message(const std::vector<std::uint8_t>& payload);

// ---------------------------------------------------------------------------
// Framed TCP loopback transport: 4-byte big-endian length, then the payload.
// `who` names the peer in error messages. recv_frame throws DataError on
// timeout ("timed out waiting for <who>"), EOF, or oversized frames.
// ---------------------------------------------------------------------------

void send_frame(int fd, const std::vector<std::uint8_t>& payload,
                const std::string& who);
std::vector<std::uint8_t> recv_frame(int fd, const std::string& who);

void send_message(int fd, const Message& msg, const std::string& who);
Message recv_message(int fd, const std::string& who);

// ---------------------------------------------------------------------------
// Coordinator: binds a loopback port, registers K clients by handshake, and
// then serves as the RoundBackend for fit_rounds/tune_rounds. Replies are
// returned in rank order, so the arithmetic matches InProcessBackend bit for
// bit. A client that misses the receive deadline aborts the round with a
// DataError naming its source id.
// ---------------------------------------------------------------------------

class Coordinator final : public RoundBackend {
 public:
  // port 0 binds an ephemeral port (see port()). timeout_ms bounds each
  // blocking accept/receive.
  Coordinator(std::uint16_t port, int expected_sources, int timeout_ms = 30000);
  ~Coordinator() override;
  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  std::uint16_t port() const { return port_; }

  // Blocks until all expected clients have said Hello; replies with ranks.
  // Requires every client to report the same batches_seen.
  void accept_sources();

  // State reported at the handshake, for resuming a stream.
  int batches_seen() const { return batches_seen_; }
  const Eigen::MatrixXd& initial_iterate() const { return B_prev_; }

  int K() const override { return static_cast<int>(fds_.size()); }
  void batch_start(int batch_index, double lambda1, double lambda2,
                   double step) override;
  std::vector<LocalReply> broadcast(
      int round, const Eigen::Ref<const Eigen::MatrixXd>& B) override;

  // Closes the batch: sends the fit to every client and adopts its columns as
  // the next batch's initial iterate.
  void finish_batch(const FitResult& fit);

 private:
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  int expected_ = 0;
  int timeout_ms_ = 0;
  std::vector<int> fds_;          // rank-ordered client connections
  std::vector<int> source_ids_;   // rank -> source id
  int batches_seen_ = 0;
  Eigen::MatrixXd B_prev_;
};

// Tunes one batch per stream step over the coordinator's rounds, finishing
// each with a Converged message. Returns one FitResult per batch; on_batch
// (if set) observes each as it completes. batch numbering continues from the
// handshake state, so a resumed coordinator picks up where the clients are.
std::vector<FitResult> coordinate_stream(
    Coordinator& coord, const FolConfig& cfg, int n_batches,
    const std::function<void(int batch_index, const FitResult& fit)>& on_batch =
        {});

// ---------------------------------------------------------------------------
// Client: owns one SourceState and serves rounds for one batch at a time.
// run_batch computes Step-I replies until the coordinator's Converged arrives,
// absorbs the fitted column into the state, and returns the fit.
// ---------------------------------------------------------------------------

class ClientSession {
 public:
  ClientSession(const std::string& host, std::uint16_t port, SourceState* state,
                Family fam, int timeout_ms = 30000);
  ~ClientSession();
  ClientSession(const ClientSession&) = delete;
  ClientSession& operator=(const ClientSession&) = delete;

  int rank() const { return rank_; }
  int n_sources() const { return n_sources_; }

  FitResult run_batch(const Batch& batch);

 private:
  int fd_ = -1;
  SourceState* state_;
  Family fam_;
  int rank_ = 0;
  int n_sources_ = 0;
  std::string who_;
};

}  // namespace fol
