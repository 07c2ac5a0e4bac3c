#include "fol/renewable.hpp"

#include <fstream>

#include "fol/errors.hpp"
#include "fol/wire.hpp"

namespace fol {

SourceState SourceState::fresh(int source_id, Eigen::Index p) {
  SourceState st;
  st.source_id = source_id;
  st.beta_prev = Eigen::VectorXd::Zero(p);
  st.J_acc = Eigen::MatrixXd::Zero(p, p);
  return st;
}

double approx_loglik(const SourceState& state, Family fam,
                     const Eigen::Ref<const Eigen::VectorXd>& beta,
                     const Batch& batch) {
  const Eigen::VectorXd d = beta - state.beta_prev;
  return 0.5 * d.dot(state.J_acc * d) + log_likelihood(fam, beta, batch);
}

Eigen::VectorXd surrogate_score(const SourceState& state, Family fam,
                                const Eigen::Ref<const Eigen::VectorXd>& beta,
                                const Batch& batch) {
  return score(fam, beta, batch) + state.J_acc * (beta - state.beta_prev);
}

Eigen::VectorXd approx_gradient(const SourceState& state, Family fam,
                                const Eigen::Ref<const Eigen::VectorXd>& beta,
                                const Batch& batch, double n_total) {
  return surrogate_score(state, fam, beta, batch) / -n_total;
}

void absorb_batch(SourceState& state, Family fam,
                  const Eigen::Ref<const Eigen::VectorXd>& beta_hat,
                  const Batch& batch) {
  // Symmetrize so the upper-triangle checkpoint encoding is lossless; the
  // product form is symmetric only up to rounding.
  const Eigen::MatrixXd H = hessian(fam, beta_hat, batch);
  state.J_acc += 0.5 * (H + H.transpose());
  state.beta_prev = beta_hat;
  state.n_cum += static_cast<std::uint64_t>(batch.n());
  state.batches_seen += 1;
}

namespace {

constexpr char kMagic[4] = {'F', 'O', 'L', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

using wire::put_f64;
using wire::put_u32;
using wire::put_u64;

}  // namespace

std::vector<std::uint8_t> state_to_bytes(const SourceState& state) {
  const Eigen::Index p = state.p();
  std::vector<std::uint8_t> out;
  out.reserve(28 + 8 * (p + p * (p + 1) / 2));
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(state.source_id));
  put_u32(out, static_cast<std::uint32_t>(p));
  put_u32(out, static_cast<std::uint32_t>(state.batches_seen));
  put_u64(out, state.n_cum);
  for (Eigen::Index j = 0; j < p; ++j) put_f64(out, state.beta_prev[j]);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i; j < p; ++j) put_f64(out, state.J_acc(i, j));
  return out;
}

SourceState state_from_bytes(const std::vector<std::uint8_t>& bytes) {
  wire::Reader r{bytes, "state checkpoint"};
  for (char c : kMagic)
    if (r.u8() != static_cast<std::uint8_t>(c))
      throw DataError("bad state checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError("unsupported state checkpoint version " + std::to_string(version));
  SourceState st;
  st.source_id = static_cast<int>(r.u32());
  const Eigen::Index p = static_cast<Eigen::Index>(r.u32());
  st.batches_seen = static_cast<int>(r.u32());
  st.n_cum = r.u64();
  st.beta_prev.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) st.beta_prev[j] = r.f64();
  st.J_acc.resize(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i; j < p; ++j) {
      st.J_acc(i, j) = r.f64();
      st.J_acc(j, i) = st.J_acc(i, j);
    }
  r.expect_done();
  return st;
}

void save_state(const SourceState& state, const std::string& path) {
  const std::vector<std::uint8_t> bytes = state_to_bytes(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

SourceState load_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return state_from_bytes(bytes);
}

}  // namespace fol
