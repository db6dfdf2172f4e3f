#pragma once

// Per-agent online anomaly detector: Hankel embedding of a sliding window of
// shared data, Tucker factors with ARMA-driven cores and a physics penalty,
// one-step forecasting, flagging and mitigation.

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/arma.hpp"
#include "byzgrid/errors.hpp"
#include "byzgrid/market.hpp"
#include "byzgrid/protocol.hpp"
#include "byzgrid/tensorops.hpp"

namespace byzgrid {

enum class ErrorUpdate {
  Stationary,  // exact minimiser of the objective in the error terms
  Verbatim     // the printed closed form, kept for comparison
};

struct DetectorHyper {
  int p = 2, d = 2, q = 1;
  int H = 10;    // maximum sweeps per fit
  int R = 4;     // Tucker rank cap per mode
  int tau = 4;   // embedding length
  double xi = 1e-4;
  bool physics = true;
  ErrorUpdate error_update = ErrorUpdate::Stationary;
};

/// Channel of a detector window: a received field (from `peer`) or one of the
/// agent's own values.
struct Channel {
  bool received = true;
  int peer = 0;
  VarRef var;
};

struct ChannelLayout {
  Stage stage = Stage::X;
  std::vector<Channel> channels;  // received first: parent, children, partners; then self
  int n_received = 0;
  Eigen::MatrixXd W;              // channels x relations; clean data u satisfy W'u = 0
};

struct StreamWindow {
  Eigen::MatrixXd data;  // channels x L, oldest column first
};

struct SpatialRelation {
  Eigen::MatrixXd W;
};

/// x-stage: the received fields are the agent's copies of neighbour variables;
/// the relations are the agent's coupling rows that touch at least one of them.
/// y-stage: the received fields are neighbours' copies of the agent's own
/// variables; each must equal the agent's own value.
inline ChannelLayout build_channel_layout(const AgentProblem& a, Stage stage) {
  ChannelLayout L;
  L.stage = stage;
  if (stage == Stage::X) {
    std::vector<int> recv_cols, rows, self_idx;
    for (int c = 0; c < static_cast<int>(a.y_layout.size()); ++c)
      if (a.y_layout[c].owner != a.id) recv_cols.push_back(c);
    for (Eigen::Index r = 0; r < a.coupling.rows(); ++r) {
      bool touches = false;
      for (int c : recv_cols) touches |= a.coupling(r, c) != 0;
      if (touches) rows.push_back(static_cast<int>(r));
    }
    for (int k = 0; k < a.dim(); ++k) {
      const int c = a.y_index({a.id, k});
      bool used = false;
      for (int r : rows) used |= a.coupling(r, c) != 0;
      if (used) self_idx.push_back(k);
    }
    std::vector<int> cols;
    for (int c : recv_cols) {
      L.channels.push_back({true, a.y_layout[c].owner, a.y_layout[c]});
      cols.push_back(c);
    }
    for (int k : self_idx) {
      L.channels.push_back({false, a.id, {a.id, k}});
      cols.push_back(a.y_index({a.id, k}));
    }
    L.n_received = static_cast<int>(recv_cols.size());
    L.W.resize(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t ch = 0; ch < cols.size(); ++ch)
      for (std::size_t r = 0; r < rows.size(); ++r) L.W(ch, r) = a.coupling(rows[r], cols[ch]);
    return L;
  }
  if (a.parent)
    for (int k : {var::P, var::Q, var::l}) L.channels.push_back({true, *a.parent, {a.id, k}});
  for (int j : a.children) L.channels.push_back({true, j, {a.id, var::v}});
  for (int s : a.partners) L.channels.push_back({true, s, {a.id, a.trade_index(s)}});
  L.n_received = static_cast<int>(L.channels.size());
  std::vector<int> own;
  for (const auto& c : L.channels) own.push_back(c.var.index);
  std::sort(own.begin(), own.end());
  own.erase(std::unique(own.begin(), own.end()), own.end());
  for (int k : own) L.channels.push_back({false, a.id, {a.id, k}});
  L.W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L.channels.size()), L.n_received);
  for (int r = 0; r < L.n_received; ++r) {
    L.W(r, r) = 1.0;
    const auto self = std::find_if(L.channels.begin() + L.n_received, L.channels.end(),
                                   [&](const Channel& c) { return c.var == L.channels[r].var; });
    L.W(self - L.channels.begin(), r) = -1.0;
  }
  return L;
}

inline SpatialRelation build_spatial_relation(const AgentProblem& a, Stage stage = Stage::X) {
  return {build_channel_layout(a, stage).W};
}

/// Last L slices of the history as a channels x L window.
inline StreamWindow build_window(const std::deque<Eigen::VectorXd>& history, int L) {
  if (L < 1 || static_cast<int>(history.size()) < L) throw InsufficientHistory("window not yet full");
  const Eigen::Index I = history.back().size();
  StreamWindow w{Eigen::MatrixXd(I, L)};
  const std::size_t first = history.size() - static_cast<std::size_t>(L);
  for (int c = 0; c < L; ++c) w.data.col(c) = history[first + c];
  return w;
}

struct DetectorModel {
  DetectorHyper hyper;
  Eigen::MatrixXd W;
  Eigen::MatrixXd A1, A2;               // channels x R1, tau x R2
  std::vector<Eigen::MatrixXd> cores;   // differenced cores, R1 x R2
  std::vector<Eigen::MatrixXd> errors;  // q shared error cores
  Eigen::VectorXd psi, theta;
  std::vector<Eigen::MatrixXd> hankel;  // level Hankel slices, channels x tau
  bool fitted = false;
  int sweeps = 0;
  std::vector<double> objective_trace;  // objective after each sweep of the last fit

  DetectorModel() = default;
  DetectorModel(const DetectorHyper& h, Eigen::MatrixXd w) : hyper(h), W(std::move(w)) {}
};

namespace detail {

inline std::vector<Eigen::MatrixXd> hankel_slices(const Eigen::MatrixXd& window, int tau) {
  const auto h = tensor::mdt(tensor::DenseTensor::from_matrix(window), {tau});
  const int I = h.dims[0], kh = h.dims[2];
  std::vector<Eigen::MatrixXd> out(kh, Eigen::MatrixXd(I, tau));
  for (int i = 0; i < I; ++i)
    for (int a = 0; a < tau; ++a)
      for (int b = 0; b < kh; ++b) out[b](i, a) = h.data[(static_cast<std::size_t>(i) * tau + a) * kh + b];
  return out;
}

inline Eigen::MatrixXd ar_term(const std::vector<Eigen::MatrixXd>& G, const DetectorModel& m, int s) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(G[s].rows(), G[s].cols());
  for (int k = 1; k <= m.hyper.p; ++k) f += m.psi(k - 1) * G[s - k];
  return f;
}

inline Eigen::MatrixXd ma_term(const DetectorModel& m) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(m.A1.cols(), m.A2.cols());
  for (int k = 1; k <= m.hyper.q; ++k) f += m.theta(k - 1) * m.errors[k - 1];
  return f;
}

inline Eigen::MatrixXd physics_system(const DetectorModel& m) {
  const Eigen::Index r = m.A1.cols();
  Eigen::MatrixXd S = 2.0 * Eigen::MatrixXd::Identity(r, r);
  if (m.hyper.physics && m.W.cols() > 0) {
    const Eigen::MatrixXd K = m.A1.transpose() * m.W;
    S += K * K.transpose();
  }
  return S;
}

}  // namespace detail

/// Objective of one fit over slices s = p+q .. T-1 of the differenced data:
/// 1/2 ||G - A1' D A2||^2 + 1/2 ||G - AR + MA||^2 + 1/2 ||W' A1 G||^2.
inline double fit_objective(const DetectorModel& m, const std::vector<Eigen::MatrixXd>& diffs,
                            const std::vector<Eigen::MatrixXd>& G) {
  const int start = m.hyper.p + m.hyper.q;
  const Eigen::MatrixXd ma = detail::ma_term(m);
  double f = 0;
  for (int s = start; s < static_cast<int>(G.size()); ++s) {
    f += 0.5 * (G[s] - m.A1.transpose() * diffs[s] * m.A2).squaredNorm();
    f += 0.5 * (G[s] - detail::ar_term(G, m, s) + ma).squaredNorm();
    if (m.hyper.physics && m.W.cols() > 0) f += 0.5 * (m.W.transpose() * m.A1 * G[s]).squaredNorm();
  }
  return f;
}

/// Core step: G_s = (2I + A1'WW'A1)^{-1} (A1' D_s A2 + AR_s - MA) for every
/// slice with a full lag history, lags taken from the incoming cores.
inline std::vector<Eigen::MatrixXd> core_update(const DetectorModel& m, const std::vector<Eigen::MatrixXd>& diffs,
                                                const std::vector<Eigen::MatrixXd>& G) {
  const int start = m.hyper.p + m.hyper.q;
  const Eigen::LLT<Eigen::MatrixXd> llt(detail::physics_system(m));
  if (llt.info() != Eigen::Success) throw NumericalError("core update system is singular");
  const Eigen::MatrixXd ma = detail::ma_term(m);
  std::vector<Eigen::MatrixXd> out(G.size());
  for (int s = 0; s < static_cast<int>(G.size()); ++s) {
    const Eigen::MatrixXd C = m.A1.transpose() * diffs[s] * m.A2;
    out[s] = s < start ? C : llt.solve(C + detail::ar_term(G, m, s) - ma).eval();
  }
  return out;
}

/// Error step. Stationary form for error m:
/// eps_m = -(sum_s (G_s - AR_s) + T' sum_{m' != m} theta_m' eps_m') / (T' theta_m).
inline std::vector<Eigen::MatrixXd> error_update(const DetectorModel& m, const std::vector<Eigen::MatrixXd>& G,
                                                 int k_hat) {
  const int start = m.hyper.p + m.hyper.q;
  const int Tp = static_cast<int>(G.size()) - start;
  Eigen::MatrixXd resid = Eigen::MatrixXd::Zero(m.A1.cols(), m.A2.cols());
  for (int s = start; s < static_cast<int>(G.size()); ++s) resid += G[s] - detail::ar_term(G, m, s);
  std::vector<Eigen::MatrixXd> eps = m.errors;
  for (int k = 0; k < m.hyper.q; ++k) {
    const double th = m.theta(k);
    if (std::abs(th) < 1e-8) {
      eps[k].setZero();
      continue;
    }
    Eigen::MatrixXd others = Eigen::MatrixXd::Zero(resid.rows(), resid.cols());
    for (int j = 0; j < m.hyper.q; ++j)
      if (j != k) others += m.theta(j) * eps[j];
    if (m.hyper.error_update == ErrorUpdate::Stationary) {
      eps[k] = -(resid + Tp * others) / (Tp * th);
    } else {
      const double denom = (m.hyper.p + m.hyper.q + m.hyper.d + 1 - k_hat) * th;
      eps[k] = (resid + Tp * (others + th * eps[k])) / denom;
    }
  }
  return eps;
}

/// Factor step for mode n (0: channels, 1: embedding): Procrustes solution of
/// max sum_s trace(A' D_s^(n) A^(-n)' G_s^(n)').
inline Eigen::MatrixXd factor_update(const DetectorModel& m, const std::vector<Eigen::MatrixXd>& diffs,
                                     const std::vector<Eigen::MatrixXd>& G, int n) {
  const int start = m.hyper.p + m.hyper.q;
  Eigen::MatrixXd acc = n == 0 ? Eigen::MatrixXd::Zero(m.A1.rows(), m.A1.cols())
                               : Eigen::MatrixXd::Zero(m.A2.rows(), m.A2.cols());
  for (int s = start; s < static_cast<int>(G.size()); ++s) {
    if (n == 0)
      acc += diffs[s] * m.A2 * G[s].transpose();
    else
      acc += diffs[s].transpose() * m.A1 * G[s];
  }
  if (acc.cwiseAbs().maxCoeff() == 0) return n == 0 ? m.A1 : m.A2;
  return tensor::procrustes_factor(acc);
}

/// One online fit on a full window, warm-started from the previous model.
inline DetectorModel fit_update(DetectorModel m, const StreamWindow& window) {
  const auto& h = m.hyper;
  const Eigen::Index I = window.data.rows();
  const int L = static_cast<int>(window.data.cols());
  if (h.tau < 1 || h.tau > L) throw InsufficientHistory("embedding longer than the window");
  const int k_hat = L - h.tau + 1;
  if (k_hat < h.p + h.d + h.q + 1) throw InsufficientHistory("window too short for the ARIMA order");
  if (m.W.rows() != 0 && m.W.rows() != I) throw DimError("spatial relation does not match the channels");

  m.hankel = detail::hankel_slices(window.data, h.tau);
  const std::vector<Eigen::MatrixXd> diffs = tensor::difference(m.hankel, h.d);
  const int T = static_cast<int>(diffs.size());
  const int R1 = std::min<int>(h.R, static_cast<int>(I)), R2 = std::min(h.R, h.tau);

  if (!m.fitted || m.A1.rows() != I || m.A1.cols() != R1 || m.A2.rows() != h.tau || m.A2.cols() != R2) {
    Eigen::MatrixXd wide(I, static_cast<Eigen::Index>(T) * h.tau), tall(h.tau, static_cast<Eigen::Index>(T) * I);
    for (int s = 0; s < T; ++s) {
      wide.middleCols(static_cast<Eigen::Index>(s) * h.tau, h.tau) = diffs[s];
      tall.middleCols(static_cast<Eigen::Index>(s) * I, I) = diffs[s].transpose();
    }
    m.A1 = tensor::leading_left_vectors(wide, R1);
    m.A2 = tensor::leading_left_vectors(tall, R2);
    m.psi = Eigen::VectorXd::Zero(h.p);
    m.theta = Eigen::VectorXd::Zero(h.q);
    m.errors.assign(h.q, Eigen::MatrixXd::Zero(R1, R2));
  }

  std::vector<Eigen::MatrixXd> G(T);
  m.objective_trace.clear();
  m.sweeps = 0;
  for (int sweep = 1; sweep <= h.H; ++sweep) {
    const Eigen::MatrixXd A1o = m.A1, A2o = m.A2;
    for (int s = 0; s < T; ++s) G[s] = m.A1.transpose() * diffs[s] * m.A2;

    std::vector<Eigen::VectorXd> vec(T);
    bool any = false;
    for (int s = 0; s < T; ++s) {
      vec[s] = Eigen::Map<const Eigen::VectorXd>(G[s].data(), G[s].size());
      any |= vec[s].cwiseAbs().maxCoeff() > 0;
    }
    if (any) {
      const ArmaCoefficients c = estimate_arma(vec, h.p, h.q, MomentSolve::MinimumNorm);
      m.psi = c.psi;
      m.theta = c.theta;
      m.errors = error_update(m, G, k_hat);
    }

    for (int n = 0; n < 2; ++n) {
      G = core_update(m, diffs, G);
      m.errors = error_update(m, G, k_hat);
      if (n == 0)
        m.A1 = factor_update(m, diffs, G, 0);
      else
        m.A2 = factor_update(m, diffs, G, 1);
    }
    m.objective_trace.push_back(fit_objective(m, diffs, G));
    m.sweeps = sweep;
    const double change = (m.A1 - A1o).squaredNorm() + (m.A2 - A2o).squaredNorm();
    if (change <= h.xi * (A1o.squaredNorm() + A2o.squaredNorm())) break;
  }
  m.cores = std::move(G);
  m.fitted = true;
  return m;
}

/// One-step-ahead prediction of every channel.
inline Eigen::VectorXd forecast(const DetectorModel& m) {
  if (!m.fitted) throw InsufficientHistory("model has not been fitted");
  const auto& h = m.hyper;
  const int T = static_cast<int>(m.cores.size());
  Eigen::MatrixXd g_next = -detail::ma_term(m);
  for (int k = 1; k <= h.p; ++k) g_next += m.psi(k - 1) * m.cores[T - k];
  const Eigen::MatrixXd d_next = m.A1 * g_next * m.A2.transpose();
  const Eigen::MatrixXd level =
      tensor::undifference_step<Eigen::MatrixXd>(d_next, std::span<const Eigen::MatrixXd>(m.hankel), h.d);

  const int kh = static_cast<int>(m.hankel.size()) + 1;
  const int I = static_cast<int>(level.rows());
  tensor::DenseTensor blk({I, h.tau, kh});
  for (int i = 0; i < I; ++i)
    for (int a = 0; a < h.tau; ++a)
      for (int b = 0; b < kh; ++b)
        blk.data[(static_cast<std::size_t>(i) * h.tau + a) * kh + b] = b + 1 < kh ? m.hankel[b](i, a) : level(i, a);
  const tensor::DenseTensor series = tensor::inverse_mdt(blk, {h.tau});
  const int len = series.dims[1];
  Eigen::VectorXd out(I);
  for (int i = 0; i < I; ++i) out(i) = series.data[static_cast<std::size_t>(i) * len + len - 1];
  return out;
}

/// 0 when the received vector is within phi of the prediction, 1 otherwise.
inline int detect(const Eigen::VectorXd& received, const Eigen::VectorXd& predicted, double phi) {
  if (received.size() != predicted.size()) throw DimError("channel layouts differ");
  return (received - predicted).norm() <= phi ? 0 : 1;
}

enum class DataSource { Received, Predicted, HeldPrevious };

inline const char* to_string(DataSource s) {
  switch (s) {
    case DataSource::Received: return "received";
    case DataSource::Predicted: return "predicted";
    default: return "held";
  }
}

struct DetectionOutcome {
  int gamma = 0;
  Eigen::VectorXd chosen;
  DataSource source = DataSource::Received;
};

/// Replacement for a flagged packet: the prediction when it moves no further
/// from the last accepted value than lambda times the last accepted step,
/// otherwise the last accepted value.
inline DetectionOutcome mitigate(const Eigen::VectorXd& predicted, const Eigen::VectorXd& previous,
                                 const Eigen::VectorXd& before_previous, double lambda) {
  if ((predicted - previous).norm() <= lambda * (previous - before_previous).norm())
    return {1, predicted, DataSource::Predicted};
  return {1, previous, DataSource::HeldPrevious};
}

}  // namespace byzgrid
