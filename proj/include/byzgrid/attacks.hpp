#pragma once

// Correlated false-data injection on in-flight packets that carry line flows:
// l -> l + k, P -> P + r k, Q -> Q + x k.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "byzgrid/errors.hpp"
#include "byzgrid/netmodel.hpp"
#include "byzgrid/protocol.hpp"

namespace byzgrid {

enum class AttackKind { StaticCorrelated, DynamicNoise };

struct AttackScenario {
  AttackKind kind = AttackKind::StaticCorrelated;
  std::vector<std::pair<int, int>> targets;  // (sender, receiver)
  double magnitude = 200.0;                  // static shift
  double lo = 0.0, hi = 3.0;                 // dynamic range
  int period = 5;
  std::uint64_t seed = 1;
  int start_iter = 40;
  Stage stage = Stage::X;

  void validate() const {
    if (period < 1) throw ConfigError("attack period must be at least 1");
    if (lo > hi) throw ConfigError("attack range has lo > hi");
    if (targets.empty()) throw ConfigError("attack needs at least one target edge");
  }
  bool active(int k) const { return k >= start_iter && (k - start_iter) % period == 0; }
  bool targets_edge(int sender, int receiver) const {
    for (auto [s, r] : targets)
      if (s == sender && r == receiver) return true;
    return false;
  }
};

/// Injected shift for a packet; a pure function of (seed, iteration, edge).
inline double injection_size(const AttackScenario& a, int k, int sender, int receiver) {
  if (a.kind == AttackKind::StaticCorrelated) return a.magnitude;
  std::seed_seq seq{static_cast<std::uint32_t>(a.seed), static_cast<std::uint32_t>(a.seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(sender),
                    static_cast<std::uint32_t>(receiver)};
  std::mt19937_64 rng(seq);
  return std::uniform_real_distribution<double>(a.lo, a.hi)(rng);
}

/// Corrupts the flow fields of `packet` if the scenario fires on it at
/// iteration k. `line` is the line whose flows the packet carries.
inline SharedPacket corrupt(const SharedPacket& packet, const AttackScenario& a, int k, const LineRecord& line) {
  if (packet.stage != a.stage || !a.active(k) || !a.targets_edge(packet.sender, packet.receiver)) return packet;
  SharedPacket out = packet;
  PacketField* P = out.find(var::P);
  PacketField* Q = out.find(var::Q);
  PacketField* L = out.find(var::l);
  if (!P || !Q || !L) throw FieldError("targeted packet carries no line-flow fields");
  const double kappa = injection_size(a, k, packet.sender, packet.receiver);
  L->value += kappa;
  P->value += line.r * kappa;
  Q->value += line.x * kappa;
  return out;
}

/// True when the corrupted flows leave the receiving side's balance terms
/// P - r l and Q - x l unchanged, so the balance rows cannot expose them.
inline bool stealthiness_check(const SharedPacket& original, const SharedPacket& corrupted, const LineRecord& line,
                               double tol = 1e-9) {
  auto val = [](const SharedPacket& p, int k) {
    const PacketField* f = p.find(k);
    if (!f) throw FieldError("packet carries no line-flow fields");
    return f->value;
  };
  const double dP = (val(corrupted, var::P) - line.r * val(corrupted, var::l)) -
                    (val(original, var::P) - line.r * val(original, var::l));
  const double dQ = (val(corrupted, var::Q) - line.x * val(corrupted, var::l)) -
                    (val(original, var::Q) - line.x * val(original, var::l));
  const double scale = 1.0 + std::abs(val(original, var::P)) + std::abs(val(original, var::Q));
  return std::abs(dP) <= tol * scale && std::abs(dQ) <= tol * scale;
}

}  // namespace byzgrid
