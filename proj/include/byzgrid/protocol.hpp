#pragma once

// Messages exchanged between neighbouring agents on the simulated bus.

#include <string>
#include <vector>

#include "byzgrid/market.hpp"

namespace byzgrid {

enum class Stage { X, Y };

inline const char* to_string(Stage s) { return s == Stage::X ? "x" : "y"; }

enum class EdgeKind { ParentToChild, ChildToParent, Partner };

/// One scalar of a packet: the value of variable `var` (or a copy of it), or
/// the dual attached to that copy.
struct PacketField {
  VarRef var;
  bool dual = false;
  double value = 0;

  std::string name() const {
    std::string n = var::name(var.index);
    return dual ? "mu_" + n : n;
  }
};

struct SharedPacket {
  int sender = 0;
  int receiver = 0;
  Stage stage = Stage::X;
  EdgeKind edge = EdgeKind::ChildToParent;
  int iteration = 0;
  std::vector<PacketField> payload;

  /// Value field for variable index `k` of the given owner, or nullptr.
  PacketField* find(int k, bool dual = false) {
    for (auto& f : payload)
      if (f.var.index == k && f.dual == dual) return &f;
    return nullptr;
  }
  const PacketField* find(int k, bool dual = false) const {
    for (const auto& f : payload)
      if (f.var.index == k && f.dual == dual) return &f;
    return nullptr;
  }
};

}  // namespace byzgrid
