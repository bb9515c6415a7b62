#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "evadroid/abstraction.hpp"

namespace evadroid {

/// Dense square grid indexed by (caller state, callee state).
template <typename T>
class SquareGrid {
 public:
  SquareGrid() = default;
  explicit SquareGrid(std::size_t states, T fill = T{})
      : states_(states), cells_(states * states, fill) {}

  std::size_t states() const { return states_; }
  std::size_t size() const { return cells_.size(); }

  T& operator()(StateId g, StateId i) { return cells_[g * states_ + i]; }
  const T& operator()(StateId g, StateId i) const { return cells_[g * states_ + i]; }
  T& operator[](std::size_t flat) { return cells_[flat]; }
  const T& operator[](std::size_t flat) const { return cells_[flat]; }

  T row_sum(StateId g) const {
    auto first = cells_.begin() + static_cast<std::ptrdiff_t>(g * states_);
    return std::accumulate(first, first + static_cast<std::ptrdiff_t>(states_), T{});
  }
  T total() const { return std::accumulate(cells_.begin(), cells_.end(), T{}); }

  const std::vector<T>& cells() const { return cells_; }
  std::vector<T>& cells() { return cells_; }

  bool operator==(const SquareGrid&) const = default;

 private:
  std::size_t states_ = 0;
  std::vector<T> cells_;
};

using CountGrid = SquareGrid<std::int64_t>;

/// Feature-space perturbation: integer call additions per (caller, callee)
/// cell, or a set of binary features flipped from 0 to 1.
struct PerturbationPlan {
  enum class Kind { CallAdditions, BitFlips };

  Kind kind = Kind::CallAdditions;
  CountGrid call_additions;
  std::vector<std::size_t> bit_flips;

  static PerturbationPlan additions(CountGrid omega) {
    for (auto v : omega.cells()) {
      if (v < 0) throw std::invalid_argument("call additions must be non-negative");
    }
    return {Kind::CallAdditions, std::move(omega), {}};
  }
  static PerturbationPlan flips(std::vector<std::size_t> ids) {
    return {Kind::BitFlips, {}, std::move(ids)};
  }

  bool empty() const {
    return kind == Kind::CallAdditions ? call_additions.total() == 0 : bit_flips.empty();
  }
  /// Total added calls or flipped bits.
  std::int64_t distortion() const {
    return kind == Kind::CallAdditions ? call_additions.total()
                                       : static_cast<std::int64_t>(bit_flips.size());
  }
};

}  // namespace evadroid
