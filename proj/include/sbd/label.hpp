#pragma once

#include <cstdint>
#include <string_view>

namespace sbd {

/// Per-word class: B when the word precedes a sentence boundary.
/// The numeric value is the column index in probability matrices.
enum class Label : std::uint8_t { NB = 0, B = 1 };

inline constexpr std::size_t kNumClasses = 2;

inline constexpr std::string_view to_string(Label l) { return l == Label::B ? "B" : "NB"; }

}  // namespace sbd
