#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <optional>
#include <string_view>

namespace mmfuse {

inline constexpr std::size_t kModalityCount = 4;

enum class Modality : std::size_t { antibody = 0, cytokine = 1, cell = 2, gene = 3 };

inline constexpr std::array<Modality, kModalityCount> kAllModalities{Modality::antibody, Modality::cytokine,
                                                                     Modality::cell, Modality::gene};

inline constexpr std::array<std::string_view, kModalityCount> kModalityNames{"antibody", "cytokine", "cell", "gene"};

// Bit m set <=> modality m observed (or retained after modality dropout).
using ModalityMask = std::bitset<kModalityCount>;

inline constexpr std::size_t index(Modality m) noexcept { return static_cast<std::size_t>(m); }
inline constexpr std::string_view name(Modality m) noexcept { return kModalityNames[index(m)]; }

inline std::optional<Modality> parse_modality(std::string_view text) {
  for (Modality m : kAllModalities) {
    if (name(m) == text) return m;
  }
  return std::nullopt;
}

inline ModalityMask full_mask() { return ModalityMask{}.set(); }

}  // namespace mmfuse
