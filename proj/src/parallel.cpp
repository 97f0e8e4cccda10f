#include "mmfuse/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <string_view>

namespace mmfuse {

std::size_t workers_from_env(std::size_t fallback) {
  const char* raw = std::getenv("MMFUSE_WORKERS");
  if (raw == nullptr) return fallback;
  const std::string_view text(raw);
  std::size_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || value == 0) return fallback;
  return value;
}

}  // namespace mmfuse
