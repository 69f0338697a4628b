#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace mf3d {

using WarningSink = std::function<void(const std::string&)>;

namespace detail {
struct WarningState {
  std::mutex mu;
  WarningSink sink;
};
inline WarningState& warning_state() {
  static WarningState s;
  return s;
}
}  // namespace detail

/// Replaces the warning destination (default: stderr). Pass nullptr to restore.
inline void set_warning_sink(WarningSink sink) {
  auto& s = detail::warning_state();
  std::lock_guard lock(s.mu);
  s.sink = std::move(sink);
}

inline void warn(const std::string& message) {
  auto& s = detail::warning_state();
  std::lock_guard lock(s.mu);
  if (s.sink)
    s.sink(message);
  else
    std::cerr << "warning: " << message << '\n';
}

}  // namespace mf3d
