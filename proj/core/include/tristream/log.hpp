#pragma once

#include <functional>
#include <string>
#include <vector>

namespace tristream::log {

using Sink = std::function<void(const std::string&)>;

/// Emits a warning. Goes to stderr unless a sink is installed.
void warn(const std::string& message);

/// Replaces the warning sink; returns the previous one. An empty sink
/// restores stderr output.
Sink set_warning_sink(Sink sink);

/// Collects warnings for the lifetime of the object.
class CaptureWarnings {
 public:
  CaptureWarnings();
  ~CaptureWarnings();
  CaptureWarnings(const CaptureWarnings&) = delete;
  CaptureWarnings& operator=(const CaptureWarnings&) = delete;

  const std::vector<std::string>& messages() const noexcept { return messages_; }

 private:
  std::vector<std::string> messages_;
  Sink previous_;
};

}  // namespace tristream::log
