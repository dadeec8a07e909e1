#include "tristream/log.hpp"

#include <iostream>
#include <mutex>

namespace tristream::log {

namespace {

std::mutex& sink_mutex() {
  static std::mutex mu;
  return mu;
}

Sink& current_sink() {
  static Sink sink;
  return sink;
}

}  // namespace

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) {
    current_sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

CaptureWarnings::CaptureWarnings() {
  previous_ = set_warning_sink([this](const std::string& m) { messages_.push_back(m); });
}

CaptureWarnings::~CaptureWarnings() { set_warning_sink(std::move(previous_)); }

}  // namespace tristream::log
