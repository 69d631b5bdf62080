#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace unetseg::log {

enum class Level { info, warning };

using Sink = std::function<void(Level, std::string_view)>;

/// Replaces the process-wide sink; returns the previous one. The default
/// sink writes warnings to stderr and drops info messages unless verbose.
Sink set_sink(Sink sink);
void set_verbose(bool verbose);

void info(std::string_view message);
void warn(std::string_view message);

/// Collects messages for the lifetime of the object (tests use it).
class Capture {
 public:
  Capture();
  ~Capture();
  Capture(const Capture&) = delete;
  Capture& operator=(const Capture&) = delete;

  int warnings() const { return warnings_; }
  const std::string& text() const { return text_; }

 private:
  Sink previous_;
  int warnings_ = 0;
  std::string text_;
};

}  // namespace unetseg::log
