#include "unetseg/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace unetseg::log {
namespace {

std::mutex g_mutex;
bool g_verbose = false;

void default_sink(Level level, std::string_view message) {
  if (level == Level::warning) {
    std::cerr << "warning: " << message << '\n';
  } else if (g_verbose) {
    std::cout << message << '\n';
  }
}

Sink& sink() {
  static Sink s = default_sink;
  return s;
}

void emit(Level level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (sink()) sink()(level, message);
}

}  // namespace

Sink set_sink(Sink s) {
  std::lock_guard lock(g_mutex);
  return std::exchange(sink(), std::move(s));
}

void set_verbose(bool verbose) { g_verbose = verbose; }

void info(std::string_view message) { emit(Level::info, message); }
void warn(std::string_view message) { emit(Level::warning, message); }

Capture::Capture() {
  previous_ = set_sink([this](Level level, std::string_view message) {
    if (level == Level::warning) ++warnings_;
    text_.append(message);
    text_.push_back('\n');
  });
}

Capture::~Capture() { set_sink(std::move(previous_)); }

}  // namespace unetseg::log
