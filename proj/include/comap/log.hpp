#pragma once

#include <sstream>
#include <string>
#include <string_view>

namespace comap::log {

enum class Level { kQuiet = 0, kWarning = 1, kInfo = 2 };

void set_level(Level level);
Level level();

// Writes one "level=... event=... key=value ..." line to stderr.
void emit(Level at, std::string_view event, const std::string& fields);

class Line {
 public:
  Line(Level at, std::string_view event) : at_(at), event_(event) {}
  ~Line() { emit(at_, event_, fields_.str()); }
  Line(const Line&) = delete;
  Line& operator=(const Line&) = delete;

  template <typename T>
  Line& kv(std::string_view key, const T& value) {
    fields_ << ' ' << key << '=' << value;
    return *this;
  }

 private:
  Level at_;
  std::string_view event_;
  std::ostringstream fields_;
};

inline Line warn(std::string_view event) { return Line(Level::kWarning, event); }
inline Line info(std::string_view event) { return Line(Level::kInfo, event); }

}  // namespace comap::log
