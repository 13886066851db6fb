#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fxattn {

// Operand or tensor dimensions disagree with what the operation requires.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. line is 0 when the position is unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(format(file, line, what)), file_(file), line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& file, std::size_t line, const std::string& what) {
    std::string s = file;
    if (line > 0) s += ":" + std::to_string(line);
    return s + ": " + what;
  }

  std::string file_;
  std::size_t line_;
};

// A stream channel was overfilled, read past its end, or left undrained.
class StreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fxattn
