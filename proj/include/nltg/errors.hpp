#pragma once

#include <stdexcept>
#include <string>

namespace nltg {

// Error categories map onto CLI exit codes: usage 2, format 3, numerical 4.

class UsageError : public std::invalid_argument {
  public:
    explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

class FormatError : public std::runtime_error {
  public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

class NumericalError : public std::runtime_error {
  public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw UsageError(msg);
}

}  // namespace detail
}  // namespace nltg
