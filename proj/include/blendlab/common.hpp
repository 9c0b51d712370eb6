#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace blendlab {

// Numeric values double as CLI exit statuses and C API return codes.
enum class ErrorCode : int {
  kInternal = 1,
  kConfig = 2,
  kMissingInput = 3,
  kInvariant = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what, ErrorCode code = ErrorCode::kInvariant) {
  if (!cond) fail(code, what);
}

inline constexpr const char* kToolVersion = "0.3.0";

}  // namespace blendlab
