#pragma once

#include <stdexcept>
#include <string>

namespace xconv {

// Process exit codes; each error class maps to exactly one.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kParse = 2,
  kShape = 3,
  kHandshake = 4,
  kTransport = 5,
  kMaterial = 6,
  kMismatch = 7,
  kOverflow = 8,
  kUnsupported = 9,
  kIo = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

#define XCONV_DEFINE_ERROR(Name, Code)                              \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(Code, what) {}   \
  };

XCONV_DEFINE_ERROR(ParseError, ExitCode::kParse)
XCONV_DEFINE_ERROR(ShapeError, ExitCode::kShape)
XCONV_DEFINE_ERROR(HandshakeError, ExitCode::kHandshake)
XCONV_DEFINE_ERROR(TransportError, ExitCode::kTransport)
XCONV_DEFINE_ERROR(MaterialError, ExitCode::kMaterial)
XCONV_DEFINE_ERROR(MismatchError, ExitCode::kMismatch)
XCONV_DEFINE_ERROR(OverflowError, ExitCode::kOverflow)
XCONV_DEFINE_ERROR(UnsupportedError, ExitCode::kUnsupported)
XCONV_DEFINE_ERROR(IoError, ExitCode::kIo)

#undef XCONV_DEFINE_ERROR

}  // namespace xconv
