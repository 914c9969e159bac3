#pragma once

#include <stdexcept>
#include <string>

namespace spssl {

// Every library error carries a stable name; the CLI prints it as a prefix.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* name() const noexcept { return "Error"; }
};

#define SPSSL_DEFINE_ERROR(Name)                                     \
  class Name : public Error {                                        \
   public:                                                           \
    using Error::Error;                                              \
    const char* name() const noexcept override { return #Name; }     \
  };

SPSSL_DEFINE_ERROR(ShapeError)
SPSSL_DEFINE_ERROR(NumericError)
SPSSL_DEFINE_ERROR(ConfigError)
SPSSL_DEFINE_ERROR(StateError)
SPSSL_DEFINE_ERROR(DomainError)
SPSSL_DEFINE_ERROR(RangeError)
SPSSL_DEFINE_ERROR(DegenerateWeightError)
SPSSL_DEFINE_ERROR(EmptyMaskError)
SPSSL_DEFINE_ERROR(IOError)

#undef SPSSL_DEFINE_ERROR

}  // namespace spssl
