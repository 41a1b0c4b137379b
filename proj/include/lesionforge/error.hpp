#pragma once

#include <stdexcept>
#include <string>

namespace lesionforge {

// Every failure raised by the library derives from Error; the CLI maps the
// concrete type onto an exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define LESIONFORGE_ERROR_TYPE(Name, tag)                         \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(what) {}       \
    const char* kind() const noexcept override { return tag; }    \
  };

LESIONFORGE_ERROR_TYPE(ArgumentError, "argument")
LESIONFORGE_ERROR_TYPE(FormatError, "format")
LESIONFORGE_ERROR_TYPE(UnsupportedError, "unsupported")
LESIONFORGE_ERROR_TYPE(IoError, "io")
LESIONFORGE_ERROR_TYPE(ValidationError, "validation")
LESIONFORGE_ERROR_TYPE(LookupError, "lookup")
LESIONFORGE_ERROR_TYPE(ParseError, "parse")
LESIONFORGE_ERROR_TYPE(SchemaError, "schema")
LESIONFORGE_ERROR_TYPE(LinkError, "link")
LESIONFORGE_ERROR_TYPE(DegenerateIntervalError, "degenerate-interval")
LESIONFORGE_ERROR_TYPE(SynthesisError, "synthesis")

#undef LESIONFORGE_ERROR_TYPE

}  // namespace lesionforge
