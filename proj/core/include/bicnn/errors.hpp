#pragma once

#include <stdexcept>
#include <string>

namespace bicnn {

/// Broad failure classes; the CLI maps these onto process exit codes.
enum class ErrorCategory {
  usage,      // bad configuration or arguments (exit 1)
  data,       // malformed or incompatible inputs (exit 2)
  numerical,  // non-finite loss or gradient (exit 3)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define BICNN_DEFINE_ERROR(Name, Category)                        \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what)                        \
        : Error(ErrorCategory::Category, #Name ": " + what) {}    \
  };

BICNN_DEFINE_ERROR(InvalidConfig, usage)
BICNN_DEFINE_ERROR(InvalidSpec, usage)

BICNN_DEFINE_ERROR(SequenceTooLong, data)
BICNN_DEFINE_ERROR(IndexOutOfRange, data)
BICNN_DEFINE_ERROR(ShapeMismatch, data)
BICNN_DEFINE_ERROR(GraphNotFinalized, data)
BICNN_DEFINE_ERROR(TooFewReports, data)
BICNN_DEFINE_ERROR(VocabularyMismatch, data)
BICNN_DEFINE_ERROR(IoError, data)
BICNN_DEFINE_ERROR(ParseError, data)

BICNN_DEFINE_ERROR(NonFiniteLoss, numerical)
BICNN_DEFINE_ERROR(NonFiniteGradient, numerical)

#undef BICNN_DEFINE_ERROR

}  // namespace bicnn
