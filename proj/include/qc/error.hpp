#pragma once

#include <stdexcept>
#include <string>

namespace qc {

// Base of every error the library raises. kind() is a stable machine-readable
// tag used by the CLI and the HTTP layer.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define QC_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

QC_DEFINE_ERROR(PreconditionError, "precondition")
QC_DEFINE_ERROR(SchemaError, "schema")
QC_DEFINE_ERROR(EmptyDatasetError, "empty_dataset")
QC_DEFINE_ERROR(IoError, "io")
QC_DEFINE_ERROR(EmptyGenerationError, "empty_generation")
QC_DEFINE_ERROR(TransportError, "transport")
QC_DEFINE_ERROR(ContractError, "contract")
QC_DEFINE_ERROR(DegenerateVectorError, "degenerate_vector")
QC_DEFINE_ERROR(UndefinedDgsError, "undefined_dgs")
QC_DEFINE_ERROR(DegenerateAlphaError, "degenerate_alpha")
QC_DEFINE_ERROR(InsufficientDataError, "insufficient_data")
QC_DEFINE_ERROR(ZeroVarianceError, "zero_variance")
QC_DEFINE_ERROR(ValidationError, "validation")
QC_DEFINE_ERROR(StageError, "stage")
QC_DEFINE_ERROR(ConflictError, "conflict")
QC_DEFINE_ERROR(AuthorizationError, "authorization")
QC_DEFINE_ERROR(AuthenticationError, "authentication")
QC_DEFINE_ERROR(NotFoundError, "not_found")
QC_DEFINE_ERROR(ConfigError, "config")

#undef QC_DEFINE_ERROR

// Non-2xx reply from an inference endpoint; the body is kept verbatim.
class HttpStatusError : public Error {
 public:
  HttpStatusError(int status, std::string body, const std::string& message)
      : Error("http_status", message), status_(status), body_(std::move(body)) {}

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

}  // namespace qc
