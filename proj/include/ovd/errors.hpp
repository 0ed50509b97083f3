#ifndef OVD_ERRORS_HPP
#define OVD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ovd {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string &msg) : Error("ShapeError: " + msg) {}
};

class EmptyMaskError : public Error {
public:
  EmptyMaskError() : Error("EmptyMask: mask has no foreground pixel") {}
};

class InvalidConceptError : public Error {
public:
  explicit InvalidConceptError(const std::string &msg)
      : Error("InvalidConcept: " + msg) {}
};

class DegenerateEnsembleError : public Error {
public:
  DegenerateEnsembleError()
      : Error("DegenerateEnsemble: template embeddings sum to zero") {}
};

// Carries a JSON-pointer-ish location so schema failures are actionable.
class DataError : public Error {
public:
  DataError(const std::string &msg, const std::string &where)
      : Error("DataError at " + where + ": " + msg), pointer(where) {}
  std::string pointer;
};

class PoolExhaustedError : public Error {
public:
  explicit PoolExhaustedError(const std::string &msg)
      : Error("PoolExhausted: " + msg) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string &msg) : Error(msg) {}
};

class TrainingAborted : public Error {
public:
  explicit TrainingAborted(const std::string &msg) : Error(msg) {}
};

} // namespace ovd

#endif
