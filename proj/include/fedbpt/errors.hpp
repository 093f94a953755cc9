#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedbpt {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Eigendecomposition of a covariance failed even after regularization.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Connection, timeout or protocol failure talking to a remote oracle.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The remote oracle answered HTTP 400 with an {"error": ...} body.
class RemoteRejection : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class TaskGenerationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A client's local round aborted; carries the id of the failing client.
class RoundFailure : public std::runtime_error {
 public:
  RoundFailure(int client_id, const std::string& what)
      : std::runtime_error("client " + std::to_string(client_id) + ": " + what),
        client_id_(client_id) {}

  int client_id() const noexcept { return client_id_; }

 private:
  int client_id_;
};

}  // namespace fedbpt
