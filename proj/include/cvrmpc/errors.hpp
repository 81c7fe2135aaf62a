#pragma once

#include <stdexcept>
#include <string>

namespace cvrmpc {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
  Input,       // exit 2: bad files, bad arguments, model validation
  Infeasible,  // exit 1: optimization infeasible / plant non-convergence
  SolverLimit  // exit 3: node or iteration limit exceeded
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error input_error(std::string msg) { return Error(ErrorKind::Input, std::move(msg)); }
inline Error infeasible_error(std::string msg) { return Error(ErrorKind::Infeasible, std::move(msg)); }
inline Error limit_error(std::string msg) { return Error(ErrorKind::SolverLimit, std::move(msg)); }

}  // namespace cvrmpc
