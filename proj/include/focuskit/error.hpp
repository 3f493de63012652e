#pragma once

#include <stdexcept>
#include <string>

namespace focuskit {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto its documented exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed tensor file, manifest or report.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Data that parses but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Invalid generator / model / run configuration.
class SpecError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during optimisation.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Training data that cannot support the requested task (e.g. one class).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

// Backward requested without a matching forward pass.
class StateError : public Error {
 public:
  using Error::Error;
};

// Checkpoint missing, unreadable, or inconsistent with its topology.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Evaluation inputs that do not line up (report without a truth record).
class UnmatchedError : public Error {
 public:
  using Error::Error;
};

}  // namespace focuskit
