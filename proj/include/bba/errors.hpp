#pragma once

#include <stdexcept>
#include <string>

namespace bba {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on shapes or arguments was broken by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// The reference direction of a projection has (numerically) zero norm.
class DegenerateDirection : public Error {
 public:
  using Error::Error;
};

/// A sampled vector collapsed to (numerically) zero; the caller should resample.
class DegenerateSample : public Error {
 public:
  using Error::Error;
};

/// The projected surrogate gradient vanished; the caller falls back to unbiased sampling.
class DegenerateGradient : public Error {
 public:
  using Error::Error;
};

class SamplingExhausted : public Error {
 public:
  using Error::Error;
};

class InitializationFailed : public Error {
 public:
  using Error::Error;
};

/// Retryable transport failure talking to a remote oracle.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Retries exhausted; the run aborts with its ledger intact.
class RemoteUnavailable : public Error {
 public:
  using Error::Error;
};

/// The remote answered with something that is not a label list.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing experiment files failed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bba
