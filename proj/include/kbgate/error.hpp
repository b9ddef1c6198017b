// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every pipeline stage. Stage drivers catch
// `kbgate::Error` per unit of work and record the message; anything else is
// treated as fatal.

#pragma once

#include <stdexcept>
#include <string>

namespace kbgate {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numeric input fell outside its admissible interval.
class RangeError : public Error {
public:
    using Error::Error;
};

/// A record or argument violates a documented precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Bad configuration: unknown template placeholder, missing profile, etc.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Text that was supposed to carry a value (boolean, score, JSON) did not.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Cross-record consistency failure: dangling ids, conflicting duplicates,
/// cache entries whose content disagrees.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// An image or input file could not be read.
class IngestionError : public Error {
public:
    using Error::Error;
};

/// Network-level failure. Retryable until the retry budget is spent.
class TransportError : public Error {
public:
    using Error::Error;
};

/// The endpoint answered 429; retryable. Becomes QuotaError once retries run out.
class RateLimitedError : public TransportError {
public:
    using TransportError::TransportError;
};

class QuotaError : public Error {
public:
    using Error::Error;
};

class AuthError : public Error {
public:
    using Error::Error;
};

/// The endpoint answered, but not with something we can read.
class MalformedReplyError : public Error {
public:
    using Error::Error;
};

/// Run-directory state prevents continuing (config drift, lock held, ...).
class ResumeError : public Error {
public:
    using Error::Error;
};

}  // namespace kbgate
