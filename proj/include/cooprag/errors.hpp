#pragma once

#include <stdexcept>
#include <string>

namespace cooprag {

// Base class for every error thrown by this library. Catching cooprag::Error
// at a pipeline boundary is sufficient to contain all engine failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Domain type construction violated a stated invariant.
class InvariantViolation : public Error {
public:
    using Error::Error;
};

// Reasoning-chain discipline breaches: missing or duplicated fill slot,
// fill outside the final tail, fill used as a relation.
class ChainInvariantViolation : public InvariantViolation {
public:
    using InvariantViolation::InvariantViolation;
};

// Structured LLM output did not match the expected grammar.
class ParseError : public Error {
public:
    using Error::Error;
};

class EmptyQuestion : public Error {
public:
    using Error::Error;
};

class EmptyText : public Error {
public:
    using Error::Error;
};

class EmptyStore : public Error {
public:
    using Error::Error;
};

class EmptyGold : public Error {
public:
    using Error::Error;
};

class ZeroVector : public Error {
public:
    using Error::Error;
};

class DimMismatch : public Error {
public:
    using Error::Error;
};

class LayerOutOfRange : public Error {
public:
    using Error::Error;
};

class BadBucketCount : public Error {
public:
    using Error::Error;
};

class UnknownDocId : public Error {
public:
    using Error::Error;
};

class IndexOutOfRange : public Error {
public:
    using Error::Error;
};

class NonPositiveTemperature : public Error {
public:
    using Error::Error;
};

// Binary file carries a bad magic, an unsupported version, or trailing junk.
class FormatError : public Error {
public:
    using Error::Error;
};

class TruncatedFile : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

// JSONL record failed validation; the message lists offending line numbers.
class SchemaError : public Error {
public:
    using Error::Error;
};

class ProviderUnavailable : public Error {
public:
    using Error::Error;
};

class GatewayError : public Error {
public:
    using Error::Error;
};

class AuthError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class BadResponse : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class IncompleteChain : public Error {
public:
    using Error::Error;
};

class AnswerDelimiterMissing : public Error {
public:
    using Error::Error;
};

class MissingExample : public Error {
public:
    using Error::Error;
};

class IterationLimitExceeded : public Error {
public:
    using Error::Error;
};

} // namespace cooprag
