#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hvcu {

/// Root of every exception thrown by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (wrong level pair, bad depth, ...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// A checked constructor rejected its inputs.
class InvariantError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// model-client

class BackendError : public Error {
public:
    using Error::Error;
};

class AuthError : public BackendError {
public:
    using BackendError::BackendError;
};

class TransportError : public BackendError {
public:
    TransportError(const std::string& what, int attempts)
        : BackendError(what), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// The endpoint answered, but not with something we can use.
class ContractError : public BackendError {
public:
    using BackendError::BackendError;
};

class ScriptExhausted : public BackendError {
public:
    using BackendError::BackendError;
};

class MatchError : public BackendError {
public:
    MatchError(const std::string& what, std::size_t entry_index)
        : BackendError(what), entry_index_(entry_index) {}
    std::size_t entry_index() const noexcept { return entry_index_; }

private:
    std::size_t entry_index_;
};

// ---------------------------------------------------------------------------
// prompts

class UnknownTemplate : public Error {
public:
    using Error::Error;
};

class MissingBinding : public Error {
public:
    explicit MissingBinding(std::string placeholder)
        : Error("missing binding for placeholder {" + placeholder + "}"),
          placeholder_(std::move(placeholder)) {}
    const std::string& placeholder() const noexcept { return placeholder_; }

private:
    std::string placeholder_;
};

/// Base for everything that can go wrong turning model text into a payload.
class ParseError : public Error {
public:
    using Error::Error;
};

class NoJsonFound : public ParseError {
public:
    NoJsonFound() : ParseError("no JSON object found in response") {}
};

class MalformedJson : public ParseError {
public:
    MalformedJson(const std::string& what, std::size_t offset)
        : ParseError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class SchemaError : public ParseError {
public:
    SchemaError(std::string field, const std::string& detail)
        : ParseError("schema error at '" + field + "': " + detail), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class RangeError : public ParseError {
public:
    RangeError(std::string field, double value)
        : ParseError("value " + std::to_string(value) + " of '" + field + "' outside [0, 1]"),
          field_(std::move(field)), value_(value) {}
    const std::string& field() const noexcept { return field_; }
    double value() const noexcept { return value_; }

private:
    std::string field_;
    double value_;
};

class CapExceeded : public ParseError {
public:
    CapExceeded(int level, std::size_t count)
        : ParseError("answer has " + std::to_string(count) + " words, over the level-" +
                     std::to_string(level) + " cap"),
          level_(level), count_(count) {}
    int level() const noexcept { return level_; }
    std::size_t count() const noexcept { return count_; }

private:
    int level_;
    std::size_t count_;
};

// ---------------------------------------------------------------------------
// bench-gen / mcts-gen

class GenerationContractError : public Error {
public:
    using Error::Error;
};

class ValidationParseError : public Error {
public:
    using Error::Error;
};

class EvaluationParseError : public Error {
public:
    using Error::Error;
};

class NoExpandableNode : public Error {
public:
    NoExpandableNode() : Error("no expandable node: tree is saturated") {}
};

// ---------------------------------------------------------------------------
// eval

class EmptyInput : public Error {
public:
    using Error::Error;
};

class MissingTask : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// dataset-io

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(std::size_t line, const std::string& violation)
        : Error("line " + std::to_string(line) + ": " + violation), line_(line),
          violation_(violation) {}
    std::size_t line() const noexcept { return line_; }
    const std::string& violation() const noexcept { return violation_; }

private:
    std::size_t line_;
    std::string violation_;
};

class SchemaVersionMismatch : public Error {
public:
    using Error::Error;
};

class DanglingNodeId : public Error {
public:
    using Error::Error;
};

}  // namespace hvcu
