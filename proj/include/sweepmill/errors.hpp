#pragma once

#include <stdexcept>
#include <string>

namespace sweepmill {

// Base of everything this library throws. `where` is a "file:line" style
// location when one is known.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    Error(const std::string& where, const std::string& msg)
        : std::runtime_error(where.empty() ? msg : where + ": " + msg), where_(where) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

// Problems with the study description itself (parse or validation stage).
// The CLI maps these to exit code 4.
class SpecError : public Error {
public:
    using Error::Error;
};

// Problems while executing or persisting a study.
class ExecError : public Error {
public:
    using Error::Error;
};

class IOError : public Error {
public:
    using Error::Error;
};

// --- parsing ---
class FormatError : public SpecError { public: using SpecError::SpecError; };
class DepthError : public SpecError { public: using SpecError::SpecError; };
class ConflictError : public SpecError { public: using SpecError::SpecError; };

// --- validation ---
class TypeError : public SpecError { public: using SpecError::SpecError; };
class BadRange : public SpecError { public: using SpecError::SpecError; };
class UnknownTaskRef : public SpecError { public: using SpecError::SpecError; };
class BadFixedGroup : public SpecError { public: using SpecError::SpecError; };
class MissingCommand : public SpecError { public: using SpecError::SpecError; };

// --- interpolation ---
class SyntaxError : public SpecError { public: using SpecError::SpecError; };
class UnresolvedRef : public SpecError { public: using SpecError::SpecError; };
class CycleError : public SpecError { public: using SpecError::SpecError; };

// --- combination enumeration ---
class FixedLengthMismatch : public SpecError { public: using SpecError::SpecError; };
class CountTooLarge : public SpecError { public: using SpecError::SpecError; };

// --- task graph ---
class DanglingAfter : public SpecError { public: using SpecError::SpecError; };
class IllegalTransition : public ExecError { public: using ExecError::ExecError; };

// --- staging and execution ---
class MissingInfile : public ExecError { public: using ExecError::ExecError; };
class BadRegex : public SpecError { public: using SpecError::SpecError; };
class NoMatch : public ExecError { public: using ExecError::ExecError; };
class SpawnError : public ExecError { public: using ExecError::ExecError; };

// --- dispatch ---
class ConnectError : public ExecError { public: using ExecError::ExecError; };
class AuthError : public ExecError { public: using ExecError::ExecError; };
class RemoteSpawnError : public ExecError { public: using ExecError::ExecError; };
class UnsupportedBackend : public ExecError { public: using ExecError::ExecError; };
class TooManyTasksPerNode : public ExecError { public: using ExecError::ExecError; };

// --- store ---
class NonEmptyRoot : public ExecError { public: using ExecError::ExecError; };
class HashMismatch : public ExecError { public: using ExecError::ExecError; };
class CorruptCheckpoint : public ExecError { public: using ExecError::ExecError; };

} // namespace sweepmill
