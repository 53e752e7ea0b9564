#pragma once

#include <stdexcept>
#include <string>

namespace usersim {

/// Root of every exception thrown by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed user input: bad rows, missing files, inconsistent arguments.
/// The CLI maps this to exit code 2.
class input_error : public error {
public:
    using error::error;
};

/// Endpoint unreachable, timed out, or non-2xx after all retries.
class transport_error : public error {
public:
    using error::error;
};

/// Endpoint answered but the payload does not follow the chat-completion schema.
class protocol_error : public error {
public:
    using error::error;
};

class unsupported_operation : public error {
public:
    using error::error;
};

} // namespace usersim
