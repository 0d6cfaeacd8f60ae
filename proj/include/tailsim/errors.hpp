#pragma once

#include <stdexcept>
#include <string>

namespace tailsim {

// Malformed or inconsistent configuration. `key()` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

// Argument outside the domain of a closed-form expression (e.g. x >= min phi).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// A queue whose drift phi = mu - Lambda is not strictly positive.
class InstabilityError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// A component broke the simulator contract (e.g. a scheduler invented a plan).
class ProtocolError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid caller-supplied value; `field()` is reported back to remote clients.
class ValidationError : public std::invalid_argument {
public:
    ValidationError(std::string field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace tailsim
