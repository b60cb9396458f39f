#pragma once

#include <stdexcept>
#include <string>

namespace uml {

// Invalid runtime data (shape mismatch, non-finite input, bad labels).
class invalid_input : public std::runtime_error {
public:
    explicit invalid_input(const std::string& msg) : std::runtime_error(msg) {}
};

// Inconsistent or unusable configuration (bad sizes, bad flags).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Training / evaluation produced non-finite numbers.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem trouble (unreadable checkpoint, unwritable output dir).
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace uml
