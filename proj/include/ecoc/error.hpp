#pragma once

#include <stdexcept>
#include <string>

namespace ecoc {

// Invalid user input: bad config keys, missing files, precondition violations
// on arguments. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed file contents (codebooks, embeddings, checkpoints, vocabularies).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf loss or gradient. The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ecoc
