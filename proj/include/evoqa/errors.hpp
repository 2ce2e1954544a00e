#pragma once

#include <stdexcept>
#include <string>

namespace evoqa {

/// Malformed or schema-violating input document (graph, config, history).
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or unreadable file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace evoqa
