#pragma once

#include <stdexcept>
#include <string>

namespace moetts {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

struct TokenError : std::runtime_error {
  explicit TokenError(const std::string& msg) : std::runtime_error("token: " + msg) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error("parse: " + msg) {}
};

struct EncodeError : std::runtime_error {
  explicit EncodeError(const std::string& msg) : std::runtime_error("encode: " + msg) {}
};

struct DecodeError : std::runtime_error {
  explicit DecodeError(const std::string& msg) : std::runtime_error("decode: " + msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error("shape: " + msg) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract: " + msg) {}
};

struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error("train: " + msg) {}
};

struct IntegrityError : std::runtime_error {
  explicit IntegrityError(const std::string& msg) : std::runtime_error("checkpoint: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

}  // namespace moetts
