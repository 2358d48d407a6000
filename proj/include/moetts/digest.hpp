#pragma once

#include <string>
#include <vector>

#include "moetts/model.hpp"

namespace moetts {

// Hex SHA-256 over raw bytes.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);

// Order-stable digest over the raw parameter bytes of the selected tensors
// (sorted by name). Throws ContractError on an empty selector.
std::string param_digest(const std::vector<const Tensor*>& selector);
std::string param_digest(const std::vector<Tensor*>& selector);

}  // namespace moetts
