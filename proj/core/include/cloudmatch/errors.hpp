#pragma once

#include <stdexcept>
#include <string>

namespace cloudmatch {

/// Shape or channel-count mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// A caller violated a documented precondition (bad range, empty input, ...).
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Malformed or missing external input (files, manifests, CLI values).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cloudmatch
