#pragma once

#include <stdexcept>
#include <string>

namespace cvpe {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file; carries 1-based row and column context when known.
class ParseError : public Error {
public:
    enum class Kind { missing_file, non_numeric, ragged_row, non_finite, bad_header };

    ParseError(Kind kind, const std::string& what, std::size_t row = 0, std::size_t column = 0);
    Kind kind() const { return kind_; }
    std::size_t row() const { return row_; }
    std::size_t column() const { return column_; }

private:
    Kind kind_;
    std::size_t row_;
    std::size_t column_;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite value produced by a computation stage.
class NumericError : public Error {
public:
    NumericError(std::string stage, const std::string& what);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace cvpe
