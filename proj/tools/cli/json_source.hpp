#pragma once

// JSON document with the source line of every value, so configuration errors can
// point at the offending line.

#include "json.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rbsde::cli {

/// Configuration problem; `line` is 0 when no position is known.
class ConfigFileError : public std::runtime_error {
public:
    ConfigFileError(std::string file, std::size_t line, const std::string& message);

    const std::string& file() const { return file_; }
    std::size_t line() const { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

class JsonSource {
public:
    /// Parses `text`; syntax errors throw ConfigFileError with line and column.
    JsonSource(std::string file, std::string text);

    const nlohmann::json& root() const { return root_; }
    const std::string& file() const { return file_; }
    const std::string& text() const { return text_; }
    /// Line of the value at a JSON pointer, or of its nearest recorded ancestor.
    std::size_t line_of(const std::string& pointer) const;

    [[noreturn]] void fail(const std::string& pointer, const std::string& message) const;

private:
    std::string file_;
    std::string text_;
    nlohmann::json root_;
    std::map<std::string, std::size_t> lines_;
};

/// Typed read-only view of one value inside a JsonSource.
class Node {
public:
    Node(const JsonSource& src, const nlohmann::json& value, std::string pointer)
        : src_(&src), value_(&value), pointer_(std::move(pointer)) {}

    const std::string& pointer() const { return pointer_; }
    const nlohmann::json& json() const { return *value_; }
    bool is_null() const { return value_->is_null(); }

    Node at(const std::string& key) const;
    std::optional<Node> find(const std::string& key) const;
    std::vector<Node> items() const;
    /// Fails on keys outside `allowed`; catches misspelled options.
    void expect_keys(std::initializer_list<const char*> allowed) const;

    double number() const;
    double number_or(const std::string& key, double fallback) const;
    std::optional<double> optional_number(const std::string& key) const;
    std::uint64_t unsigned_integer() const;
    std::string string() const;
    bool boolean() const;
    std::vector<double> numbers() const;

    [[noreturn]] void fail(const std::string& message) const { src_->fail(pointer_, message); }

private:
    const JsonSource* src_;
    const nlohmann::json* value_;
    std::string pointer_;
};

}  // namespace rbsde::cli
