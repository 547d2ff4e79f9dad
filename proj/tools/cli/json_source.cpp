#include "cli/json_source.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <sstream>

namespace rbsde::cli {

namespace {

/// Character iterator that remembers the last position it was dereferenced at, so the
/// SAX callbacks can tell where the lexer is.
struct TrackingIterator {
    using iterator_category = std::input_iterator_tag;
    using value_type = char;
    using difference_type = std::ptrdiff_t;
    using pointer = const char*;
    using reference = const char&;

    const char* p = nullptr;
    const char** last = nullptr;

    reference operator*() const {
        *last = p;
        return *p;
    }
    TrackingIterator& operator++() {
        ++p;
        return *this;
    }
    TrackingIterator operator++(int) {
        TrackingIterator t = *this;
        ++p;
        return t;
    }
    bool operator==(const TrackingIterator& o) const { return p == o.p; }
    bool operator!=(const TrackingIterator& o) const { return p != o.p; }
};

std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
        if (c == '~')
            out += "~0";
        else if (c == '/')
            out += "~1";
        else
            out += c;
    }
    return out;
}

class LineRecorder : public nlohmann::json_sax<nlohmann::json> {
public:
    LineRecorder(const std::string& text, const char** last, std::map<std::string, std::size_t>& lines)
        : begin_(text.data()), last_(last), lines_(lines) {
        for (std::size_t i = 0; i < text.size(); ++i)
            if (text[i] == '\n') newlines_.push_back(i);
    }

    bool null() override { return value(); }
    bool boolean(bool) override { return value(); }
    bool number_integer(number_integer_t) override { return value(); }
    bool number_unsigned(number_unsigned_t) override { return value(); }
    bool number_float(number_float_t, const string_t&) override { return value(); }
    bool string(string_t&) override { return value(); }
    bool binary(binary_t&) override { return value(); }
    bool start_object(std::size_t) override { return open(false); }
    bool start_array(std::size_t) override { return open(true); }
    bool end_object() override { return close(); }
    bool end_array() override { return close(); }
    bool key(string_t& k) override {
        stack_.back().key = k;
        return true;
    }
    bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception&) override { return false; }

private:
    struct Frame {
        std::string pointer;
        bool array = false;
        std::size_t index = 0;
        std::string key;
    };

    std::size_t line() const {
        const auto offset = static_cast<std::size_t>(*last_ - begin_);
        return static_cast<std::size_t>(std::lower_bound(newlines_.begin(), newlines_.end(), offset) - newlines_.begin()) + 1;
    }

    std::string child() {
        if (stack_.empty()) return "";
        Frame& f = stack_.back();
        if (f.array) return f.pointer + "/" + std::to_string(f.index++);
        return f.pointer + "/" + escape(f.key);
    }

    bool value() {
        lines_.emplace(child(), line());
        return true;
    }
    bool open(bool array) {
        std::string p = child();
        lines_.emplace(p, line());
        stack_.push_back({std::move(p), array, 0, {}});
        return true;
    }
    bool close() {
        stack_.pop_back();
        return true;
    }

    const char* begin_;
    const char** last_;
    std::map<std::string, std::size_t>& lines_;
    std::vector<std::size_t> newlines_;
    std::vector<Frame> stack_;
};

std::string describe(const nlohmann::json& j) {
    switch (j.type()) {
    case nlohmann::json::value_t::null: return "null";
    case nlohmann::json::value_t::object: return "an object";
    case nlohmann::json::value_t::array: return "an array";
    case nlohmann::json::value_t::string: return "a string";
    case nlohmann::json::value_t::boolean: return "a boolean";
    default: return "a number";
    }
}

}  // namespace

ConfigFileError::ConfigFileError(std::string file, std::size_t line, const std::string& message)
    : std::runtime_error(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + message),
      file_(std::move(file)),
      line_(line) {}

JsonSource::JsonSource(std::string file, std::string text) : file_(std::move(file)), text_(std::move(text)) {
    try {
        root_ = nlohmann::json::parse(text_);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text_.size());
        const auto line = static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(byte), '\n')) + 1;
        const std::size_t bol = text_.rfind('\n', byte == 0 ? 0 : byte - 1);
        const std::size_t col = byte - (bol == std::string::npos ? 0 : bol + 1) + 1;
        std::string what = e.what();
        if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
        throw ConfigFileError(file_, line, "column " + std::to_string(col) + ": " + what);
    }
    const char* last = text_.data();
    LineRecorder rec(text_, &last, lines_);
    TrackingIterator first{text_.data(), &last}, end{text_.data() + text_.size(), &last};
    nlohmann::json::sax_parse(first, end, &rec);
}

std::size_t JsonSource::line_of(const std::string& pointer) const {
    std::string p = pointer;
    while (true) {
        if (auto it = lines_.find(p); it != lines_.end()) return it->second;
        if (p.empty()) return 0;
        p.erase(p.rfind('/'));
    }
}

void JsonSource::fail(const std::string& pointer, const std::string& message) const {
    throw ConfigFileError(file_, line_of(pointer), (pointer.empty() ? "/" : pointer) + ": " + message);
}

Node Node::at(const std::string& key) const {
    if (!value_->is_object()) fail("expected an object, found " + describe(*value_));
    auto it = value_->find(key);
    if (it == value_->end()) fail("missing required key \"" + key + "\"");
    return {*src_, *it, pointer_ + "/" + escape(key)};
}

std::optional<Node> Node::find(const std::string& key) const {
    if (!value_->is_object()) fail("expected an object, found " + describe(*value_));
    auto it = value_->find(key);
    if (it == value_->end() || it->is_null()) return std::nullopt;
    return Node{*src_, *it, pointer_ + "/" + escape(key)};
}

std::vector<Node> Node::items() const {
    if (!value_->is_array()) fail("expected an array, found " + describe(*value_));
    std::vector<Node> out;
    for (std::size_t i = 0; i < value_->size(); ++i) out.emplace_back(*src_, (*value_)[i], pointer_ + "/" + std::to_string(i));
    return out;
}

void Node::expect_keys(std::initializer_list<const char*> allowed) const {
    if (!value_->is_object()) fail("expected an object, found " + describe(*value_));
    for (auto it = value_->begin(); it != value_->end(); ++it) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; }) == allowed.end()) {
            std::ostringstream msg;
            msg << "unknown key \"" << it.key() << "\" (allowed:";
            for (const char* a : allowed) msg << ' ' << a;
            msg << ')';
            Node{*src_, it.value(), pointer_ + "/" + escape(it.key())}.fail(msg.str());
        }
    }
}

double Node::number() const {
    if (!value_->is_number()) fail("expected a number, found " + describe(*value_));
    const double v = value_->get<double>();
    if (!std::isfinite(v)) fail("number is not finite");
    return v;
}

double Node::number_or(const std::string& key, double fallback) const {
    auto n = find(key);
    return n ? n->number() : fallback;
}

std::optional<double> Node::optional_number(const std::string& key) const {
    auto n = find(key);
    if (!n) return std::nullopt;
    return n->number();
}

std::uint64_t Node::unsigned_integer() const {
    if (!value_->is_number_unsigned()) {
        if (value_->is_number_integer()) fail("expected a nonnegative integer, found a negative one");
        fail("expected a nonnegative integer, found " + describe(*value_));
    }
    return value_->get<std::uint64_t>();
}

std::string Node::string() const {
    if (!value_->is_string()) fail("expected a string, found " + describe(*value_));
    return value_->get<std::string>();
}

bool Node::boolean() const {
    if (!value_->is_boolean()) fail("expected true or false, found " + describe(*value_));
    return value_->get<bool>();
}

std::vector<double> Node::numbers() const {
    std::vector<double> out;
    for (const Node& n : items()) out.push_back(n.number());
    return out;
}

}  // namespace rbsde::cli
