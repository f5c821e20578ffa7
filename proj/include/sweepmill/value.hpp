#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include "sweepmill/errors.hpp"

namespace sweepmill {

// Numeric range written as start:step:end. `integral` is set when all three
// components were written as integers; expansion then stays in integer space.
struct Range {
    double start = 0;
    double step = 0;
    double end = 0;
    bool integral = true;

    friend bool operator==(const Range& a, const Range& b) {
        return a.start == b.start && a.step == b.step && a.end == b.end &&
               a.integral == b.integral;
    }
    friend bool operator<(const Range& a, const Range& b) {
        return std::tie(a.start, a.step, a.end, a.integral) <
               std::tie(b.start, b.step, b.end, b.integral);
    }
};

class Value;
using ValueList = std::vector<Value>;

enum class ValueKind { string, integer, real, boolean, list, range };

// One WDL value: string, integer, real, boolean, list, or range. The type is
// inferred from the written form of the scalar.
class Value {
public:
    Value() : data_(std::string{}) {}
    Value(std::string s) : data_(std::move(s)) {}
    Value(const char* s) : data_(std::string(s)) {}
    Value(std::int64_t i) : data_(i) {}
    Value(int i) : data_(static_cast<std::int64_t>(i)) {}
    Value(double d) : data_(d) {}
    Value(bool b) : data_(b) {}
    Value(Range r) : data_(r) {}
    Value(ValueList l) : data_(std::move(l)) {}

    ValueKind kind() const {
        switch (data_.index()) {
        case 0: return ValueKind::string;
        case 1: return ValueKind::integer;
        case 2: return ValueKind::real;
        case 3: return ValueKind::boolean;
        case 4: return ValueKind::list;
        default: return ValueKind::range;
        }
    }

    bool is_string() const { return kind() == ValueKind::string; }
    bool is_integer() const { return kind() == ValueKind::integer; }
    bool is_real() const { return kind() == ValueKind::real; }
    bool is_boolean() const { return kind() == ValueKind::boolean; }
    bool is_list() const { return kind() == ValueKind::list; }
    bool is_range() const { return kind() == ValueKind::range; }
    bool is_scalar() const { return !is_list() && !is_range(); }

    const std::string& as_string() const { return std::get<std::string>(data_); }
    std::int64_t as_integer() const { return std::get<std::int64_t>(data_); }
    double as_real() const { return std::get<double>(data_); }
    bool as_boolean() const { return std::get<bool>(data_); }
    const ValueList& as_list() const { return std::get<ValueList>(data_); }
    const Range& as_range() const { return std::get<Range>(data_); }

    friend bool operator==(const Value& a, const Value& b) { return a.data_ == b.data_; }
    friend bool operator!=(const Value& a, const Value& b) { return !(a == b); }

    bool operator<(const Value& o) const { return data_ < o.data_; }

    // String form used when interpolating this value into a template:
    // integers undecorated, reals in shortest round-trip form.
    std::string canonical_string() const;

    // String form used in the canonical serialized spec. Unlike
    // canonical_string(), the result re-infers to the same Value (reals keep
    // a decimal point, ambiguous strings are quoted).
    std::string render_wdl() const;

private:
    std::variant<std::string, std::int64_t, double, bool, ValueList, Range> data_;
};

namespace detail {

inline std::string shortest_double(double d) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), d);
    (void)ec;
    return std::string(buf, p);
}

inline bool parse_integer(std::string_view s, std::int64_t& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_real(std::string_view s, double& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

inline bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    return true;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

// Splits a flow list body "a, b, [c, d]" at top-level commas. Quotes and
// nested brackets protect commas.
inline std::vector<std::string> split_flow_items(std::string_view body, const std::string& where) {
    std::vector<std::string> items;
    std::string cur;
    int depth = 0;
    char quote = 0;
    for (char c : body) {
        if (quote) {
            cur += c;
            if (c == quote) quote = 0;
            continue;
        }
        if (c == '\'' || c == '"') { quote = c; cur += c; continue; }
        if (c == '[') ++depth;
        if (c == ']') {
            --depth;
            if (depth < 0) throw FormatError(where, "unbalanced ']' in list");
        }
        if (c == ',' && depth == 0) {
            items.push_back(cur);
            cur.clear();
            continue;
        }
        cur += c;
    }
    if (quote) throw FormatError(where, "unterminated quote in list");
    if (depth != 0) throw FormatError(where, "unbalanced '[' in list");
    items.push_back(cur);
    return items;
}

} // namespace detail

// Infers a Value from its written form: digits -> integer, decimal -> real,
// true/false -> boolean, num:num:num -> range, [..] -> list, otherwise
// string. Quoted text is always a string. `quoted` forces string (used by
// formats that carry their own type info, e.g. JSON strings).
inline Value infer_value(std::string_view text, bool quoted = false,
                         const std::string& where = {}) {
    std::string_view s = detail::trim(text);
    if (quoted) return Value(std::string(s));
    if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front())
        return Value(std::string(s.substr(1, s.size() - 2)));
    if (!s.empty() && s.front() == '[') {
        if (s.back() != ']') throw FormatError(where, "unterminated list value");
        ValueList items;
        std::string_view body = s.substr(1, s.size() - 2);
        if (!detail::trim(body).empty())
            for (const std::string& item : detail::split_flow_items(body, where))
                items.push_back(infer_value(item, false, where));
        return Value(std::move(items));
    }

    std::int64_t i;
    if (detail::parse_integer(s, i)) return Value(i);
    double d;
    if (detail::parse_real(s, d)) return Value(d);
    if (detail::iequals(s, "true")) return Value(true);
    if (detail::iequals(s, "false")) return Value(false);

    // start:step:end range, recognized only after structural parsing so the
    // pattern cannot collide with the keyword-value delimiter.
    std::size_t c1 = s.find(':');
    if (c1 != std::string_view::npos) {
        std::size_t c2 = s.find(':', c1 + 1);
        if (c2 != std::string_view::npos && s.find(':', c2 + 1) == std::string_view::npos) {
            std::string_view p0 = detail::trim(s.substr(0, c1));
            std::string_view p1 = detail::trim(s.substr(c1 + 1, c2 - c1 - 1));
            std::string_view p2 = detail::trim(s.substr(c2 + 1));
            std::int64_t i0, i1, i2;
            if (detail::parse_integer(p0, i0) && detail::parse_integer(p1, i1) &&
                detail::parse_integer(p2, i2)) {
                Range r;
                r.start = static_cast<double>(i0);
                r.step = static_cast<double>(i1);
                r.end = static_cast<double>(i2);
                r.integral = true;
                return Value(r);
            }
            double d0, d1, d2;
            if (detail::parse_real(p0, d0) && detail::parse_real(p1, d1) &&
                detail::parse_real(p2, d2)) {
                Range r;
                r.start = d0;
                r.step = d1;
                r.end = d2;
                r.integral = false;
                return Value(r);
            }
        }
    }
    return Value(std::string(s));
}

// Expands a range into the arithmetic sequence start, start+step, ...
// Every emitted value stays within [min(start,end), max(start,end)]; the end
// is included when reached (exactly for integers, within 1e-9*|step| for
// reals). Zero or wrong-direction steps are rejected.
inline std::vector<Value> expand_range(const Range& r, const std::string& where = {}) {
    if (r.step == 0) throw BadRange(where, "range step must be nonzero");
    if (r.end != r.start && (r.end - r.start) * r.step < 0)
        throw BadRange(where, "range step direction does not reach the end value");
    constexpr std::size_t kMaxLen = 1000000;
    std::vector<Value> out;
    if (r.integral) {
        auto start = static_cast<std::int64_t>(r.start);
        auto step = static_cast<std::int64_t>(r.step);
        auto end = static_cast<std::int64_t>(r.end);
        for (std::int64_t v = start; step > 0 ? v <= end : v >= end; v += step) {
            out.emplace_back(v);
            if (out.size() > kMaxLen) throw BadRange(where, "range expands to too many values");
        }
    } else {
        double tol = 1e-9 * std::abs(r.step);
        double lo = std::min(r.start, r.end) - tol;
        double hi = std::max(r.start, r.end) + tol;
        for (std::size_t k = 0;; ++k) {
            double v = r.start + static_cast<double>(k) * r.step;
            if (v < lo || v > hi) break;
            out.emplace_back(v);
            if (out.size() > kMaxLen) throw BadRange(where, "range expands to too many values");
        }
    }
    return out;
}

inline std::string Value::canonical_string() const {
    switch (kind()) {
    case ValueKind::string: return as_string();
    case ValueKind::integer: return std::to_string(as_integer());
    case ValueKind::real: return detail::shortest_double(as_real());
    case ValueKind::boolean: return as_boolean() ? "true" : "false";
    case ValueKind::range: {
        const Range& r = as_range();
        auto num = [&](double d) {
            if (r.integral) return std::to_string(static_cast<std::int64_t>(d));
            std::string s = detail::shortest_double(d);
            if (s.find('.') == std::string::npos && s.find('e') == std::string::npos)
                s += ".0";
            return s;
        };
        return num(r.start) + ":" + num(r.step) + ":" + num(r.end);
    }
    case ValueKind::list: {
        std::string out = "[";
        const ValueList& l = as_list();
        for (std::size_t i = 0; i < l.size(); ++i) {
            if (i) out += ", ";
            out += l[i].render_wdl();
        }
        return out + "]";
    }
    }
    return {};
}

inline std::string Value::render_wdl() const {
    switch (kind()) {
    case ValueKind::string: {
        const std::string& s = as_string();
        // Quote whenever the bare text would re-infer to something else.
        bool needs_quotes = s.empty() || s != detail::trim(s) || s.front() == '[' ||
                            s.front() == '\'' || s.front() == '"' || s.find(',') != std::string::npos;
        if (!needs_quotes) {
            Value round = infer_value(s);
            needs_quotes = !(round.is_string() && round.as_string() == s);
        }
        if (!needs_quotes) return s;
        std::string quoted = s.find('"') == std::string::npos ? "\"" + s + "\"" : "'" + s + "'";
        return quoted;
    }
    case ValueKind::real: {
        std::string s = detail::shortest_double(as_real());
        if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
            s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
            s += ".0";
        return s;
    }
    default: return canonical_string();
    }
}

namespace detail {

// FNV-1a, used for content hashes that must be stable across runs and builds.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex16(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

} // namespace detail

} // namespace sweepmill
