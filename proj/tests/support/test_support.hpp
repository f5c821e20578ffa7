#pragma once

// Shared test helpers: temp dirs, an independent nested-loop combination
// oracle, a random spec generator, a line-oriented replacement oracle and a
// minimal DOT parser. Everything here stays independent of the library code
// paths it is used to check.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sweepmill/value.hpp"

namespace testsupport {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "sweepmill-test") {
        std::string tmpl = (std::filesystem::temp_directory_path() / (tag + ".XXXXXX")).string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---------------------------------------------------------------------------
// brute-force combination oracle
// ---------------------------------------------------------------------------

// One oracle dimension: choice j binds one or more (key, value) pairs. A
// free parameter contributes single-pair choices; a fixed group contributes
// one multi-pair choice per shared index.
struct OracleDim {
    std::vector<std::vector<std::pair<std::string, sweepmill::Value>>> choices;
};

using OracleTuple = std::map<std::string, sweepmill::Value>;

inline void oracle_recurse(const std::vector<OracleDim>& dims, std::size_t d, OracleTuple& acc,
                           std::vector<OracleTuple>& out) {
    if (d == dims.size()) {
        out.push_back(acc);
        return;
    }
    for (const auto& choice : dims[d].choices) {
        for (const auto& [k, v] : choice) acc[k] = v;
        oracle_recurse(dims, d + 1, acc, out);
        for (const auto& [k, v] : choice) acc.erase(k);
    }
}

// Plain nested loops over the dimensions, nothing shared with the library's
// odometer implementation.
inline std::vector<OracleTuple> oracle_enumerate(const std::vector<OracleDim>& dims) {
    std::vector<OracleTuple> out;
    OracleTuple acc;
    oracle_recurse(dims, 0, acc, out);
    return out;
}

inline std::set<OracleTuple> oracle_set(const std::vector<OracleDim>& dims) {
    auto v = oracle_enumerate(dims);
    return {v.begin(), v.end()};
}

// ---------------------------------------------------------------------------
// line-oriented replacement oracle
// ---------------------------------------------------------------------------

// Applies a regex replacement line by line; used to cross-check whole-file
// global substitution.
inline std::string replace_by_lines(const std::string& content, const std::string& pattern,
                                    const std::string& replacement) {
    std::regex re(pattern);
    std::istringstream in(content);
    std::ostringstream out;
    std::string line;
    bool first = true;
    bool trailing_newline = !content.empty() && content.back() == '\n';
    while (std::getline(in, line)) {
        if (!first) out << "\n";
        first = false;
        out << std::regex_replace(line, re, replacement);
    }
    if (trailing_newline) out << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// minimal DOT parser
// ---------------------------------------------------------------------------

// Checks the emitted text against a small slice of the DOT grammar and
// counts declared nodes and edges.
struct DotSummary {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t clusters = 0;
};

class DotParser {
public:
    explicit DotParser(std::string text) : text_(std::move(text)) {}

    DotSummary parse() {
        DotSummary summary;
        expect_word("digraph");
        token(); // graph name (optional in general; ours always has one)
        expect("{");
        parse_body(summary);
        skip_ws();
        if (pos_ != text_.size()) fail("trailing content after closing brace");
        return summary;
    }

private:
    void parse_body(DotSummary& summary) {
        while (true) {
            skip_ws();
            if (pos_ >= text_.size()) fail("unterminated graph body");
            if (text_[pos_] == '}') {
                ++pos_;
                return;
            }
            std::string tok = token();
            if (tok == "subgraph") {
                std::string name = token();
                if (name.rfind("cluster", 0) == 0) ++summary.clusters;
                expect("{");
                parse_body(summary);
                continue;
            }
            if (tok.empty()) fail("expected a statement");
            skip_ws();
            if (peek('=')) { // graph attribute: rankdir=LR;
                ++pos_;
                token();
                expect(";");
                continue;
            }
            if (peek('[')) { // node defaults or node statement
                parse_attrs();
                expect(";");
                if (tok != "node" && tok != "edge" && tok != "graph") ++summary.nodes;
                continue;
            }
            if (text_.compare(pos_, 2, "->") == 0) {
                pos_ += 2;
                std::string to = token();
                if (to.empty()) fail("edge without a target");
                skip_ws();
                if (peek('[')) parse_attrs();
                expect(";");
                ++summary.edges;
                continue;
            }
            if (peek(';')) { // bare node
                ++pos_;
                ++summary.nodes;
                continue;
            }
            fail("unrecognized statement near '" + tok + "'");
        }
    }

    void parse_attrs() {
        expect("[");
        while (true) {
            std::string key = token();
            if (key.empty()) fail("empty attribute name");
            expect("=");
            std::string value = token();
            skip_ws();
            if (peek(',')) {
                ++pos_;
                continue;
            }
            expect("]");
            return;
        }
    }

    void skip_ws() {
        while (pos_ < text_.size() &&
               (text_[pos_] == ' ' || text_[pos_] == '\n' || text_[pos_] == '\t' ||
                text_[pos_] == '\r'))
            ++pos_;
    }

    bool peek(char c) { return pos_ < text_.size() && text_[pos_] == c; }

    std::string token() {
        skip_ws();
        if (pos_ >= text_.size()) return {};
        if (text_[pos_] == '"') {
            std::string out;
            ++pos_;
            while (pos_ < text_.size() && text_[pos_] != '"') {
                if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) ++pos_;
                out += text_[pos_++];
            }
            if (pos_ >= text_.size()) fail("unterminated quoted identifier");
            ++pos_;
            return out.empty() ? "\"\"" : out;
        }
        std::string out;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
                text_[pos_] == '.' || text_[pos_] == '#' || text_[pos_] == '-'))
            out += text_[pos_++];
        return out;
    }

    void expect(const std::string& s) {
        skip_ws();
        if (text_.compare(pos_, s.size(), s) != 0)
            fail("expected '" + s + "' at offset " + std::to_string(pos_));
        pos_ += s.size();
    }

    void expect_word(const std::string& s) {
        std::string tok = token();
        if (tok != s) fail("expected '" + s + "', got '" + tok + "'");
    }

    [[noreturn]] void fail(const std::string& msg) {
        throw std::runtime_error("dot parse error: " + msg);
    }

    std::string text_;
    std::size_t pos_ = 0;
};

inline DotSummary parse_dot(const std::string& text) { return DotParser(text).parse(); }

} // namespace testsupport
