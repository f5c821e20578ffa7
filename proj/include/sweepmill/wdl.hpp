#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sweepmill/errors.hpp"
#include "sweepmill/value.hpp"

namespace sweepmill {

enum class DocFormat { yaml, json, ini };

enum class NodeKind { scalar, map, list };

// One node of the raw keyword-value tree. Map children are keyword entries,
// list children are items (key empty, possibly nested lists).
struct RawNode {
    NodeKind kind = NodeKind::scalar;
    std::string key;
    std::string scalar;
    bool quoted = false;
    std::vector<RawNode> children;
    int line = 0;
    std::string src;

    std::string where() const {
        if (src.empty() && line == 0) return {};
        return src + ":" + std::to_string(line);
    }
};

struct RawDocument {
    DocFormat format = DocFormat::yaml;
    std::string source = "<memory>";
    int position = -1;                // index in a merge list; -1 = by order
    std::vector<RawNode> tasks;       // key = task name, kind = map
    std::vector<RawNode> settings;    // top-level non-task entries
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

namespace detail {

struct SrcLine {
    int indent = 0;
    int number = 0;         // 1-based
    bool list_item = false;
    std::string key;        // empty for list items
    bool key_quoted = false;
    std::string rest;       // raw value text ("" when opening a block)
    bool rest_quoted = false;
};

inline bool is_comment_or_blank(std::string_view line) {
    std::string_view t = line;
    while (!t.empty() && (t.front() == ' ' || t.front() == '\t')) t.remove_prefix(1);
    return t.empty() || t.front() == '#' || t == "\r";
}

// Splits "key: value" at the first colon outside quotes. Quoted keys let a
// key itself contain the delimiter (substitute patterns need this).
inline void split_entry(std::string_view content, const std::string& where, SrcLine& out) {
    std::string_view s = content;
    std::size_t key_end = std::string_view::npos;
    std::size_t value_begin = 0;
    if (!s.empty() && (s.front() == '\'' || s.front() == '"')) {
        char q = s.front();
        std::size_t close = s.find(q, 1);
        if (close == std::string_view::npos)
            throw FormatError(where, "unterminated quoted keyword");
        std::size_t colon = s.find(':', close + 1);
        if (colon == std::string_view::npos)
            throw FormatError(where, "expected ':' after keyword");
        out.key = std::string(s.substr(1, close - 1));
        out.key_quoted = true;
        key_end = close;
        value_begin = colon + 1;
    } else {
        std::size_t colon = s.find(':');
        if (colon == std::string_view::npos)
            throw FormatError(where, "expected 'keyword: value' entry");
        out.key = std::string(trim(s.substr(0, colon)));
        key_end = colon;
        value_begin = colon + 1;
    }
    (void)key_end;
    if (out.key.empty()) throw FormatError(where, "empty keyword");
    std::string_view rest = trim(s.substr(value_begin));
    out.rest = std::string(rest);
}

inline std::vector<SrcLine> scan_lines(std::string_view text, const std::string& src) {
    std::vector<SrcLine> out;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++lineno;
        if (is_comment_or_blank(line)) continue;

        SrcLine rec;
        rec.number = lineno;
        std::size_t i = 0;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        rec.indent = static_cast<int>(i);
        std::string_view content = trim(line.substr(i));
        std::string where = src + ":" + std::to_string(lineno);
        if (content == "-" || content.substr(0, 2) == "- ") {
            rec.list_item = true;
            rec.rest = std::string(trim(content.substr(1)));
        } else {
            split_entry(content, where, rec);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// Recursive descent over the scanned lines. `kwdepth` counts keyword levels
// below the task header; more than two is rejected.
inline std::vector<RawNode> parse_children(const std::vector<SrcLine>& lines, std::size_t& i,
                                           int parent_indent, int kwdepth,
                                           const std::string& src) {
    std::vector<RawNode> nodes;
    int level_indent = -1;
    while (i < lines.size() && lines[i].indent > parent_indent) {
        const SrcLine& rec = lines[i];
        std::string where = src + ":" + std::to_string(rec.number);
        if (level_indent < 0) level_indent = rec.indent;
        if (rec.indent != level_indent)
            throw FormatError(where, "inconsistent indentation");

        if (rec.list_item) {
            // list items attach to the node opened by the preceding keyword
            throw FormatError(where, "list item without a keyword");
        }

        RawNode node;
        node.key = rec.key;
        node.line = rec.number;
        node.src = src;
        ++i;

        if (!rec.rest.empty()) {
            node.kind = NodeKind::scalar;
            node.scalar = rec.rest;
            node.quoted = false;
            if (i < lines.size() && lines[i].indent > level_indent)
                throw FormatError(src + ":" + std::to_string(lines[i].number),
                                  "unexpected indented block under a scalar entry");
        } else if (i < lines.size() && lines[i].indent > level_indent && lines[i].list_item) {
            node.kind = NodeKind::list;
            int item_indent = lines[i].indent;
            while (i < lines.size() && lines[i].indent == item_indent && lines[i].list_item) {
                RawNode item;
                item.kind = NodeKind::scalar;
                item.scalar = lines[i].rest;
                item.line = lines[i].number;
                item.src = src;
                node.children.push_back(std::move(item));
                ++i;
            }
            if (i < lines.size() && lines[i].indent > item_indent)
                throw FormatError(src + ":" + std::to_string(lines[i].number),
                                  "nested blocks under list items are not supported");
        } else if (i < lines.size() && lines[i].indent > level_indent) {
            if (kwdepth >= 2)
                throw DepthError(src + ":" + std::to_string(lines[i].number),
                                 "keyword-value nesting deeper than two levels below a task");
            node.kind = NodeKind::map;
            node.children = parse_children(lines, i, level_indent, kwdepth + 1, src);
        } else {
            // keyword with nothing after the colon: empty scalar
            node.kind = NodeKind::scalar;
            node.scalar.clear();
        }
        nodes.push_back(std::move(node));
    }
    return nodes;
}

// Last occurrence of a duplicated keyword wins; a warning records the drop.
inline void dedupe_children(RawNode& node, std::vector<std::string>& warnings) {
    for (RawNode& c : node.children) dedupe_children(c, warnings);
    if (node.kind != NodeKind::map) return;
    std::vector<RawNode> kept;
    for (RawNode& c : node.children) {
        auto it = std::find_if(kept.begin(), kept.end(),
                               [&](const RawNode& k) { return k.key == c.key; });
        if (it != kept.end()) {
            warnings.push_back(c.where() + ": duplicate keyword '" + c.key +
                               "', last occurrence wins");
            *it = std::move(c);
        } else {
            kept.push_back(std::move(c));
        }
    }
    node.children = std::move(kept);
}

inline void merge_map_nodes(RawNode& into, RawNode&& from, std::vector<std::string>& warnings);

inline RawDocument parse_yaml(std::string_view text, const std::string& src) {
    RawDocument doc;
    doc.format = DocFormat::yaml;
    doc.source = src;
    std::vector<SrcLine> lines = scan_lines(text, src);

    std::size_t i = 0;
    int top_indent = lines.empty() ? 0 : lines[0].indent;
    while (i < lines.size()) {
        const SrcLine& rec = lines[i];
        std::string where = src + ":" + std::to_string(rec.number);
        if (rec.indent != top_indent)
            throw FormatError(where, "unexpected indentation at top level");
        if (rec.list_item)
            throw FormatError(where, "list item without a keyword");

        if (rec.key == "task" || rec.key == "section") {
            if (rec.rest.empty())
                throw FormatError(where, "task header needs a name: 'task: <name>'");
            RawNode task;
            task.kind = NodeKind::map;
            task.key = rec.rest;
            // strip optional quotes around the task name
            if (task.key.size() >= 2 && (task.key.front() == '\'' || task.key.front() == '"') &&
                task.key.back() == task.key.front())
                task.key = task.key.substr(1, task.key.size() - 2);
            task.line = rec.number;
            task.src = src;
            ++i;
            task.children = parse_children(lines, i, top_indent, 1, src);
            auto it = std::find_if(doc.tasks.begin(), doc.tasks.end(),
                                   [&](const RawNode& t) { return t.key == task.key; });
            if (it != doc.tasks.end()) {
                doc.warnings.push_back(where + ": task '" + task.key +
                                       "' re-opened, entries merged");
                merge_map_nodes(*it, std::move(task), doc.warnings);
            } else {
                doc.tasks.push_back(std::move(task));
            }
        } else {
            // global setting entry
            RawNode node;
            node.key = rec.key;
            node.line = rec.number;
            node.src = src;
            ++i;
            if (!rec.rest.empty()) {
                node.kind = NodeKind::scalar;
                node.scalar = rec.rest;
            } else if (i < lines.size() && lines[i].indent > top_indent && lines[i].list_item) {
                node.kind = NodeKind::list;
                int item_indent = lines[i].indent;
                while (i < lines.size() && lines[i].indent == item_indent && lines[i].list_item) {
                    RawNode item;
                    item.kind = NodeKind::scalar;
                    item.scalar = lines[i].rest;
                    item.line = lines[i].number;
                    item.src = src;
                    node.children.push_back(std::move(item));
                    ++i;
                }
            } else if (i < lines.size() && lines[i].indent > top_indent) {
                throw FormatError(where, "global settings cannot have nested entries");
            } else {
                node.kind = NodeKind::scalar;
            }
            doc.settings.push_back(std::move(node));
        }
    }

    RawNode settings_holder;
    settings_holder.kind = NodeKind::map;
    settings_holder.children = std::move(doc.settings);
    dedupe_children(settings_holder, doc.warnings);
    doc.settings = std::move(settings_holder.children);
    for (RawNode& t : doc.tasks) dedupe_children(t, doc.warnings);
    return doc;
}

inline RawDocument parse_ini(std::string_view text, const std::string& src) {
    RawDocument doc;
    doc.format = DocFormat::ini;
    doc.source = src;
    RawNode* current = nullptr;

    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++lineno;
        if (is_comment_or_blank(line)) continue;
        std::string_view content = trim(line);
        std::string where = src + ":" + std::to_string(lineno);

        if (content.front() == '[') {
            if (content.back() != ']')
                throw FormatError(where, "unterminated section header");
            std::string name(trim(content.substr(1, content.size() - 2)));
            if (name.empty()) throw FormatError(where, "empty section name");
            RawNode task;
            task.kind = NodeKind::map;
            task.key = name;
            task.line = lineno;
            task.src = src;
            doc.tasks.push_back(std::move(task));
            current = &doc.tasks.back();
            continue;
        }

        // both '=' and ':' are accepted as the delimiter in INI
        std::size_t eq = content.find('=');
        std::size_t colon = content.find(':');
        std::size_t cut = std::min(eq, colon);
        if (cut == std::string_view::npos)
            throw FormatError(where, "expected 'keyword = value' entry");
        std::string key(trim(content.substr(0, cut)));
        std::string rest(trim(content.substr(cut + 1)));
        if (key.empty()) throw FormatError(where, "empty keyword");

        RawNode leaf;
        leaf.kind = NodeKind::scalar;
        leaf.scalar = rest;
        leaf.line = lineno;
        leaf.src = src;

        // dotted keys nest one level: environ.OMP_NUM_THREADS = 4
        std::size_t dot = key.find('.');
        if (dot != std::string::npos) {
            std::string outer = key.substr(0, dot);
            std::string inner = key.substr(dot + 1);
            if (outer.empty() || inner.empty() || inner.find('.') != std::string::npos)
                throw DepthError(where, "dotted keys nest at most one level");
            leaf.key = inner;
            std::vector<RawNode>& dest = current ? current->children : doc.settings;
            auto it = std::find_if(dest.begin(), dest.end(),
                                   [&](const RawNode& n) { return n.key == outer; });
            if (it == dest.end()) {
                RawNode holder;
                holder.kind = NodeKind::map;
                holder.key = outer;
                holder.line = lineno;
                holder.src = src;
                holder.children.push_back(std::move(leaf));
                dest.push_back(std::move(holder));
            } else {
                if (it->kind != NodeKind::map)
                    throw FormatError(where, "keyword '" + outer + "' is both scalar and dict");
                it->children.push_back(std::move(leaf));
            }
        } else {
            leaf.key = key;
            (current ? current->children : doc.settings).push_back(std::move(leaf));
        }
    }

    RawNode settings_holder;
    settings_holder.kind = NodeKind::map;
    settings_holder.children = std::move(doc.settings);
    dedupe_children(settings_holder, doc.warnings);
    doc.settings = std::move(settings_holder.children);
    for (RawNode& t : doc.tasks) dedupe_children(t, doc.warnings);
    return doc;
}

inline std::string render_json_number(const nlohmann::json& j) {
    if (j.is_number_float()) {
        std::string s = shortest_double(j.get<double>());
        if (s.find('.') == std::string::npos && s.find('e') == std::string::npos) s += ".0";
        return s;
    }
    return j.dump();
}

inline RawNode json_to_node(const std::string& key, const nlohmann::json& j, int kwdepth,
                            const std::string& src, const std::string& ptr) {
    RawNode node;
    node.key = key;
    node.src = src;
    if (j.is_object()) {
        if (kwdepth >= 2)
            throw DepthError(src, "object '" + ptr + "' nests deeper than two keyword levels");
        node.kind = NodeKind::map;
        for (auto it = j.begin(); it != j.end(); ++it)
            node.children.push_back(
                json_to_node(it.key(), it.value(), kwdepth + 1, src, ptr + "/" + it.key()));
    } else if (j.is_array()) {
        node.kind = NodeKind::list;
        for (const auto& el : j) {
            if (el.is_object())
                throw FormatError(src, "objects inside arrays are not supported ('" + ptr + "')");
            node.children.push_back(json_to_node("", el, kwdepth, src, ptr + "[]"));
        }
    } else {
        node.kind = NodeKind::scalar;
        if (j.is_string()) {
            node.scalar = j.get<std::string>();
            node.quoted = true;
        } else if (j.is_number()) {
            node.scalar = render_json_number(j);
        } else if (j.is_boolean()) {
            node.scalar = j.get<bool>() ? "true" : "false";
        } else if (j.is_null()) {
            node.scalar.clear();
        }
    }
    return node;
}

inline RawDocument parse_json_doc(std::string_view text, const std::string& src) {
    // '#' line comments are allowed in every input format; strip before parsing
    std::string stripped;
    stripped.reserve(text.size());
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        std::string_view t = trim(line);
        if (!t.empty() && t.front() == '#')
            stripped += "";
        else
            stripped.append(line);
        stripped += '\n';
    }

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(stripped);
    } catch (const nlohmann::json::parse_error& e) {
        // recover a line number from the byte offset
        std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
        int line = 1 + static_cast<int>(std::count(stripped.begin(),
                                                   stripped.begin() +
                                                       static_cast<std::ptrdiff_t>(
                                                           std::min(byte, stripped.size())),
                                                   '\n'));
        throw FormatError(src + ":" + std::to_string(line), "invalid JSON: " + std::string(e.what()));
    }
    if (!j.is_object())
        throw FormatError(src, "top level must be an object of tasks and settings");

    RawDocument doc;
    doc.format = DocFormat::json;
    doc.source = src;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.value().is_object()) {
            RawNode task = json_to_node(it.key(), it.value(), 0, src, it.key());
            doc.tasks.push_back(std::move(task));
        } else {
            doc.settings.push_back(json_to_node(it.key(), it.value(), 1, src, it.key()));
        }
    }
    return doc;
}

} // namespace detail

inline DocFormat detect_format(const std::filesystem::path& path,
                               std::optional<DocFormat> hint = {}) {
    if (hint) return *hint;
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".yml" || ext == ".yaml") return DocFormat::yaml;
    if (ext == ".json") return DocFormat::json;
    if (ext == ".ini") return DocFormat::ini;
    throw FormatError(path.string(), "cannot detect format from extension '" + ext +
                                         "' (expected .yml/.yaml, .json, or .ini)");
}

inline RawDocument parse_string(std::string_view text, DocFormat format,
                                const std::string& source = "<memory>") {
    switch (format) {
    case DocFormat::yaml: return detail::parse_yaml(text, source);
    case DocFormat::json: return detail::parse_json_doc(text, source);
    case DocFormat::ini: return detail::parse_ini(text, source);
    }
    throw FormatError(source, "unknown format");
}

inline RawDocument parse_file(const std::filesystem::path& path,
                              std::optional<DocFormat> hint = {}) {
    DocFormat format = detect_format(path, hint);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError(path.string(), "cannot open file");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IOError(path.string(), "read failed");
    return parse_string(buf.str(), format, path.string());
}

// ---------------------------------------------------------------------------
// merging
// ---------------------------------------------------------------------------

namespace detail {

// Later documents override earlier ones keyword-by-keyword at the deepest
// level: maps merge recursively, scalars and lists are replaced wholesale.
inline void merge_map_nodes(RawNode& into, RawNode&& from, std::vector<std::string>& warnings) {
    for (RawNode& f : from.children) {
        auto it = std::find_if(into.children.begin(), into.children.end(),
                               [&](const RawNode& n) { return n.key == f.key; });
        if (it == into.children.end()) {
            into.children.push_back(std::move(f));
        } else if (it->kind == NodeKind::map && f.kind == NodeKind::map) {
            merge_map_nodes(*it, std::move(f), warnings);
        } else {
            *it = std::move(f);
        }
    }
}

} // namespace detail

inline RawDocument merge_documents(std::vector<RawDocument> docs) {
    if (docs.empty()) throw FormatError("", "merge needs at least one document");
    for (std::size_t i = 0; i < docs.size(); ++i)
        if (docs[i].position < 0) docs[i].position = static_cast<int>(i);

    RawDocument merged;
    merged.format = docs.front().format;
    merged.source = docs.size() == 1 ? docs.front().source : "<merged>";
    for (RawDocument& doc : docs) {
        for (std::string& w : doc.warnings) merged.warnings.push_back(std::move(w));
        // settings: later wins by key
        for (RawNode& s : doc.settings) {
            auto it = std::find_if(merged.settings.begin(), merged.settings.end(),
                                   [&](const RawNode& n) { return n.key == s.key; });
            if (it == merged.settings.end())
                merged.settings.push_back(std::move(s));
            else
                *it = std::move(s);
        }
        for (RawNode& t : doc.tasks) {
            auto it = std::find_if(merged.tasks.begin(), merged.tasks.end(),
                                   [&](const RawNode& n) { return n.key == t.key; });
            if (it == merged.tasks.end()) {
                it = merged.tasks.insert(merged.tasks.end(), RawNode{});
                it->kind = NodeKind::map;
                it->key = t.key;
                it->line = t.line;
                it->src = t.src;
                it->scalar = std::to_string(doc.position); // position of last command writer
                it->children = std::move(t.children);
                continue;
            }
            // conflicting command definitions are only an error when no
            // override ordering is implied by the file list positions
            auto find_cmd = [](const RawNode& n) -> const RawNode* {
                for (const RawNode& c : n.children)
                    if (c.key == "command") return &c;
                return nullptr;
            };
            const RawNode* old_cmd = find_cmd(*it);
            const RawNode* new_cmd = find_cmd(t);
            if (old_cmd && new_cmd && old_cmd->scalar != new_cmd->scalar &&
                std::to_string(doc.position) == it->scalar) {
                throw ConflictError(new_cmd->where(),
                                    "task '" + t.key + "' defines command '" + new_cmd->scalar +
                                        "' conflicting with '" + old_cmd->scalar +
                                        "' at the same file-list position");
            }
            if (new_cmd) it->scalar = std::to_string(doc.position);
            detail::merge_map_nodes(*it, std::move(t), merged.warnings);
        }
    }
    return merged;
}

// ---------------------------------------------------------------------------
// validated spec
// ---------------------------------------------------------------------------

struct SamplingSpec {
    enum class Dist { uniform, random };
    Dist dist = Dist::uniform;
    std::int64_t count = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const SamplingSpec&, const SamplingSpec&) = default;
};

enum class ParallelMode { local, ssh, mpi };
enum class BatchSystem { none, pbs };

inline const char* to_string(ParallelMode m) {
    switch (m) {
    case ParallelMode::local: return "local";
    case ParallelMode::ssh: return "ssh";
    case ParallelMode::mpi: return "mpi";
    }
    return "?";
}

inline const char* to_string(BatchSystem b) {
    return b == BatchSystem::pbs ? "pbs" : "none";
}

struct TaskSpec {
    std::string task;
    std::string command;
    std::string name;
    std::vector<std::pair<std::string, Value>> environ;
    std::vector<std::string> after;
    std::vector<std::pair<std::string, std::string>> infiles;
    std::vector<std::pair<std::string, std::string>> outfiles;
    std::vector<std::pair<std::string, Value>> substitute;
    ParallelMode parallel = ParallelMode::local;
    BatchSystem batch = BatchSystem::none;
    std::int64_t nnodes = 1;
    std::int64_t ppnode = 1;
    std::vector<std::string> hosts;
    std::vector<std::vector<std::string>> fixed_groups;
    std::optional<SamplingSpec> sampling;
    std::vector<std::pair<std::string, Value>> user_params;

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;

    const Value* find_user_param(const std::string& k) const {
        for (const auto& [key, v] : user_params)
            if (key == k) return &v;
        return nullptr;
    }
    const Value* find_environ(const std::string& k) const {
        for (const auto& [key, v] : environ)
            if (key == k) return &v;
        return nullptr;
    }
    const Value* find_substitute(const std::string& k) const {
        for (const auto& [key, v] : substitute)
            if (key == k) return &v;
        return nullptr;
    }
    const std::string* find_infile(const std::string& k) const {
        for (const auto& [key, v] : infiles)
            if (key == k) return &v;
        return nullptr;
    }
    const std::string* find_outfile(const std::string& k) const {
        for (const auto& [key, v] : outfiles)
            if (key == k) return &v;
        return nullptr;
    }
};

struct GlobalSettings {
    std::optional<ParallelMode> parallel;
    std::optional<BatchSystem> batch;
    std::optional<std::int64_t> nnodes;
    std::optional<std::int64_t> ppnode;
    std::vector<std::string> hosts;

    friend bool operator==(const GlobalSettings&, const GlobalSettings&) = default;
};

struct StudySpec {
    std::vector<TaskSpec> tasks;
    GlobalSettings settings;
    std::vector<std::string> warnings; // excluded from equality and hashing

    bool operator==(const StudySpec& o) const {
        return tasks == o.tasks && settings == o.settings;
    }

    const TaskSpec* find_task(const std::string& name) const {
        for (const TaskSpec& t : tasks)
            if (t.task == name) return &t;
        return nullptr;
    }
};

inline const std::set<std::string>& reserved_keywords() {
    static const std::set<std::string> kw = {
        "command", "name",   "environ", "after",  "infiles",  "outfiles", "substitute",
        "parallel", "batch", "nnodes",  "ppnode", "hosts",    "fixed",    "sampling"};
    return kw;
}

namespace detail {

inline Value node_to_value(const RawNode& n) {
    if (n.kind == NodeKind::list) {
        ValueList items;
        for (const RawNode& c : n.children) items.push_back(node_to_value(c));
        return Value(std::move(items));
    }
    return infer_value(n.scalar, n.quoted, n.where());
}

inline std::string node_to_string(const RawNode& n, const char* what) {
    if (n.kind != NodeKind::scalar)
        throw TypeError(n.where(), std::string(what) + " must be a scalar string");
    Value v = infer_value(n.scalar, n.quoted, n.where());
    if (v.is_list() || v.is_range())
        throw TypeError(n.where(), std::string(what) + " must be a single string");
    return v.canonical_string();
}

inline std::vector<std::string> node_to_string_list(const RawNode& n, const char* what) {
    Value v = node_to_value(n);
    std::vector<std::string> out;
    if (v.is_list()) {
        for (const Value& el : v.as_list()) {
            if (el.is_list() || el.is_range())
                throw TypeError(n.where(), std::string(what) + " entries must be strings");
            out.push_back(el.canonical_string());
        }
    } else if (v.is_range()) {
        throw TypeError(n.where(), std::string(what) + " must be a list of strings");
    } else {
        out.push_back(v.canonical_string());
    }
    return out;
}

inline std::int64_t node_to_positive_int(const RawNode& n, const char* what) {
    Value v = node_to_value(n);
    if (!v.is_integer() || v.as_integer() <= 0)
        throw TypeError(n.where(), std::string(what) + " must be a positive integer");
    return v.as_integer();
}

inline ParallelMode node_to_parallel(const RawNode& n) {
    std::string s = node_to_string(n, "parallel");
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "local") return ParallelMode::local;
    if (s == "ssh") return ParallelMode::ssh;
    if (s == "mpi") return ParallelMode::mpi;
    throw TypeError(n.where(), "parallel must be one of local, ssh, mpi");
}

inline BatchSystem node_to_batch(const RawNode& n) {
    std::string s = node_to_string(n, "batch");
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "none") return BatchSystem::none;
    if (s == "pbs") return BatchSystem::pbs;
    throw TypeError(n.where(), "batch must be one of none, pbs");
}

inline void validate_range_value(const Value& v, const std::string& where) {
    if (v.is_range()) {
        expand_range(v.as_range(), where); // throws BadRange on bad step
    } else if (v.is_list()) {
        for (const Value& el : v.as_list()) validate_range_value(el, where);
    }
}

inline std::vector<std::vector<std::string>> node_to_fixed_groups(const RawNode& n) {
    Value v = node_to_value(n);
    std::vector<std::vector<std::string>> groups;
    auto to_group = [&](const Value& g) {
        std::vector<std::string> group;
        if (g.is_list()) {
            for (const Value& el : g.as_list()) {
                if (!el.is_scalar())
                    throw TypeError(n.where(), "fixed group members must be keywords");
                group.push_back(el.canonical_string());
            }
        } else if (g.is_scalar()) {
            group.push_back(g.canonical_string());
        } else {
            throw TypeError(n.where(), "fixed must list keywords");
        }
        return group;
    };
    if (v.is_list() && !v.as_list().empty() &&
        std::all_of(v.as_list().begin(), v.as_list().end(),
                    [](const Value& el) { return el.is_list(); })) {
        for (const Value& g : v.as_list()) groups.push_back(to_group(g));
    } else {
        groups.push_back(to_group(v));
    }
    for (const auto& g : groups)
        if (g.empty()) throw BadFixedGroup(n.where(), "fixed group must list at least one keyword");
    return groups;
}

inline SamplingSpec node_to_sampling(const RawNode& n) {
    if (n.kind != NodeKind::map)
        throw TypeError(n.where(),
                        "sampling must be a dictionary with distribution, count and optional seed");
    SamplingSpec s;
    bool have_dist = false, have_count = false;
    for (const RawNode& c : n.children) {
        if (c.key == "distribution") {
            std::string d = node_to_string(c, "sampling distribution");
            std::transform(d.begin(), d.end(), d.begin(),
                           [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
            if (d == "uniform")
                s.dist = SamplingSpec::Dist::uniform;
            else if (d == "random")
                s.dist = SamplingSpec::Dist::random;
            else
                throw TypeError(c.where(), "sampling distribution must be uniform or random");
            have_dist = true;
        } else if (c.key == "count") {
            s.count = node_to_positive_int(c, "sampling count");
            have_count = true;
        } else if (c.key == "seed") {
            Value v = node_to_value(c);
            if (!v.is_integer() || v.as_integer() < 0)
                throw TypeError(c.where(), "sampling seed must be a non-negative integer");
            s.seed = static_cast<std::uint64_t>(v.as_integer());
        } else {
            throw TypeError(c.where(), "unknown sampling entry '" + c.key + "'");
        }
    }
    if (!have_dist) throw TypeError(n.where(), "sampling needs a distribution");
    if (!have_count) throw TypeError(n.where(), "sampling needs a count");
    return s;
}

inline void fill_dict(const RawNode& n, std::vector<std::pair<std::string, Value>>& dest,
                      const char* what) {
    if (n.kind == NodeKind::scalar && n.scalar.empty() && n.children.empty()) return;
    if (n.kind != NodeKind::map)
        throw TypeError(n.where(), std::string(what) + " must be a dictionary of entries");
    for (const RawNode& c : n.children) {
        Value v = node_to_value(c);
        validate_range_value(v, c.where());
        dest.emplace_back(c.key, std::move(v));
    }
}

inline void fill_path_dict(const RawNode& n,
                           std::vector<std::pair<std::string, std::string>>& dest,
                           const char* what) {
    if (n.kind == NodeKind::scalar && n.scalar.empty() && n.children.empty()) return;
    if (n.kind != NodeKind::map)
        throw TypeError(n.where(), std::string(what) + " must be a dictionary of paths");
    for (const RawNode& c : n.children) dest.emplace_back(c.key, node_to_string(c, what));
}

} // namespace detail

inline StudySpec validate(const RawDocument& doc) {
    StudySpec spec;
    spec.warnings = doc.warnings;

    for (const RawNode& s : doc.settings) {
        if (s.key == "parallel")
            spec.settings.parallel = detail::node_to_parallel(s);
        else if (s.key == "batch")
            spec.settings.batch = detail::node_to_batch(s);
        else if (s.key == "nnodes")
            spec.settings.nnodes = detail::node_to_positive_int(s, "nnodes");
        else if (s.key == "ppnode")
            spec.settings.ppnode = detail::node_to_positive_int(s, "ppnode");
        else if (s.key == "hosts")
            spec.settings.hosts = detail::node_to_string_list(s, "hosts");
        else
            throw TypeError(s.where(), "'" + s.key + "' is not a global setting (expected one of "
                                                     "parallel, batch, nnodes, ppnode, hosts)");
    }

    for (const RawNode& t : doc.tasks) {
        TaskSpec task;
        task.task = t.key;
        if (spec.settings.parallel) task.parallel = *spec.settings.parallel;
        if (spec.settings.batch) task.batch = *spec.settings.batch;
        if (spec.settings.nnodes) task.nnodes = *spec.settings.nnodes;
        if (spec.settings.ppnode) task.ppnode = *spec.settings.ppnode;
        task.hosts = spec.settings.hosts;

        bool have_command = false;
        for (const RawNode& e : t.children) {
            const std::string& k = e.key;
            if (k == "command") {
                task.command = detail::node_to_string(e, "command");
                have_command = true;
            } else if (k == "name") {
                task.name = detail::node_to_string(e, "name");
            } else if (k == "environ") {
                detail::fill_dict(e, task.environ, "environ");
            } else if (k == "after") {
                task.after = detail::node_to_string_list(e, "after");
            } else if (k == "infiles") {
                detail::fill_path_dict(e, task.infiles, "infiles");
            } else if (k == "outfiles") {
                detail::fill_path_dict(e, task.outfiles, "outfiles");
            } else if (k == "substitute") {
                detail::fill_dict(e, task.substitute, "substitute");
                // normalize: every substitute entry holds a list of candidates
                for (auto& [pattern, v] : task.substitute) {
                    if (v.is_range())
                        v = Value(expand_range(v.as_range(), e.where()));
                    else if (!v.is_list())
                        v = Value(ValueList{v});
                    try {
                        std::regex probe(pattern, std::regex::ECMAScript);
                    } catch (const std::regex_error& err) {
                        throw BadRegex(e.where(), "substitute pattern '" + pattern +
                                                      "' is not a valid regex: " + err.what());
                    }
                }
            } else if (k == "parallel") {
                task.parallel = detail::node_to_parallel(e);
            } else if (k == "batch") {
                task.batch = detail::node_to_batch(e);
            } else if (k == "nnodes") {
                task.nnodes = detail::node_to_positive_int(e, "nnodes");
            } else if (k == "ppnode") {
                task.ppnode = detail::node_to_positive_int(e, "ppnode");
            } else if (k == "hosts") {
                task.hosts = detail::node_to_string_list(e, "hosts");
            } else if (k == "fixed") {
                task.fixed_groups = detail::node_to_fixed_groups(e);
            } else if (k == "sampling") {
                task.sampling = detail::node_to_sampling(e);
            } else {
                Value v = detail::node_to_value(e);
                detail::validate_range_value(v, e.where());
                task.user_params.emplace_back(k, std::move(v));
            }
        }
        if (!have_command)
            throw MissingCommand(t.where(), "task '" + task.task + "' has no command");

        for (const auto& group : task.fixed_groups) {
            for (const std::string& kw : group) {
                std::string bare = kw;
                if (bare.rfind("environ.", 0) == 0) bare = bare.substr(8);
                if (kw.rfind("substitute.", 0) == 0) bare = kw.substr(11);
                if (!task.find_user_param(kw) && !task.find_environ(bare) &&
                    !task.find_substitute(bare))
                    throw BadFixedGroup(t.where(), "fixed keyword '" + kw +
                                                       "' is not a parameter of task '" +
                                                       task.task + "'");
            }
        }

        if (spec.find_task(task.task))
            throw FormatError(t.where(), "duplicate task name '" + task.task + "'");
        spec.tasks.push_back(std::move(task));
    }

    for (const TaskSpec& t : spec.tasks)
        for (const std::string& dep : t.after)
            if (!spec.find_task(dep))
                throw UnknownTaskRef("task '" + t.task + "' lists after: '" + dep +
                                     "' which is not a task in this study");

    int sampling_count = 0;
    for (const TaskSpec& t : spec.tasks)
        if (t.sampling) ++sampling_count;
    if (sampling_count > 1)
        throw TypeError("sampling may be declared by at most one task per study");

    return spec;
}

// ---------------------------------------------------------------------------
// canonical serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::string render_key(const std::string& k) {
    bool plain = !k.empty() && k.find(':') == std::string::npos &&
                 k.find('#') == std::string::npos && k.front() != '\'' && k.front() != '"' &&
                 k.front() != '[' && k.front() != '-' && k == std::string(trim(k));
    if (plain) return k;
    return k.find('"') == std::string::npos ? "\"" + k + "\"" : "'" + k + "'";
}

inline std::string render_string_list(const std::vector<std::string>& xs) {
    std::string out = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ", ";
        out += Value(xs[i]).render_wdl();
    }
    return out + "]";
}

} // namespace detail

// Canonical WDL-YAML form. Re-parsing and validating the output yields an
// equal StudySpec; the study content hash is taken over these bytes.
inline std::string serialize_canonical(const StudySpec& spec) {
    std::ostringstream out;
    const GlobalSettings& g = spec.settings;
    if (g.parallel) out << "parallel: " << to_string(*g.parallel) << "\n";
    if (g.batch) out << "batch: " << to_string(*g.batch) << "\n";
    if (g.nnodes) out << "nnodes: " << *g.nnodes << "\n";
    if (g.ppnode) out << "ppnode: " << *g.ppnode << "\n";
    if (!g.hosts.empty()) out << "hosts: " << detail::render_string_list(g.hosts) << "\n";

    for (const TaskSpec& t : spec.tasks) {
        out << "task: " << detail::render_key(t.task) << "\n";
        out << "  command: " << Value(t.command).render_wdl() << "\n";
        if (!t.name.empty()) out << "  name: " << Value(t.name).render_wdl() << "\n";
        if (!t.after.empty()) out << "  after: " << detail::render_string_list(t.after) << "\n";
        if (!t.environ.empty()) {
            out << "  environ:\n";
            for (const auto& [k, v] : t.environ)
                out << "    " << detail::render_key(k) << ": " << v.render_wdl() << "\n";
        }
        if (!t.infiles.empty()) {
            out << "  infiles:\n";
            for (const auto& [k, v] : t.infiles)
                out << "    " << detail::render_key(k) << ": " << Value(v).render_wdl() << "\n";
        }
        if (!t.outfiles.empty()) {
            out << "  outfiles:\n";
            for (const auto& [k, v] : t.outfiles)
                out << "    " << detail::render_key(k) << ": " << Value(v).render_wdl() << "\n";
        }
        if (!t.substitute.empty()) {
            out << "  substitute:\n";
            for (const auto& [k, v] : t.substitute)
                out << "    " << detail::render_key(k) << ": " << v.render_wdl() << "\n";
        }
        ParallelMode dflt_parallel = g.parallel.value_or(ParallelMode::local);
        BatchSystem dflt_batch = g.batch.value_or(BatchSystem::none);
        std::int64_t dflt_nnodes = g.nnodes.value_or(1);
        std::int64_t dflt_ppnode = g.ppnode.value_or(1);
        if (t.parallel != dflt_parallel) out << "  parallel: " << to_string(t.parallel) << "\n";
        if (t.batch != dflt_batch) out << "  batch: " << to_string(t.batch) << "\n";
        if (t.nnodes != dflt_nnodes) out << "  nnodes: " << t.nnodes << "\n";
        if (t.ppnode != dflt_ppnode) out << "  ppnode: " << t.ppnode << "\n";
        if (t.hosts != g.hosts) out << "  hosts: " << detail::render_string_list(t.hosts) << "\n";
        if (!t.fixed_groups.empty()) {
            out << "  fixed: [";
            for (std::size_t i = 0; i < t.fixed_groups.size(); ++i) {
                if (i) out << ", ";
                out << detail::render_string_list(t.fixed_groups[i]);
            }
            out << "]\n";
        }
        if (t.sampling) {
            out << "  sampling:\n";
            out << "    distribution: "
                << (t.sampling->dist == SamplingSpec::Dist::uniform ? "uniform" : "random") << "\n";
            out << "    count: " << t.sampling->count << "\n";
            out << "    seed: " << t.sampling->seed << "\n";
        }
        for (const auto& [k, v] : t.user_params)
            out << "  " << detail::render_key(k) << ": " << v.render_wdl() << "\n";
    }
    return out.str();
}

inline std::uint64_t spec_hash(const StudySpec& spec) {
    return detail::fnv1a64(serialize_canonical(spec));
}

// Convenience: parse, merge and validate a list of parameter files.
inline StudySpec load_study(const std::vector<std::filesystem::path>& files,
                            std::optional<DocFormat> hint = {}) {
    std::vector<RawDocument> docs;
    docs.reserve(files.size());
    for (const auto& f : files) docs.push_back(parse_file(f, hint));
    return validate(merge_documents(std::move(docs)));
}

} // namespace sweepmill
