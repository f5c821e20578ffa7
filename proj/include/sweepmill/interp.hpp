#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sweepmill/combinator.hpp"
#include "sweepmill/errors.hpp"
#include "sweepmill/wdl.hpp"

namespace sweepmill {

// A ${...} reference. One part means a keyword of the current task; two
// parts are either ${keyword:value} sub-selection into a dictionary keyword
// of the current task or ${task:keyword}, disambiguated at resolve time;
// three parts are ${task:keyword:value}.
struct InterpRef {
    std::vector<std::string> parts;
    friend bool operator==(const InterpRef&, const InterpRef&) = default;
};

struct InterpSegment {
    bool is_ref = false;
    std::string literal;
    InterpRef ref;
    friend bool operator==(const InterpSegment&, const InterpSegment&) = default;
};

struct InterpExpr {
    std::string raw;
    std::vector<InterpSegment> segments;

    bool has_refs() const {
        for (const InterpSegment& s : segments)
            if (s.is_ref) return true;
        return false;
    }
};

// Splits a template into literal and reference segments. `$${` escapes a
// literal `${`. Unbalanced braces, empty references, nested references and
// references deeper than task:keyword:value are rejected.
inline InterpExpr scan(std::string_view tmpl) {
    InterpExpr expr;
    expr.raw = std::string(tmpl);
    std::string lit;
    std::size_t i = 0;
    auto flush = [&]() {
        if (!lit.empty()) {
            InterpSegment seg;
            seg.literal = std::move(lit);
            lit.clear();
            expr.segments.push_back(std::move(seg));
        }
    };
    while (i < tmpl.size()) {
        if (tmpl.compare(i, 3, "$${") == 0) {
            lit += "${";
            i += 3;
            continue;
        }
        if (tmpl.compare(i, 2, "${") == 0) {
            std::size_t close = tmpl.find('}', i + 2);
            std::size_t nested = tmpl.find("${", i + 2);
            if (close == std::string_view::npos)
                throw SyntaxError("unbalanced '${' in template: " + expr.raw);
            if (nested != std::string_view::npos && nested < close)
                throw SyntaxError("nested '${' inside a reference: " + expr.raw);
            std::string_view body = tmpl.substr(i + 2, close - i - 2);
            if (detail::trim(body).empty())
                throw SyntaxError("empty reference '${}' in template: " + expr.raw);
            InterpSegment seg;
            seg.is_ref = true;
            std::size_t start = 0;
            while (true) {
                std::size_t colon = body.find(':', start);
                std::string_view part = body.substr(
                    start, colon == std::string_view::npos ? std::string_view::npos
                                                           : colon - start);
                part = detail::trim(part);
                if (part.empty())
                    throw SyntaxError("empty reference component in '${" + std::string(body) +
                                      "}'");
                seg.ref.parts.emplace_back(part);
                if (colon == std::string_view::npos) break;
                start = colon + 1;
            }
            if (seg.ref.parts.size() > 3)
                throw SyntaxError("reference '${" + std::string(body) +
                                  "}' is deeper than task:keyword:value");
            flush();
            expr.segments.push_back(std::move(seg));
            i = close + 1;
            continue;
        }
        lit += tmpl[i];
        ++i;
    }
    flush();
    return expr;
}

// Where a reference's value comes from when it is resolved: a Combination
// for bound parameter dimensions, an overlay for values the executor
// injects (staged input paths), and the spec itself for single-valued
// literals.
class Binding {
public:
    Binding(const StudySpec& spec, const Combination* combo = nullptr)
        : spec_(&spec), combo_(combo) {}

    void set_overlay(const std::string& task, const std::string& keypath, std::string value) {
        overlay_[BindingKey{task, keypath}] = std::move(value);
    }

    const StudySpec& spec() const { return *spec_; }
    const Combination* combination() const { return combo_; }

    // Raw (possibly still templated) text for (task, keypath), or nullopt.
    std::optional<std::string> lookup(const std::string& task, const std::string& keypath) const {
        if (combo_) {
            if (const Value* v = combo_->find(task, keypath)) return v->canonical_string();
        }
        auto ov = overlay_.find(BindingKey{task, keypath});
        if (ov != overlay_.end()) return ov->second;

        const TaskSpec* t = spec_->find_task(task);
        if (!t) return std::nullopt;
        auto single = [](const Value& v) -> std::optional<std::string> {
            if (v.is_list())
                return v.as_list().size() == 1 ? std::optional(v.as_list()[0].canonical_string())
                                               : std::nullopt;
            if (v.is_range()) {
                auto xs = expand_range(v.as_range());
                return xs.size() == 1 ? std::optional(xs[0].canonical_string()) : std::nullopt;
            }
            return v.canonical_string();
        };

        std::size_t dot = keypath.find('.');
        if (dot == std::string::npos) {
            if (const Value* v = t->find_user_param(keypath)) return single(*v);
            if (keypath == "command") return t->command;
            if (keypath == "name" && !t->name.empty()) return t->name;
            if (keypath == "nnodes") return std::to_string(t->nnodes);
            if (keypath == "ppnode") return std::to_string(t->ppnode);
            if (keypath == "parallel") return std::string(to_string(t->parallel));
            if (keypath == "batch") return std::string(to_string(t->batch));
            return std::nullopt;
        }
        std::string outer = keypath.substr(0, dot);
        std::string inner = keypath.substr(dot + 1);
        if (outer == "environ") {
            if (const Value* v = t->find_environ(inner)) return single(*v);
        } else if (outer == "infiles") {
            if (const std::string* p = t->find_infile(inner)) return *p;
        } else if (outer == "outfiles") {
            if (const std::string* p = t->find_outfile(inner)) return *p;
        } else if (outer == "substitute") {
            if (const Value* v = t->find_substitute(inner)) return single(*v);
        }
        return std::nullopt;
    }

    // True when the task has a two-level keyword `outer` (so ${outer:inner}
    // is an intra-task sub-selection rather than an inter-task reference).
    bool is_dict_keyword(const std::string& task, const std::string& outer) const {
        const TaskSpec* t = spec_->find_task(task);
        if (!t) return false;
        return outer == "environ" || outer == "infiles" || outer == "outfiles" ||
               outer == "substitute";
    }

private:
    const StudySpec* spec_;
    const Combination* combo_;
    std::map<BindingKey, std::string> overlay_;
};

namespace detail {

constexpr int kMaxExpansionDepth = 16;

inline std::string resolve_impl(const InterpExpr& expr, const std::string& task,
                                const Binding& binding, int depth,
                                std::vector<BindingKey>& chain);

inline std::string resolve_ref(const InterpRef& ref, const std::string& task,
                               const Binding& binding, int depth,
                               std::vector<BindingKey>& chain) {
    std::string rtask, keypath;
    const auto& p = ref.parts;
    if (p.size() == 1) {
        rtask = task;
        keypath = p[0];
    } else if (p.size() == 2) {
        if (binding.is_dict_keyword(task, p[0])) {
            rtask = task;
            keypath = p[0] + "." + p[1];
        } else if (binding.spec().find_task(p[0])) {
            rtask = p[0];
            keypath = p[1];
        } else {
            throw UnresolvedRef("'${" + p[0] + ":" + p[1] + "}' names neither a dictionary "
                                "keyword of task '" + task + "' nor a task");
        }
    } else {
        rtask = p[0];
        keypath = p[1] + "." + p[2];
    }

    BindingKey key{rtask, keypath};
    for (const BindingKey& seen : chain)
        if (seen == key) {
            std::string cycle;
            for (const BindingKey& c : chain) cycle += c.task + ":" + c.keypath + " -> ";
            throw CycleError("reference cycle: " + cycle + key.task + ":" + key.keypath);
        }
    if (depth >= kMaxExpansionDepth)
        throw CycleError("reference expansion exceeded depth " +
                         std::to_string(kMaxExpansionDepth) + " (possible cycle)");

    std::optional<std::string> raw = binding.lookup(rtask, keypath);
    if (!raw)
        throw UnresolvedRef("cannot resolve '${" + (rtask == task ? keypath
                                                                  : rtask + ":" + keypath) +
                            "}' in task '" + task + "'");
    if (raw->find("${") == std::string::npos) return *raw;

    chain.push_back(key);
    InterpExpr inner = scan(*raw);
    std::string out = resolve_impl(inner, rtask, binding, depth + 1, chain);
    chain.pop_back();
    return out;
}

inline std::string resolve_impl(const InterpExpr& expr, const std::string& task,
                                const Binding& binding, int depth,
                                std::vector<BindingKey>& chain) {
    std::string out;
    for (const InterpSegment& seg : expr.segments) {
        if (seg.is_ref)
            out += resolve_ref(seg.ref, task, binding, depth, chain);
        else
            out += seg.literal;
    }
    return out;
}

} // namespace detail

// Replaces every reference with the bound value's canonical string form.
// Values containing references themselves expand recursively (bounded depth,
// cycle detection), always in the scope of the task that owns the value.
inline std::string resolve(const InterpExpr& expr, const std::string& task,
                           const Binding& binding) {
    std::vector<BindingKey> chain;
    return detail::resolve_impl(expr, task, binding, 0, chain);
}

inline std::string resolve(std::string_view tmpl, const std::string& task,
                           const Binding& binding) {
    return resolve(scan(tmpl), task, binding);
}

} // namespace sweepmill
