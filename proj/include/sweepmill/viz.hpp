#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "sweepmill/combinator.hpp"
#include "sweepmill/dag.hpp"
#include "sweepmill/interp.hpp"
#include "sweepmill/store.hpp"
#include "sweepmill/wdl.hpp"

namespace sweepmill {

// Fixed six-color palette, one fill per task state.
inline const char* dot_fill(TaskState s) {
    switch (s) {
    case TaskState::pending: return "#d9d9d9";
    case TaskState::ready: return "#9ecae1";
    case TaskState::running: return "#ffd92f";
    case TaskState::done: return "#a1d99b";
    case TaskState::failed: return "#fc9272";
    case TaskState::skipped: return "#bdbdbd";
    }
    return "#ffffff";
}

namespace detail {

inline std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

inline std::string binding_label(const Combination& combo, const std::string& task) {
    std::string out;
    for (const auto& [key, v] : combo.bindings) {
        if (key.task != task) continue;
        if (!out.empty()) out += " ";
        out += key.keypath + "=" + v.canonical_string();
    }
    return out;
}

inline void emit_nodes(std::ostream& out, const TaskGraph& g, const Combination* combo,
                       const std::string& indent) {
    for (const TaskNode& n : g.nodes) {
        std::string id = std::to_string(g.instance) + "/" + n.task;
        std::string label = n.task;
        if (combo) {
            std::string bindings = binding_label(*combo, n.task);
            if (!bindings.empty()) label += "\\n" + bindings;
        }
        out << indent << "\"" << dot_escape(id) << "\" [label=\"" << dot_escape(label)
            << "\", fillcolor=\"" << dot_fill(n.state) << "\"];\n";
    }
}

inline void emit_edges(std::ostream& out, const TaskGraph& g, const std::string& indent) {
    for (const auto& [from, to] : g.edges) {
        out << indent << "\"" << dot_escape(std::to_string(g.instance) + "/" + g.nodes[from].task)
            << "\" -> \""
            << dot_escape(std::to_string(g.instance) + "/" + g.nodes[to].task) << "\";\n";
    }
}

} // namespace detail

// DOT text for a single workflow instance graph: one node per task with the
// state encoded as fill color, one edge per dependency. Output is
// byte-deterministic for identical inputs.
inline std::string to_dot(const TaskGraph& g, const Combination* combo = nullptr) {
    std::ostringstream out;
    out << "digraph instance_" << g.instance << " {\n";
    out << "  rankdir=LR;\n";
    out << "  node [shape=box, style=filled];\n";
    detail::emit_nodes(out, g, combo, "  ");
    detail::emit_edges(out, g, "  ");
    out << "}\n";
    return out.str();
}

// Study-level DOT: one subgraph cluster per workflow instance. States come
// from `states` when given (monitoring a live or finished study), otherwise
// every node is pending (pre-run validation view).
inline std::string to_dot_study(const StudySpec& spec, const std::vector<Combination>& plan,
                                const StateMap* states = nullptr) {
    std::ostringstream out;
    out << "digraph study {\n";
    out << "  rankdir=LR;\n";
    out << "  node [shape=box, style=filled];\n";
    for (const Combination& combo : plan) {
        TaskGraph g = build_graph(combo.index, spec);
        if (states) {
            auto inst = states->find(combo.index);
            if (inst != states->end())
                for (TaskNode& n : g.nodes) {
                    auto st = inst->second.find(n.task);
                    if (st != inst->second.end()) n.state = st->second;
                }
        }
        out << "  subgraph cluster_" << combo.index << " {\n";
        out << "    label=\"instance " << combo.index << "\";\n";
        detail::emit_nodes(out, g, &combo, "    ");
        detail::emit_edges(out, g, "    ");
        out << "  }\n";
    }
    out << "}\n";
    return out.str();
}

// Pre-execution validation view: plans the study and renders it without
// running anything. Planning errors (cycles, unresolvable references,
// mismatched fixed groups) surface here.
inline std::string validate_view(const StudySpec& spec) {
    std::vector<Combination> plan;
    if (!spec.tasks.empty()) plan = plan_combinations(spec);
    for (const Combination& combo : plan) {
        Binding binding(spec, &combo);
        for (const TaskSpec& t : spec.tasks) {
            resolve(t.command, t.task, binding);
            for (const auto& [k, v] : t.environ) {
                std::string text = v.canonical_string();
                if (!combo.find(t.task, "environ." + k) &&
                    text.find("${") != std::string::npos)
                    resolve(text, t.task, binding);
            }
            for (const auto& [label, tmpl] : t.infiles) resolve(tmpl, t.task, binding);
            for (const auto& [label, tmpl] : t.outfiles) resolve(tmpl, t.task, binding);
        }
    }
    return to_dot_study(spec, plan);
}

} // namespace sweepmill
