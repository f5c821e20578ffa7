#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "sweepmill/errors.hpp"
#include "sweepmill/wdl.hpp"

namespace sweepmill {

enum class TaskState { pending, ready, running, done, failed, skipped };

inline const char* to_string(TaskState s) {
    switch (s) {
    case TaskState::pending: return "pending";
    case TaskState::ready: return "ready";
    case TaskState::running: return "running";
    case TaskState::done: return "done";
    case TaskState::failed: return "failed";
    case TaskState::skipped: return "skipped";
    }
    return "?";
}

inline TaskState task_state_from_string(const std::string& s) {
    if (s == "pending") return TaskState::pending;
    if (s == "ready") return TaskState::ready;
    if (s == "running") return TaskState::running;
    if (s == "done") return TaskState::done;
    if (s == "failed") return TaskState::failed;
    if (s == "skipped") return TaskState::skipped;
    throw CorruptCheckpoint("unknown task state '" + s + "'");
}

struct TaskNode {
    std::int64_t instance = 0;
    std::string task;
    std::string resolved_command;
    std::vector<std::pair<std::string, std::string>> resolved_env;
    std::vector<std::string> staged_files;
    TaskState state = TaskState::pending;
    std::vector<std::size_t> preds;
    std::vector<std::size_t> succs;
};

struct TaskGraph {
    std::int64_t instance = 0;
    std::vector<TaskNode> nodes; // declaration order
    std::vector<std::pair<std::size_t, std::size_t>> edges; // (from, to): from runs first
    std::vector<std::size_t> topo_order;

    std::size_t node_index(const std::string& name) const {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].task == name) return i;
        throw DanglingAfter("task '" + name + "' is not a node of this graph");
    }

    bool complete() const {
        for (const TaskNode& n : nodes)
            if (n.state != TaskState::done && n.state != TaskState::failed &&
                n.state != TaskState::skipped)
                return false;
        return true;
    }

    bool all_done() const {
        for (const TaskNode& n : nodes)
            if (n.state != TaskState::done) return false;
        return true;
    }
};

namespace detail {

// DFS cycle search that reports one concrete cycle as a node sequence.
inline bool find_cycle(const TaskGraph& g, std::size_t v, std::vector<int>& color,
                       std::vector<std::size_t>& stack, std::string& report) {
    color[v] = 1;
    stack.push_back(v);
    for (std::size_t w : g.nodes[v].succs) {
        if (color[w] == 1) {
            auto it = std::find(stack.begin(), stack.end(), w);
            report.clear();
            for (; it != stack.end(); ++it) report += g.nodes[*it].task + " -> ";
            report += g.nodes[w].task;
            return true;
        }
        if (color[w] == 0 && find_cycle(g, w, color, stack, report)) return true;
    }
    stack.pop_back();
    color[v] = 2;
    return false;
}

} // namespace detail

// Builds the per-instance task graph from `after` dependencies: one node per
// task, an edge (d, t) for every d listed in t.after, and a topological
// order with declaration order as the tie-break.
inline TaskGraph build_graph(std::int64_t instance_index, const StudySpec& spec) {
    TaskGraph g;
    g.instance = instance_index;
    g.nodes.reserve(spec.tasks.size());
    for (const TaskSpec& t : spec.tasks) {
        TaskNode n;
        n.instance = instance_index;
        n.task = t.task;
        g.nodes.push_back(std::move(n));
    }
    for (std::size_t ti = 0; ti < spec.tasks.size(); ++ti) {
        for (const std::string& dep : spec.tasks[ti].after) {
            const TaskSpec* d = spec.find_task(dep);
            if (!d)
                throw DanglingAfter("task '" + spec.tasks[ti].task + "' lists after: '" + dep +
                                    "' which does not exist");
            std::size_t di = g.node_index(dep);
            g.edges.emplace_back(di, ti);
            g.nodes[di].succs.push_back(ti);
            g.nodes[ti].preds.push_back(di);
        }
    }

    std::vector<int> color(g.nodes.size(), 0);
    std::vector<std::size_t> stack;
    std::string report;
    for (std::size_t v = 0; v < g.nodes.size(); ++v)
        if (color[v] == 0 && detail::find_cycle(g, v, color, stack, report))
            throw CycleError("dependency cycle: " + report);

    // Kahn's algorithm, always taking the lowest declaration index next
    std::vector<std::size_t> indeg(g.nodes.size(), 0);
    for (auto [from, to] : g.edges) (void)from, ++indeg[to];
    std::set<std::size_t> ready;
    for (std::size_t v = 0; v < g.nodes.size(); ++v)
        if (indeg[v] == 0) ready.insert(v);
    while (!ready.empty()) {
        std::size_t v = *ready.begin();
        ready.erase(ready.begin());
        g.topo_order.push_back(v);
        for (std::size_t w : g.nodes[v].succs)
            if (--indeg[w] == 0) ready.insert(w);
    }
    return g;
}

// All pending nodes whose predecessors are done, transitioned to ready.
inline std::vector<std::size_t> ready_set(TaskGraph& g) {
    std::vector<std::size_t> out;
    for (std::size_t v : g.topo_order) {
        TaskNode& n = g.nodes[v];
        if (n.state != TaskState::pending) continue;
        bool all_done = true;
        for (std::size_t p : n.preds)
            if (g.nodes[p].state != TaskState::done) {
                all_done = false;
                break;
            }
        if (all_done) {
            n.state = TaskState::ready;
            out.push_back(v);
        }
    }
    return out;
}

inline void start(TaskGraph& g, std::size_t v) {
    TaskNode& n = g.nodes[v];
    if (n.state != TaskState::ready)
        throw IllegalTransition("task '" + n.task + "' cannot start from state " +
                                to_string(n.state));
    n.state = TaskState::running;
}

// Marks a running node done or failed. Failure skips every transitive
// descendant; other workflow instances are unaffected by construction.
inline void mark(TaskGraph& g, std::size_t v, TaskState outcome) {
    TaskNode& n = g.nodes[v];
    if (outcome != TaskState::done && outcome != TaskState::failed)
        throw IllegalTransition("mark() accepts done or failed only");
    if (n.state != TaskState::running)
        throw IllegalTransition("task '" + n.task + "' cannot be marked from state " +
                                to_string(n.state));
    n.state = outcome;
    if (outcome == TaskState::failed) {
        std::vector<std::size_t> frontier = {v};
        while (!frontier.empty()) {
            std::size_t u = frontier.back();
            frontier.pop_back();
            for (std::size_t w : g.nodes[u].succs) {
                if (g.nodes[w].state == TaskState::pending ||
                    g.nodes[w].state == TaskState::ready) {
                    g.nodes[w].state = TaskState::skipped;
                    frontier.push_back(w);
                } else if (g.nodes[w].state == TaskState::skipped) {
                    continue;
                }
            }
        }
    }
}

} // namespace sweepmill
