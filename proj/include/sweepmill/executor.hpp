#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sweepmill/combinator.hpp"
#include "sweepmill/dag.hpp"
#include "sweepmill/dispatch.hpp"
#include "sweepmill/errors.hpp"
#include "sweepmill/interp.hpp"
#include "sweepmill/store.hpp"
#include "sweepmill/wdl.hpp"

namespace sweepmill {

// One workflow instance: a combination bound to the study's task graph and
// a workspace of its own.
struct InstancePlan {
    std::int64_t index = 0;
    Combination combination;
    TaskGraph graph;
    std::filesystem::path workspace;
};

struct RunOptions {
    std::size_t workers = 0; // 0 = hardware concurrency
    BackendKind backend = BackendKind::local;
    std::vector<std::string> hosts;
    std::string remote_root;
    bool use_shell = false;
    bool strict = false;
    bool force = false;
    std::filesystem::path store_root;
    std::filesystem::path base_dir = "."; // infile paths resolve against this
    std::atomic<bool>* abort_flag = nullptr;
    std::shared_ptr<SshTransport> transport;           // test seam
    std::shared_ptr<DispatchBackend> backend_override; // test seam
    std::function<void(const RunRecord&)> on_record;   // completion observer
    PbsOptions pbs;

    std::size_t effective_workers() const {
        if (workers) return workers;
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? hw : 1;
    }
};

struct StudyReport {
    std::int64_t instances_planned = 0;
    std::int64_t instances_done = 0;
    std::int64_t instances_failed = 0;
    std::size_t tasks_done = 0;
    std::size_t tasks_failed = 0;
    std::size_t tasks_skipped = 0;
    double wall_s = 0;
    bool aborted = false;
    bool scripted = false; // pbs-script mode emits a batch script, runs nothing
    std::filesystem::path script_path;
    std::vector<RunRecord> records;
    std::vector<std::string> warnings;

    // 0 all done, 2 some task failed, 3 aborted
    int exit_code() const {
        if (aborted) return 3;
        return tasks_failed || instances_failed ? 2 : 0;
    }
};

// ---------------------------------------------------------------------------
// instance realization
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<std::string, std::string>>
resolve_environment(const TaskSpec& task, const Binding& binding) {
    std::vector<std::pair<std::string, std::string>> env;
    for (const auto& [k, v] : task.environ) {
        const Value* bound = binding.combination()
                                 ? binding.combination()->find(task.task, "environ." + k)
                                 : nullptr;
        if (bound) {
            env.emplace_back(k, bound->canonical_string());
        } else {
            std::string text = v.canonical_string();
            env.emplace_back(k, text.find("${") != std::string::npos
                                    ? resolve(text, task.task, binding)
                                    : text);
        }
    }
    return env;
}

} // namespace detail

// Binds one combination to the task graph and resolves every template, so
// an unresolvable reference fails the plan before anything executes.
inline InstancePlan realize_instance(const StudySpec& spec, const Combination& combo,
                                     const std::filesystem::path& workspace) {
    InstancePlan plan;
    plan.index = combo.index;
    plan.combination = combo;
    plan.workspace = workspace;
    plan.graph = build_graph(combo.index, spec);

    Binding binding(spec, &combo);
    for (std::size_t i = 0; i < spec.tasks.size(); ++i) {
        const TaskSpec& t = spec.tasks[i];
        TaskNode& node = plan.graph.nodes[i];
        node.resolved_command = resolve(t.command, t.task, binding);
        node.resolved_env = detail::resolve_environment(t, binding);
        for (const auto& [label, tmpl] : t.infiles) resolve(tmpl, t.task, binding);
        for (const auto& [label, tmpl] : t.outfiles) resolve(tmpl, t.task, binding);
        for (const auto& [pattern, v] : t.substitute) {
            if (const Value* bound = combo.find(t.task, "substitute." + pattern)) {
                std::string r = bound->canonical_string();
                if (r.find("${") != std::string::npos) resolve(r, t.task, binding);
            }
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// input staging
// ---------------------------------------------------------------------------

struct StageResult {
    std::vector<std::filesystem::path> staged; // rewritten copies
    FileManifest manifest;
    std::vector<std::string> warnings;
};

// Stages a task's input files. Files touched by a substitute pattern are
// copied into `stage_dir` with every match replaced by the bound value;
// untouched files are referenced in place. The binding overlay is updated so
// ${infiles:label} resolves to wherever the content actually lives.
inline StageResult stage_inputs(const TaskSpec& task, const Combination& combo,
                                const std::filesystem::path& stage_dir,
                                const std::filesystem::path& base_dir, bool strict,
                                Binding& binding) {
    namespace fs = std::filesystem;
    StageResult result;

    struct Sub {
        std::string pattern;
        std::regex re;
        std::string replacement;
        std::size_t matches = 0;
    };
    std::vector<Sub> subs;
    for (const auto& [pattern, v] : task.substitute) {
        std::string replacement;
        if (const Value* bound = combo.find(task.task, "substitute." + pattern))
            replacement = bound->canonical_string();
        else if (v.is_list() && v.as_list().size() == 1)
            replacement = v.as_list()[0].canonical_string();
        else
            continue; // multi-valued and unbound: cannot happen on a real plan
        if (replacement.find("${") != std::string::npos)
            replacement = resolve(replacement, task.task, binding);
        Sub sub;
        sub.pattern = pattern;
        try {
            sub.re = std::regex(pattern, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw BadRegex("substitute pattern '" + pattern + "': " + e.what());
        }
        // the bound value is data, not a regex format string
        for (char c : replacement) {
            if (c == '$')
                sub.replacement += "$$";
            else
                sub.replacement += c;
        }
        subs.push_back(std::move(sub));
    }

    for (const auto& [label, tmpl] : task.infiles) {
        std::string resolved = resolve(tmpl, task.task, binding);
        fs::path src =
            fs::path(resolved).is_absolute() ? fs::path(resolved) : base_dir / resolved;
        if (!fs::exists(src))
            throw MissingInfile("task '" + task.task + "' infile '" + label + "': " +
                                src.string() + " does not exist");

        FileManifest::In entry;
        entry.label = label;
        entry.path = src.string();

        std::string content = detail::read_all(src);
        bool touched = false;
        for (Sub& sub : subs) {
            auto begin = std::sregex_iterator(content.begin(), content.end(), sub.re);
            auto count = static_cast<std::size_t>(std::distance(begin, std::sregex_iterator()));
            if (count == 0) continue;
            sub.matches += count;
            content = std::regex_replace(content, sub.re, sub.replacement);
            touched = true;
        }
        if (touched) {
            fs::create_directories(stage_dir);
            fs::path dst = stage_dir / src.filename();
            detail::write_atomic(dst, content);
            result.staged.push_back(dst);
            entry.path = dst.string();
            entry.staged = true;
        }
        entry.hash = detail::fnv1a64(content);
        binding.set_overlay(task.task, "infiles." + label, entry.path);
        result.manifest.infiles.push_back(std::move(entry));
    }

    for (const Sub& sub : subs) {
        if (sub.matches == 0) {
            std::string msg = "task '" + task.task + "': substitute pattern '" + sub.pattern +
                              "' matched nothing";
            if (strict) throw NoMatch(msg);
            result.warnings.push_back(msg);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// single task execution
// ---------------------------------------------------------------------------

struct TaskLaunch {
    std::int64_t instance = 0;
    std::string task;
    std::string command;
    std::vector<std::pair<std::string, std::string>> env;
    std::string cwd;
    std::string stdout_path;
    std::string stderr_path;
    std::vector<std::string> stage_files;
    std::int64_t ordinal = 0;
    bool use_shell = false;
};

// Runs one resolved task through a dispatch backend: wall timestamps from
// the system clock, duration from the monotonic clock, output captured to
// files. A nonzero exit is a task failure, not an error here.
inline RunRecord run_task(const TaskLaunch& launch, DispatchBackend& backend) {
    if (launch.command.empty())
        throw SpawnError("task '" + launch.task + "' resolved to an empty command");

    LaunchRequest req;
    req.command_line = launch.command;
    req.use_shell = launch.use_shell;
    req.env_overlay = launch.env;
    req.cwd = launch.cwd;
    req.stdout_path = launch.stdout_path;
    req.stderr_path = launch.stderr_path;
    req.stage_files = launch.stage_files;
    req.ordinal = launch.ordinal;

    RunRecord record;
    record.instance = launch.instance;
    record.task = launch.task;
    record.stdout_path = launch.stdout_path;
    record.stderr_path = launch.stderr_path;

    auto wall_start = std::chrono::system_clock::now();
    auto tick = std::chrono::steady_clock::now();
    std::unique_ptr<TaskHandle> handle = backend.launch(req);
    LaunchResult result = handle->wait();
    auto tock = std::chrono::steady_clock::now();
    auto wall_end = std::chrono::system_clock::now();

    record.start_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(wall_start.time_since_epoch())
            .count();
    record.end_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(wall_end.time_since_epoch()).count();
    record.duration_s = std::chrono::duration<double>(tock - tick).count();
    record.exit_code = result.exit_code;
    record.host = result.host;
    return record;
}

// ---------------------------------------------------------------------------
// study orchestration
// ---------------------------------------------------------------------------

namespace detail {

struct TaskResult {
    std::size_t inst_slot = 0;
    std::size_t node = 0;
    bool executed = false; // false: staging or spawn error, no run record
    RunRecord record;
    FileManifest manifest;
    std::vector<std::string> warnings;
    std::string error;
};

struct WorkItem {
    std::size_t inst_slot = 0;
    std::size_t node = 0;
    std::int64_t ordinal = 0;
};

// Job and result channels between the coordinator and the worker pool. Only
// jobs the coordinator has explicitly released sit in the job queue, so the
// number in flight never exceeds the worker bound.
class WorkQueue {
public:
    void push_job(WorkItem item) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            jobs_.push_back(item);
        }
        job_cv_.notify_one();
    }

    void close() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            closed_ = true;
        }
        job_cv_.notify_all();
    }

    bool pop_job(WorkItem& out) {
        std::unique_lock<std::mutex> lock(mu_);
        job_cv_.wait(lock, [&] { return closed_ || !jobs_.empty(); });
        if (jobs_.empty()) return false;
        out = jobs_.front();
        jobs_.pop_front();
        return true;
    }

    void push_result(TaskResult r) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            results_.push_back(std::move(r));
        }
        result_cv_.notify_one();
    }

    // Bounded wait so the coordinator notices an abort flag while idle.
    std::optional<TaskResult> pop_result(std::chrono::milliseconds timeout) {
        std::unique_lock<std::mutex> lock(mu_);
        if (!result_cv_.wait_for(lock, timeout, [&] { return !results_.empty(); }))
            return std::nullopt;
        TaskResult r = std::move(results_.front());
        results_.pop_front();
        return r;
    }

private:
    std::mutex mu_;
    std::condition_variable job_cv_;
    std::condition_variable result_cv_;
    std::deque<WorkItem> jobs_;
    std::deque<TaskResult> results_;
    bool closed_ = false;
};

// The coordinator owns every graph, the state map and the checkpoint writer.
// Workers only execute resolved tasks and persist their run records.
class StudyRun {
public:
    StudyRun(const StudySpec& spec, const RunOptions& opts, StudyStore store, StateMap states)
        : spec_(spec), opts_(opts), store_(std::move(store)), states_(std::move(states)) {}

    StudyReport execute() {
        auto t0 = std::chrono::steady_clock::now();
        StudyReport report;
        report.instances_planned = static_cast<std::int64_t>(store_.plan().size());

        for (const Combination& combo : store_.plan()) {
            InstancePlan plan = realize_instance(spec_, combo, store_.instance_dir(combo.index));
            apply_checkpoint_states(plan);
            instances_.push_back(std::move(plan));
        }
        write_states();

        if (opts_.backend == BackendKind::pbs_script) {
            emit_script(report);
            report.wall_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return report;
        }

        backend_ = opts_.backend_override;
        if (!backend_)
            backend_ = make_backend(opts_.backend, opts_.hosts, opts_.remote_root, opts_.transport);

        workers_ = opts_.effective_workers();
        std::vector<std::thread> pool;
        pool.reserve(workers_);
        for (std::size_t w = 0; w < workers_; ++w) pool.emplace_back([this] { worker_loop(); });

        collect_ready();
        pump();
        while (!finished()) {
            if (opts_.abort_flag && opts_.abort_flag->load()) aborted_ = true;
            if (aborted_ && in_flight_ == 0) break;
            auto result = queue_.pop_result(std::chrono::milliseconds(50));
            if (!result) continue;
            handle_result(*result, report);
            collect_ready();
            pump();
        }

        queue_.close();
        for (std::thread& t : pool) t.join();
        write_states();

        summarize(report);
        report.aborted = aborted_;
        report.wall_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return report;
    }

private:
    void apply_checkpoint_states(InstancePlan& plan) {
        auto inst = states_.find(plan.index);
        if (inst == states_.end()) return;
        for (TaskNode& node : plan.graph.nodes) {
            auto st = inst->second.find(node.task);
            if (st == inst->second.end()) continue;
            switch (st->second) {
            case TaskState::done:
            case TaskState::failed:
            case TaskState::skipped:
                node.state = st->second;
                break;
            default:
                // running at the crash: execute again
                node.state = TaskState::pending;
                inst->second[node.task] = TaskState::pending;
                break;
            }
        }
        for (std::size_t v = 0; v < plan.graph.nodes.size(); ++v)
            if (plan.graph.nodes[v].state == TaskState::failed) skip_descendants(plan.graph, v);
    }

    static void skip_descendants(TaskGraph& g, std::size_t v) {
        std::vector<std::size_t> frontier = {v};
        while (!frontier.empty()) {
            std::size_t u = frontier.back();
            frontier.pop_back();
            for (std::size_t w : g.nodes[u].succs)
                if (g.nodes[w].state == TaskState::pending ||
                    g.nodes[w].state == TaskState::ready) {
                    g.nodes[w].state = TaskState::skipped;
                    frontier.push_back(w);
                }
        }
    }

    bool finished() const {
        for (const InstancePlan& p : instances_)
            if (!p.graph.complete()) return false;
        return true;
    }

    // breadth-first over instances: lower instance indices feed the ready
    // queue first
    void collect_ready() {
        for (std::size_t slot = 0; slot < instances_.size(); ++slot)
            for (std::size_t v : ready_set(instances_[slot].graph))
                ready_.push_back(WorkItem{slot, v, 0});
    }

    void pump() {
        bool changed = false;
        while (!aborted_ && in_flight_ < workers_ && !ready_.empty()) {
            WorkItem item = ready_.front();
            ready_.pop_front();
            item.ordinal = next_ordinal_++;
            InstancePlan& plan = instances_[item.inst_slot];
            start(plan.graph, item.node);
            set_state(plan.index, plan.graph.nodes[item.node].task, TaskState::running);
            ++in_flight_;
            queue_.push_job(item);
            changed = true;
        }
        if (changed) write_states();
    }

    void worker_loop() {
        WorkItem item;
        while (queue_.pop_job(item)) {
            TaskResult result;
            try {
                result = execute_one(item);
            } catch (const std::exception& e) {
                result = TaskResult{};
                result.error = e.what();
                log_failure(instances_[item.inst_slot],
                            instances_[item.inst_slot].graph.nodes[item.node].task, e.what());
            }
            result.inst_slot = item.inst_slot;
            result.node = item.node;
            queue_.push_result(std::move(result));
        }
    }

    TaskResult execute_one(const WorkItem& item) {
        TaskResult result;
        const InstancePlan& plan = instances_[item.inst_slot];
        const TaskNode& node = plan.graph.nodes[item.node];
        const TaskSpec& task = *spec_.find_task(node.task);

        std::filesystem::path tdir = store_.task_dir(plan.index, node.task);
        std::filesystem::create_directories(tdir);
        std::filesystem::create_directories(plan.workspace);

        Binding binding(spec_, &plan.combination);
        StageResult staged =
            stage_inputs(task, plan.combination, tdir, opts_.base_dir, opts_.strict, binding);
        result.warnings = staged.warnings;
        result.manifest = staged.manifest;

        TaskLaunch launch;
        launch.instance = plan.index;
        launch.task = node.task;
        launch.command = resolve(task.command, task.task, binding);
        launch.env = detail::resolve_environment(task, binding);
        launch.cwd = plan.workspace.string();
        launch.stdout_path = (tdir / "stdout.log").string();
        launch.stderr_path = (tdir / "stderr.log").string();
        for (const auto& p : staged.staged) launch.stage_files.push_back(p.string());
        launch.ordinal = item.ordinal;
        launch.use_shell = opts_.use_shell;

        RunRecord record = run_task(launch, *backend_);

        // outfile provenance: resolve, check existence, warn when absent
        for (const auto& [label, tmpl] : task.outfiles) {
            std::string resolved = resolve(tmpl, task.task, binding);
            std::filesystem::path p = std::filesystem::path(resolved).is_absolute()
                                          ? std::filesystem::path(resolved)
                                          : plan.workspace / resolved;
            FileManifest::Out out;
            out.label = label;
            out.path = p.string();
            out.exists = std::filesystem::exists(p);
            if (!out.exists && record.exit_code == 0)
                result.warnings.push_back("task '" + node.task + "' instance " +
                                          std::to_string(plan.index) + ": outfile '" + label +
                                          "' (" + p.string() + ") was not produced");
            result.manifest.outfiles.push_back(std::move(out));
        }

        // durable before the coordinator may checkpoint the completion
        store_.append_record(record);
        store_.write_files_manifest(plan.index, node.task, result.manifest);
        result.record = record;
        result.executed = true;
        return result;
    }

    void log_failure(const InstancePlan& plan, const std::string& task,
                     const std::string& message) {
        std::filesystem::path tdir = store_.task_dir(plan.index, task);
        std::error_code ec;
        std::filesystem::create_directories(tdir, ec);
        std::ofstream err(tdir / "stderr.log", std::ios::app);
        err << message << "\n";
    }

    void handle_result(TaskResult& result, StudyReport& report) {
        InstancePlan& plan = instances_[result.inst_slot];
        TaskState outcome =
            result.executed && result.record.exit_code == 0 ? TaskState::done : TaskState::failed;
        mark(plan.graph, result.node, outcome);
        --in_flight_;

        for (const TaskNode& n : plan.graph.nodes)
            set_state(plan.index, n.task,
                      n.state == TaskState::ready ? TaskState::pending : n.state);
        write_states();

        for (std::string& w : result.warnings) report.warnings.push_back(std::move(w));
        if (!result.error.empty())
            report.warnings.push_back("task '" + plan.graph.nodes[result.node].task +
                                      "' instance " + std::to_string(plan.index) + ": " +
                                      result.error);
        if (result.executed) {
            report.records.push_back(result.record);
            if (opts_.on_record) opts_.on_record(result.record);
        }
    }

    void set_state(std::int64_t index, const std::string& task, TaskState s) {
        states_[index][task] = s;
    }

    void write_states() { store_.write_checkpoint(states_); }

    void summarize(StudyReport& report) {
        for (InstancePlan& plan : instances_) {
            bool any_failed = false, all_done = true;
            for (TaskNode& n : plan.graph.nodes) {
                switch (n.state) {
                case TaskState::done: ++report.tasks_done; break;
                case TaskState::failed:
                    ++report.tasks_failed;
                    any_failed = true;
                    all_done = false;
                    break;
                case TaskState::skipped:
                    ++report.tasks_skipped;
                    all_done = false;
                    break;
                default: all_done = false; break;
                }
            }
            if (plan.graph.nodes.empty()) all_done = true;
            if (any_failed)
                ++report.instances_failed;
            else if (all_done)
                ++report.instances_done;
        }
    }

    void emit_script(StudyReport& report) {
        std::vector<PbsTask> tasks;
        std::int64_t nnodes = 1, ppnode = 1;
        if (!spec_.tasks.empty()) {
            nnodes = spec_.tasks.front().nnodes;
            ppnode = spec_.tasks.front().ppnode;
        }
        for (const InstancePlan& plan : instances_) {
            for (std::size_t v : plan.graph.topo_order) {
                const TaskNode& node = plan.graph.nodes[v];
                PbsTask t;
                t.name = std::to_string(plan.index) + "." + node.task;
                std::ostringstream cmd;
                for (const auto& [k, val] : node.resolved_env)
                    cmd << k << "=" << shell_quote(val) << " ";
                cmd << node.resolved_command;
                t.command_line = cmd.str();
                t.workdir = plan.workspace.string();
                tasks.push_back(std::move(t));
            }
        }
        report.scripted = true;
        report.instances_planned = static_cast<std::int64_t>(instances_.size());
        if (tasks.empty()) return;
        std::string script = emit_pbs_script(tasks, nnodes, ppnode, opts_.pbs);
        std::filesystem::path out = store_.root() / "job.pbs";
        write_atomic(out, script);
        report.script_path = out;
    }

    const StudySpec& spec_;
    const RunOptions& opts_;
    StudyStore store_;
    StateMap states_;
    std::vector<InstancePlan> instances_;
    std::shared_ptr<DispatchBackend> backend_;
    WorkQueue queue_;
    std::deque<WorkItem> ready_;
    std::size_t workers_ = 1;
    std::size_t in_flight_ = 0;
    std::int64_t next_ordinal_ = 0;
    bool aborted_ = false;
};

} // namespace detail

// Plans and executes a whole study: every combination becomes a workflow
// instance, instances run breadth-first under a global worker bound, and the
// checkpoint is rewritten at every task state change.
inline StudyReport run_study(const StudySpec& spec, const RunOptions& opts) {
    if (opts.store_root.empty()) throw ExecError("run_study needs a store root");

    std::vector<Combination> plan;
    if (!spec.tasks.empty()) plan = plan_combinations(spec);
    StudyStore store = StudyStore::init(opts.store_root, spec, plan, opts.force);

    detail::StudyRun run(spec, opts, std::move(store), StateMap{});
    return run.execute();
}

// Continues a checkpointed study: done/failed/skipped tasks keep their
// recorded outcomes, tasks that were running at the crash execute again, and
// the report covers the union of old and new executions.
inline StudyReport resume_study(const std::filesystem::path& store_root, const RunOptions& opts,
                                const std::vector<std::filesystem::path>& files = {}) {
    StudyStore store = StudyStore::open(store_root);
    if (!files.empty()) {
        StudySpec given = load_study(files);
        if (spec_hash(given) != store.hash())
            throw HashMismatch("the given parameter files hash to " +
                               detail::hex16(spec_hash(given)) +
                               " but the checkpoint was written for " +
                               detail::hex16(store.hash()) + "; the study description changed");
    }
    StateMap states = store.read_checkpoint();
    StudySpec spec = store.spec();

    RunOptions local = opts;
    local.store_root = store_root;
    detail::StudyRun run(spec, local, std::move(store), std::move(states));
    StudyReport report = run.execute();

    // the report covers the union of previous and fresh executions
    StudyStore reopened = StudyStore::open(store_root);
    report.records = reopened.read_all_records();
    return report;
}

} // namespace sweepmill
