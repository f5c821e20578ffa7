// sweepmill command line: validate, plan, graph, run, resume, status.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sweepmill/sweepmill.hpp"

namespace {

std::atomic<bool> g_abort{false};

void on_interrupt(int) { g_abort.store(true); }

bool color_enabled() {
    if (std::getenv("NO_COLOR")) return false;
    return ::isatty(STDERR_FILENO);
}

const char* color(const char* code) {
    static const bool enabled = color_enabled();
    return enabled ? code : "";
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const std::string& w : warnings)
        std::cerr << color("\033[33m") << "warning: " << color("\033[0m") << w << "\n";
}

sweepmill::StudySpec load_spec(const std::vector<std::string>& files,
                               const std::string& format_hint) {
    std::optional<sweepmill::DocFormat> hint;
    if (!format_hint.empty()) {
        if (format_hint == "yaml")
            hint = sweepmill::DocFormat::yaml;
        else if (format_hint == "json")
            hint = sweepmill::DocFormat::json;
        else if (format_hint == "ini")
            hint = sweepmill::DocFormat::ini;
        else
            throw CLI::ValidationError("--format must be yaml, json or ini");
    }
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    sweepmill::StudySpec spec = sweepmill::load_study(paths, hint);
    print_warnings(spec.warnings);
    return spec;
}

std::filesystem::path default_base_dir(const std::vector<std::string>& files) {
    if (files.empty()) return ".";
    std::filesystem::path p(files.front());
    return p.has_parent_path() ? p.parent_path() : std::filesystem::path(".");
}

void write_or_print(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw sweepmill::IOError(out_path, "cannot open for writing");
    out << text;
}

struct RunArgs {
    std::vector<std::string> files;
    std::string store;
    std::size_t workers = 0;
    std::string backend = "local";
    std::vector<std::string> hosts;
    std::string remote_root;
    std::string base_dir;
    bool strict = false;
    bool shell = false;
    bool force = false;
};

void add_run_flags(CLI::App* cmd, RunArgs& args) {
    cmd->add_option("--workers", args.workers,
                    "worker pool size (default: logical core count)");
    cmd->add_option("--backend", args.backend, "local, ssh, or pbs-script")
        ->default_val("local");
    cmd->add_option("--hosts", args.hosts, "ssh hosts (round-robin placement)")
        ->delimiter(',');
    cmd->add_option("--remote-root", args.remote_root, "remote workspace root for ssh staging");
    cmd->add_option("--base-dir", args.base_dir,
                    "directory infile paths resolve against (default: first parameter file's)");
    cmd->add_flag("--strict", args.strict, "substitute patterns that match nothing are errors");
    cmd->add_flag("--shell", args.shell, "run commands through /bin/sh -c");
}

sweepmill::RunOptions make_options(const RunArgs& args) {
    sweepmill::RunOptions opts;
    opts.workers = args.workers;
    opts.backend = sweepmill::backend_kind_from_string(args.backend);
    opts.hosts = args.hosts;
    opts.remote_root = args.remote_root;
    opts.use_shell = args.shell;
    opts.strict = args.strict;
    opts.force = args.force;
    opts.store_root = args.store;
    opts.base_dir = args.base_dir;
    opts.abort_flag = &g_abort;
    return opts;
}

int report_outcome(const sweepmill::StudyReport& report) {
    print_warnings(report.warnings);
    if (report.scripted) {
        std::cerr << "batch script written to " << report.script_path.string() << "\n";
        return 0;
    }
    std::cerr << "instances: " << report.instances_done << " done, " << report.instances_failed
              << " failed of " << report.instances_planned << "; tasks: " << report.tasks_done
              << " done, " << report.tasks_failed << " failed, " << report.tasks_skipped
              << " skipped; wall " << report.wall_s << " s\n";
    if (report.aborted) std::cerr << "aborted: checkpoint written, resume to continue\n";
    return report.exit_code();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"parameter-study workflow engine"};
    app.require_subcommand(1);

    std::string format_hint;
    app.add_option("--format", format_hint, "force input format: yaml, json, ini")
        ->envname("SWEEPMILL_FORMAT");

    // validate
    auto* validate_cmd =
        app.add_subcommand("validate", "parse parameter files and print the normalized study");
    std::vector<std::string> validate_files;
    validate_cmd->add_option("files", validate_files, "parameter files")->required();

    // plan
    auto* plan_cmd =
        app.add_subcommand("plan", "enumerate the workflow set without executing");
    std::vector<std::string> plan_files;
    plan_cmd->add_option("files", plan_files, "parameter files")->required();

    // graph
    auto* graph_cmd = app.add_subcommand("graph", "render the study as DOT text");
    std::vector<std::string> graph_files;
    std::string graph_state_from, graph_out;
    bool graph_render = false;
    graph_cmd->add_option("files", graph_files, "parameter files");
    graph_cmd->add_option("--state-from", graph_state_from,
                          "study store to read live task states from");
    graph_cmd->add_option("--out", graph_out, "write DOT here instead of stdout");
    graph_cmd->add_flag("--render", graph_render,
                        "run an external 'dot -Tpng' on the output (needs graphviz)");

    // run
    auto* run_cmd = app.add_subcommand("run", "execute the study");
    RunArgs run_args;
    run_cmd->add_option("files", run_args.files, "parameter files")->required();
    run_cmd->add_option("--store", run_args.store, "study store directory")->required();
    run_cmd->add_flag("--force", run_args.force, "reuse a non-empty store directory");
    add_run_flags(run_cmd, run_args);

    // resume
    auto* resume_cmd = app.add_subcommand("resume", "continue a checkpointed study");
    RunArgs resume_args;
    resume_cmd->add_option("--store", resume_args.store, "study store directory")->required();
    resume_cmd->add_option("files", resume_args.files,
                           "original parameter files (checked against the checkpoint hash)");
    add_run_flags(resume_cmd, resume_args);

    // status
    auto* status_cmd = app.add_subcommand("status", "show task states and completion fraction");
    std::string status_store;
    status_cmd->add_option("--store", status_store, "study store directory")->required();
    bool status_report = false;
    status_cmd->add_flag("--provenance", status_report, "print the full provenance report");
    std::string status_out;
    status_cmd->add_option("--out", status_out, "write the report here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::signal(SIGINT, on_interrupt);
    std::signal(SIGTERM, on_interrupt);

    try {
        if (*validate_cmd) {
            sweepmill::StudySpec spec = load_spec(validate_files, format_hint);
            std::cout << sweepmill::serialize_canonical(spec);
            return 0;
        }

        if (*plan_cmd) {
            sweepmill::StudySpec spec = load_spec(plan_files, format_hint);
            std::vector<sweepmill::Combination> plan;
            if (!spec.tasks.empty()) plan = sweepmill::plan_combinations(spec);
            std::cout << "N_W = " << plan.size() << "\n";
            for (const sweepmill::Combination& c : plan)
                std::cout << sweepmill::detail::combination_to_json(c).dump() << "\n";
            return 0;
        }

        if (*graph_cmd) {
            std::string dot;
            if (!graph_state_from.empty()) {
                sweepmill::StudyStore store = sweepmill::StudyStore::open(graph_state_from);
                sweepmill::StateMap states = store.read_checkpoint();
                dot = sweepmill::to_dot_study(store.spec(), store.plan(), &states);
            } else {
                if (graph_files.empty())
                    throw CLI::ValidationError("graph needs parameter files or --state-from");
                sweepmill::StudySpec spec = load_spec(graph_files, format_hint);
                dot = sweepmill::validate_view(spec);
            }
            write_or_print(dot, graph_out);
            if (graph_render) {
                if (graph_out.empty())
                    throw CLI::ValidationError("--render needs --out");
                sweepmill::SpawnSpec render;
                render.argv = {"dot", "-Tpng", "-O", graph_out};
                int code = sweepmill::ChildProcess::spawn(render).wait("dot");
                if (code != 0) {
                    std::cerr << "warning: external 'dot' renderer exited with " << code << "\n";
                }
            }
            return 0;
        }

        if (*run_cmd) {
            sweepmill::StudySpec spec = load_spec(run_args.files, format_hint);
            sweepmill::RunOptions opts = make_options(run_args);
            if (run_args.base_dir.empty()) opts.base_dir = default_base_dir(run_args.files);
            sweepmill::StudyReport report = sweepmill::run_study(spec, opts);
            return report_outcome(report);
        }

        if (*resume_cmd) {
            sweepmill::RunOptions opts = make_options(resume_args);
            if (resume_args.base_dir.empty())
                opts.base_dir = default_base_dir(resume_args.files);
            std::vector<std::filesystem::path> files(resume_args.files.begin(),
                                                     resume_args.files.end());
            sweepmill::StudyReport report =
                sweepmill::resume_study(resume_args.store, opts, files);
            return report_outcome(report);
        }

        if (*status_cmd) {
            sweepmill::StudyStore store = sweepmill::StudyStore::open(status_store);
            if (status_report) {
                write_or_print(store.provenance_report(), status_out);
                return 0;
            }
            sweepmill::StateMap states = store.read_checkpoint();
            std::size_t total = store.plan().size() * store.spec().tasks.size();
            std::size_t done = 0, failed = 0, skipped = 0, running = 0, pending = 0;
            for (const auto& [i, tasks] : states)
                for (const auto& [t, s] : tasks) {
                    switch (s) {
                    case sweepmill::TaskState::done: ++done; break;
                    case sweepmill::TaskState::failed: ++failed; break;
                    case sweepmill::TaskState::skipped: ++skipped; break;
                    case sweepmill::TaskState::running: ++running; break;
                    default: ++pending; break;
                    }
                }
            std::size_t seen = done + failed + skipped + running + pending;
            pending += total > seen ? total - seen : 0;
            std::size_t finished = done + failed + skipped;
            double fraction = total ? static_cast<double>(finished) / static_cast<double>(total)
                                    : 1.0;
            std::cout << "instances: " << store.plan().size() << "\n";
            std::cout << "tasks: total=" << total << " done=" << done << " failed=" << failed
                      << " skipped=" << skipped << " running=" << running
                      << " pending=" << pending << "\n";
            std::cout << "completed " << finished << "/" << total << " (" << fraction << ")\n";
            return 0;
        }
    } catch (const sweepmill::SpecError& e) {
        std::cerr << color("\033[31m") << "error: " << color("\033[0m") << e.what() << "\n";
        return 4;
    } catch (const sweepmill::Error& e) {
        std::cerr << color("\033[31m") << "error: " << color("\033[0m") << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
