#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "sweepmill/errors.hpp"
#include "sweepmill/process.hpp"

namespace sweepmill {

struct LaunchRequest {
    std::string command_line;     // fully resolved
    bool use_shell = false;       // wrap in sh -c instead of direct exec
    std::vector<std::pair<std::string, std::string>> env_overlay;
    std::string cwd;
    std::string stdout_path;
    std::string stderr_path;
    std::vector<std::string> stage_files; // staged to the remote mirror before launch
    std::int64_t ordinal = 0;             // drives host placement
};

struct LaunchResult {
    int exit_code = 0;
    std::string host;
};

class TaskHandle {
public:
    virtual ~TaskHandle() = default;
    virtual LaunchResult wait() = 0;
    virtual void interrupt() = 0;
};

// Places a resolved task onto compute resources. Implementations: local
// process spawn, ssh remote execution, and a mock transport for tests.
class DispatchBackend {
public:
    virtual ~DispatchBackend() = default;
    virtual std::unique_ptr<TaskHandle> launch(const LaunchRequest& req) = 0;
    virtual std::string describe() const = 0;
};

namespace detail {

inline std::string local_hostname() {
    char buf[256] = {0};
    if (::gethostname(buf, sizeof(buf) - 1) != 0) return "localhost";
    return buf;
}

inline std::string shell_quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    out += "'";
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// local
// ---------------------------------------------------------------------------

class LocalHandle : public TaskHandle {
public:
    LocalHandle(ChildProcess child, std::string binary)
        : child_(std::move(child)), binary_(std::move(binary)) {}

    LaunchResult wait() override {
        LaunchResult r;
        r.exit_code = child_.wait(binary_);
        r.host = detail::local_hostname();
        return r;
    }

    void interrupt() override { child_.interrupt(); }

private:
    ChildProcess child_;
    std::string binary_;
};

class LocalBackend : public DispatchBackend {
public:
    std::unique_ptr<TaskHandle> launch(const LaunchRequest& req) override {
        SpawnSpec spec;
        if (req.use_shell) {
            spec.argv = {"/bin/sh", "-c", req.command_line};
        } else {
            spec.argv = tokenize_command(req.command_line);
            if (spec.argv.empty()) throw SpawnError("empty command");
        }
        spec.env_overlay = req.env_overlay;
        spec.cwd = req.cwd;
        spec.stdout_path = req.stdout_path;
        spec.stderr_path = req.stderr_path;
        std::string binary = spec.argv[0];
        return std::make_unique<LocalHandle>(ChildProcess::spawn(spec), std::move(binary));
    }

    std::string describe() const override { return "local"; }
};

// ---------------------------------------------------------------------------
// ssh
// ---------------------------------------------------------------------------

// Runs a prepared remote command string on a host. Abstracted so placement,
// retries and env marshaling are testable without a network: tests install
// a mock transport.
class SshTransport {
public:
    virtual ~SshTransport() = default;

    struct Remote {
        virtual ~Remote() = default;
        virtual int wait() = 0;   // ssh exit status (remote code, 255 = transport)
        virtual void interrupt() = 0;
        virtual std::string transport_diagnostics() = 0; // stderr tail for classification
    };

    virtual std::unique_ptr<Remote> run(const std::string& host, const std::string& remote_command,
                                        const std::string& stdout_path,
                                        const std::string& stderr_path) = 0;
    virtual void stage(const std::string& host, const std::vector<std::string>& files,
                       const std::string& remote_dir) = 0;
};

class OpenSshTransport : public SshTransport {
public:
    explicit OpenSshTransport(int connect_timeout_s = 10) : timeout_(connect_timeout_s) {}

    struct Proc : Remote {
        ChildProcess child;
        std::string stderr_path;
        explicit Proc(ChildProcess c, std::string ep)
            : child(std::move(c)), stderr_path(std::move(ep)) {}
        int wait() override { return child.wait("ssh"); }
        void interrupt() override { child.interrupt(); }
        std::string transport_diagnostics() override {
            std::ifstream in(stderr_path);
            std::ostringstream buf;
            buf << in.rdbuf();
            return buf.str();
        }
    };

    std::unique_ptr<Remote> run(const std::string& host, const std::string& remote_command,
                                const std::string& stdout_path,
                                const std::string& stderr_path) override {
        SpawnSpec spec;
        spec.argv = {"ssh",
                     "-o", "BatchMode=yes",
                     "-o", "StrictHostKeyChecking=accept-new",
                     "-o", "ConnectTimeout=" + std::to_string(timeout_),
                     host, remote_command};
        spec.stdout_path = stdout_path;
        spec.stderr_path = stderr_path;
        return std::make_unique<Proc>(ChildProcess::spawn(spec), stderr_path);
    }

    void stage(const std::string& host, const std::vector<std::string>& files,
               const std::string& remote_dir) override {
        if (files.empty()) return;
        {
            SpawnSpec mk;
            mk.argv = {"ssh", "-o", "BatchMode=yes", host,
                       "mkdir -p " + detail::shell_quote(remote_dir)};
            ChildProcess child = ChildProcess::spawn(mk);
            if (child.wait("ssh") != 0)
                throw ConnectError("cannot create remote directory " + remote_dir + " on " + host);
        }
        SpawnSpec cp;
        cp.argv = {"scp", "-q", "-o", "BatchMode=yes"};
        for (const std::string& f : files) cp.argv.push_back(f);
        cp.argv.push_back(host + ":" + remote_dir + "/");
        ChildProcess child = ChildProcess::spawn(cp);
        if (child.wait("scp") != 0)
            throw ConnectError("file staging to " + host + ":" + remote_dir + " failed");
    }

private:
    int timeout_;
};

class SshHandle : public TaskHandle {
public:
    SshHandle(std::unique_ptr<SshTransport::Remote> remote, std::string host)
        : remote_(std::move(remote)), host_(std::move(host)) {}

    LaunchResult wait() override {
        int code = remote_->wait();
        if (code == 255) {
            std::string diag = remote_->transport_diagnostics();
            if (diag.find("Permission denied") != std::string::npos ||
                diag.find("Authentication") != std::string::npos)
                throw AuthError("ssh authentication to " + host_ + " failed: " + diag);
            if (diag.find("Could not resolve") != std::string::npos ||
                diag.find("Connection refused") != std::string::npos ||
                diag.find("timed out") != std::string::npos ||
                diag.find("No route to host") != std::string::npos)
                throw ConnectError("cannot reach " + host_ + ": " + diag);
            throw RemoteSpawnError("remote launch on " + host_ + " failed: " + diag);
        }
        return LaunchResult{code, host_};
    }

    void interrupt() override { remote_->interrupt(); }

private:
    std::unique_ptr<SshTransport::Remote> remote_;
    std::string host_;
};

class SshBackend : public DispatchBackend {
public:
    SshBackend(std::vector<std::string> hosts, std::string remote_root,
               std::shared_ptr<SshTransport> transport)
        : hosts_(std::move(hosts)), remote_root_(std::move(remote_root)),
          transport_(std::move(transport)) {
        if (hosts_.empty()) throw ConnectError("ssh backend needs at least one host");
    }

    // host assignment is a pure function of (task ordinal, hosts list)
    const std::string& host_for(std::int64_t ordinal) const {
        return hosts_[static_cast<std::size_t>(ordinal) % hosts_.size()];
    }

    std::string remote_command_for(const LaunchRequest& req) const {
        std::string remote_dir = remote_dir_for(req);
        std::ostringstream cmd;
        cmd << "mkdir -p " << detail::shell_quote(remote_dir) << " && cd "
            << detail::shell_quote(remote_dir);
        if (!req.env_overlay.empty()) {
            cmd << " && env";
            for (const auto& [k, v] : req.env_overlay)
                cmd << " " << detail::shell_quote(k + "=" + v);
            cmd << " " << req.command_line;
        } else {
            cmd << " && " << req.command_line;
        }
        return cmd.str();
    }

    std::unique_ptr<TaskHandle> launch(const LaunchRequest& req) override {
        const std::string& host = host_for(req.ordinal);
        std::string remote_dir = remote_dir_for(req);
        transport_->stage(host, req.stage_files, remote_dir);
        auto remote = transport_->run(host, remote_command_for(req), req.stdout_path,
                                      req.stderr_path);
        return std::make_unique<SshHandle>(std::move(remote), host);
    }

    std::string describe() const override { return "ssh"; }

private:
    std::string remote_dir_for(const LaunchRequest& req) const {
        // mirror the local workspace under the remote root
        std::string dir = req.cwd;
        for (char& c : dir)
            if (c == '/') c = '_';
        return remote_root_.empty() ? "sweepmill-remote/" + dir : remote_root_ + "/" + dir;
    }

    std::vector<std::string> hosts_;
    std::string remote_root_;
    std::shared_ptr<SshTransport> transport_;
};

// ---------------------------------------------------------------------------
// PBS script generation
// ---------------------------------------------------------------------------

struct PbsTask {
    std::string name;
    std::string command_line;
    std::string workdir; // empty = job working directory
};

struct PbsOptions {
    std::string job_name = "study";
    std::string queue;     // empty = scheduler default
    std::string walltime;  // empty = scheduler default
    bool strict_packing = false;
    std::function<void(const std::string& script)> submit_hook; // default: none
};

// Deterministic PBS batch script: resource headers, then task launch lines
// grouped nnodes*ppnode at a time with a wait barrier between groups. The
// script is never submitted here; submission goes through the submit hook.
inline std::string emit_pbs_script(const std::vector<PbsTask>& tasks, std::int64_t nnodes,
                                   std::int64_t ppnode, const PbsOptions& opts = {}) {
    if (tasks.empty()) throw ExecError("cannot emit a PBS script for zero tasks");
    if (nnodes < 1 || ppnode < 1) throw ExecError("nnodes and ppnode must be >= 1");
    std::size_t slots = static_cast<std::size_t>(nnodes) * static_cast<std::size_t>(ppnode);
    if (opts.strict_packing && tasks.size() > slots)
        throw TooManyTasksPerNode(std::to_string(tasks.size()) + " tasks exceed " +
                                  std::to_string(slots) + " slots (nodes=" +
                                  std::to_string(nnodes) + ":ppn=" + std::to_string(ppnode) +
                                  ") under strict packing");

    std::ostringstream out;
    out << "#!/bin/sh\n";
    out << "#PBS -N " << opts.job_name << "\n";
    out << "#PBS -l nodes=" << nnodes << ":ppn=" << ppnode << "\n";
    if (!opts.walltime.empty()) out << "#PBS -l walltime=" << opts.walltime << "\n";
    if (!opts.queue.empty()) out << "#PBS -q " << opts.queue << "\n";
    out << "#PBS -j oe\n";
    out << "\n";
    out << "cd \"$PBS_O_WORKDIR\"\n";

    std::size_t group = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (i % slots == 0) {
            if (i != 0) out << "wait\n";
            ++group;
            out << "\n# group " << group << "\n";
        }
        const PbsTask& t = tasks[i];
        if (t.workdir.empty())
            out << t.command_line << " > " << t.name << ".out 2> " << t.name << ".err &\n";
        else
            out << "( cd " << detail::shell_quote(t.workdir) << " && " << t.command_line
                << " ) > " << t.name << ".out 2> " << t.name << ".err &\n";
    }
    out << "wait\n";

    std::string script = out.str();
    if (opts.submit_hook) opts.submit_hook(script);
    return script;
}

// ---------------------------------------------------------------------------
// factory
// ---------------------------------------------------------------------------

enum class BackendKind { local, ssh, pbs_script };

inline BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "local") return BackendKind::local;
    if (s == "ssh") return BackendKind::ssh;
    if (s == "pbs-script") return BackendKind::pbs_script;
    if (s == "mpi")
        throw UnsupportedBackend("parallel mode 'mpi' is not dispatchable here; generate a "
                                 "batch script with --backend pbs-script instead");
    throw UnsupportedBackend("unknown backend '" + s + "' (expected local, ssh, or pbs-script)");
}

inline std::unique_ptr<DispatchBackend> make_backend(BackendKind kind,
                                                     std::vector<std::string> hosts = {},
                                                     std::string remote_root = {},
                                                     std::shared_ptr<SshTransport> transport = {}) {
    switch (kind) {
    case BackendKind::local: return std::make_unique<LocalBackend>();
    case BackendKind::ssh:
        if (!transport) transport = std::make_shared<OpenSshTransport>();
        return std::make_unique<SshBackend>(std::move(hosts), std::move(remote_root),
                                            std::move(transport));
    case BackendKind::pbs_script:
        throw UnsupportedBackend("pbs-script is not a per-task backend; the run command emits "
                                 "a batch script instead of executing");
    }
    throw UnsupportedBackend("unknown backend");
}

} // namespace sweepmill
