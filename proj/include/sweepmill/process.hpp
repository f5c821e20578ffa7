#pragma once

#include <cerrno>
#include <csignal>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "sweepmill/errors.hpp"

namespace sweepmill {

// Splits a command line on whitespace with single/double-quote grouping.
// There is no escape processing inside quotes; commands that need shell
// semantics run under --shell instead.
inline std::vector<std::string> tokenize_command(std::string_view cmd) {
    std::vector<std::string> argv;
    std::string cur;
    bool have = false;
    char quote = 0;
    for (char c : cmd) {
        if (quote) {
            if (c == quote)
                quote = 0;
            else
                cur += c;
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            have = true;
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\n') {
            if (have) {
                argv.push_back(std::move(cur));
                cur.clear();
                have = false;
            }
            continue;
        }
        cur += c;
        have = true;
    }
    if (quote) throw SpawnError("unterminated quote in command: " + std::string(cmd));
    if (have) argv.push_back(std::move(cur));
    return argv;
}

struct SpawnSpec {
    std::vector<std::string> argv;
    std::vector<std::pair<std::string, std::string>> env_overlay;
    std::string cwd;          // empty = inherit
    std::string stdout_path;  // empty = inherit
    std::string stderr_path;
    bool own_process_group = false;
};

// A spawned child. Exec failures in the child are relayed through a
// close-on-exec pipe so the caller gets a SpawnError instead of a bogus
// exit status.
class ChildProcess {
public:
    ChildProcess() = default;
    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;
    ChildProcess(ChildProcess&& o) noexcept : pid_(o.pid_), err_fd_(o.err_fd_) {
        o.pid_ = -1;
        o.err_fd_ = -1;
    }
    ChildProcess& operator=(ChildProcess&& o) noexcept {
        std::swap(pid_, o.pid_);
        std::swap(err_fd_, o.err_fd_);
        return *this;
    }
    ~ChildProcess() {
        if (err_fd_ >= 0) ::close(err_fd_);
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            int status;
            ::waitpid(pid_, &status, 0);
        }
    }

    static ChildProcess spawn(const SpawnSpec& spec) {
        if (spec.argv.empty()) throw SpawnError("empty command");

        int errpipe[2];
        if (::pipe2(errpipe, O_CLOEXEC) != 0)
            throw SpawnError("pipe2: " + std::string(std::strerror(errno)));

        std::vector<std::string> env_store;
        for (char** e = environ_ptr(); *e; ++e) {
            std::string_view kv(*e);
            std::size_t eq = kv.find('=');
            std::string key(kv.substr(0, eq));
            bool overridden = false;
            for (const auto& [k, v] : spec.env_overlay)
                if (k == key) {
                    overridden = true;
                    break;
                }
            if (!overridden) env_store.emplace_back(kv);
        }
        for (const auto& [k, v] : spec.env_overlay) env_store.push_back(k + "=" + v);

        std::vector<char*> argv_ptrs, env_ptrs;
        for (const std::string& a : spec.argv) argv_ptrs.push_back(const_cast<char*>(a.c_str()));
        argv_ptrs.push_back(nullptr);
        for (const std::string& e : env_store) env_ptrs.push_back(const_cast<char*>(e.c_str()));
        env_ptrs.push_back(nullptr);

        pid_t pid = ::fork();
        if (pid < 0) {
            ::close(errpipe[0]);
            ::close(errpipe[1]);
            throw SpawnError("fork: " + std::string(std::strerror(errno)));
        }
        if (pid == 0) {
            ::close(errpipe[0]);
            if (spec.own_process_group) ::setpgid(0, 0);
            auto bail = [&](int e) {
                ssize_t n = ::write(errpipe[1], &e, sizeof(e));
                (void)n;
                ::_exit(127);
            };
            if (!spec.cwd.empty() && ::chdir(spec.cwd.c_str()) != 0) bail(errno);
            if (!spec.stdout_path.empty()) {
                int fd = ::open(spec.stdout_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
                if (fd < 0 || ::dup2(fd, STDOUT_FILENO) < 0) bail(errno);
                ::close(fd);
            }
            if (!spec.stderr_path.empty()) {
                int fd = ::open(spec.stderr_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
                if (fd < 0 || ::dup2(fd, STDERR_FILENO) < 0) bail(errno);
                ::close(fd);
            }
            ::execvpe(argv_ptrs[0], argv_ptrs.data(), env_ptrs.data());
            bail(errno);
        }

        ::close(errpipe[1]);
        ChildProcess child;
        child.pid_ = pid;
        child.err_fd_ = errpipe[0];
        return child;
    }

    pid_t pid() const { return pid_; }

    // Reaps the child. Throws SpawnError if exec itself failed (e.g. the
    // binary does not exist); otherwise returns the exit code, with
    // signal-terminated children mapped to 128+signo.
    int wait(const std::string& binary_hint = {}) {
        int exec_errno = 0;
        if (err_fd_ >= 0) {
            ssize_t n = ::read(err_fd_, &exec_errno, sizeof(exec_errno));
            ::close(err_fd_);
            err_fd_ = -1;
            if (n <= 0) exec_errno = 0;
        }
        int status = 0;
        pid_t r;
        do {
            r = ::waitpid(pid_, &status, 0);
        } while (r < 0 && errno == EINTR);
        pid_ = -1;
        if (exec_errno != 0)
            throw SpawnError("cannot execute '" + binary_hint + "': " +
                             std::strerror(exec_errno));
        if (r < 0) throw SpawnError("waitpid: " + std::string(std::strerror(errno)));
        if (WIFEXITED(status)) return WEXITSTATUS(status);
        if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
        return -1;
    }

    void interrupt(int signo = SIGTERM) {
        if (pid_ > 0) ::kill(pid_, signo);
    }

private:
    static char** environ_ptr() {
        extern char** environ;
        return environ;
    }

    pid_t pid_ = -1;
    int err_fd_ = -1;
};

} // namespace sweepmill
