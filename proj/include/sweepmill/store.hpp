#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sweepmill/combinator.hpp"
#include "sweepmill/dag.hpp"
#include "sweepmill/errors.hpp"
#include "sweepmill/wdl.hpp"

namespace sweepmill {

struct RunRecord {
    std::int64_t instance = 0;
    std::string task;
    std::int64_t start_ns = 0; // wall clock, ns since epoch
    std::int64_t end_ns = 0;
    double duration_s = 0;     // monotonic clock
    int exit_code = 0;
    std::string stdout_path;
    std::string stderr_path;
    std::string host;
};

struct FileManifest {
    struct In {
        std::string label, path;
        std::uint64_t hash = 0;
        bool staged = false;
    };
    struct Out {
        std::string label, path;
        bool exists = false;
    };
    std::vector<In> infiles;
    std::vector<Out> outfiles;
};

using StateMap = std::map<std::int64_t, std::map<std::string, TaskState>>;

namespace detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IOError(tmp.string(), "cannot open for writing");
        out << bytes;
        out.flush();
        if (!out) throw IOError(tmp.string(), "write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IOError(path.string(), "rename failed: " + ec.message());
}

inline std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError(path.string(), "cannot open");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline nlohmann::json value_to_json(const Value& v) {
    switch (v.kind()) {
    case ValueKind::string: return v.as_string();
    case ValueKind::integer: return v.as_integer();
    case ValueKind::real: return v.as_real();
    case ValueKind::boolean: return v.as_boolean();
    case ValueKind::list: {
        nlohmann::json arr = nlohmann::json::array();
        for (const Value& el : v.as_list()) arr.push_back(value_to_json(el));
        return arr;
    }
    case ValueKind::range: return v.canonical_string();
    }
    return nullptr;
}

inline Value json_to_value(const nlohmann::json& j) {
    if (j.is_string()) return Value(j.get<std::string>());
    if (j.is_number_integer()) return Value(j.get<std::int64_t>());
    if (j.is_number_float()) return Value(j.get<double>());
    if (j.is_boolean()) return Value(j.get<bool>());
    if (j.is_array()) {
        ValueList l;
        for (const auto& el : j) l.push_back(json_to_value(el));
        return Value(std::move(l));
    }
    throw CorruptCheckpoint("unsupported value in stored plan: " + j.dump());
}

inline nlohmann::json combination_to_json(const Combination& c) {
    nlohmann::json bindings = nlohmann::json::object();
    for (const auto& [key, v] : c.bindings)
        bindings[key.task + "." + key.keypath] = value_to_json(v);
    return nlohmann::json{{"index", c.index}, {"bindings", bindings}};
}

inline Combination combination_from_json(const nlohmann::json& j) {
    Combination c;
    c.index = j.at("index").get<std::int64_t>();
    for (auto it = j.at("bindings").begin(); it != j.at("bindings").end(); ++it) {
        std::string full = it.key();
        std::size_t dot = full.find('.');
        if (dot == std::string::npos)
            throw CorruptCheckpoint("binding key without task namespace: " + full);
        c.bindings.emplace(BindingKey{full.substr(0, dot), full.substr(dot + 1)},
                           json_to_value(it.value()));
    }
    return c;
}

} // namespace detail

inline nlohmann::json run_record_to_json(const RunRecord& r) {
    return nlohmann::json{{"task", r.task},          {"instance", r.instance},
                          {"start", r.start_ns},     {"end", r.end_ns},
                          {"duration_s", r.duration_s}, {"exit_code", r.exit_code},
                          {"host", r.host}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.task = j.at("task").get<std::string>();
    r.instance = j.at("instance").get<std::int64_t>();
    r.start_ns = j.at("start").get<std::int64_t>();
    r.end_ns = j.at("end").get<std::int64_t>();
    r.duration_s = j.at("duration_s").get<double>();
    r.exit_code = j.at("exit_code").get<int>();
    r.host = j.value("host", "");
    return r;
}

// File-based study database:
//   <root>/spec.canonical.yml    canonical spec copy (hashed for checkpoints)
//   <root>/plan.ndjson           one combination per line
//   <root>/checkpoint.json       instance -> task -> state, atomically replaced
//   <root>/instances/<i>-<hash8>/            per-instance workspace
//   <root>/instances/<i>-<hash8>/tasks/<t>/  run.json, files.json, stdout.log, stderr.log
class StudyStore {
public:
    static constexpr const char* kSpecFile = "spec.canonical.yml";
    static constexpr const char* kPlanFile = "plan.ndjson";
    static constexpr const char* kCheckpointFile = "checkpoint.json";

    static StudyStore init(const std::filesystem::path& root, const StudySpec& spec,
                           const std::vector<Combination>& plan, bool force = false) {
        namespace fs = std::filesystem;
        bool existed = fs::exists(root);
        if (existed && !fs::is_directory(root)) throw NonEmptyRoot(root.string(), "not a directory");
        if (existed && !fs::is_empty(root) && !force)
            throw NonEmptyRoot(root.string(), "refusing to initialize a non-empty directory "
                                              "(use --force)");

        StudyStore store;
        store.root_ = root;
        store.spec_ = spec;
        store.spec_hash_ = spec_hash(spec);
        store.plan_ = plan;

        // re-init with --force and an unchanged spec keeps completed states
        StateMap preserved;
        if (existed && force && fs::exists(root / kCheckpointFile)) {
            try {
                StudyStore old = open(root);
                if (old.spec_hash_ == store.spec_hash_) preserved = old.read_checkpoint();
            } catch (const Error&) {
                // unreadable previous store: start fresh
            }
        }

        fs::create_directories(root / "instances");
        detail::write_atomic(root / kSpecFile, serialize_canonical(spec));
        std::string plan_text;
        for (const Combination& c : plan)
            plan_text += detail::combination_to_json(c).dump() + "\n";
        detail::write_atomic(root / kPlanFile, plan_text);
        store.write_checkpoint(preserved);
        return store;
    }

    static StudyStore open(const std::filesystem::path& root) {
        namespace fs = std::filesystem;
        if (!fs::exists(root / kSpecFile))
            throw IOError(root.string(), "not a study store (missing " +
                                             std::string(kSpecFile) + ")");
        StudyStore store;
        store.root_ = root;
        std::string spec_text = detail::read_all(root / kSpecFile);
        store.spec_ = validate(parse_string(spec_text, DocFormat::yaml,
                                            (root / kSpecFile).string()));
        store.spec_hash_ = spec_hash(store.spec_);

        std::string plan_text = detail::read_all(root / kPlanFile);
        std::istringstream lines(plan_text);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            try {
                store.plan_.push_back(detail::combination_from_json(nlohmann::json::parse(line)));
            } catch (const nlohmann::json::exception& e) {
                throw CorruptCheckpoint((root / kPlanFile).string(),
                                        "bad plan line: " + std::string(e.what()));
            }
        }
        return store;
    }

    const std::filesystem::path& root() const { return root_; }
    const StudySpec& spec() const { return spec_; }
    std::uint64_t hash() const { return spec_hash_; }
    const std::vector<Combination>& plan() const { return plan_; }

    std::filesystem::path instance_dir(std::int64_t index) const {
        std::string tag = detail::hex16(detail::fnv1a64(detail::hex16(spec_hash_) + ":" +
                                                        std::to_string(index)))
                              .substr(0, 8);
        return root_ / "instances" / (std::to_string(index) + "-" + tag);
    }

    std::filesystem::path task_dir(std::int64_t index, const std::string& task) const {
        return instance_dir(index) / "tasks" / task;
    }

    std::filesystem::path run_record_path(std::int64_t index, const std::string& task) const {
        return task_dir(index, task) / "run.json";
    }

    void prepare_task_dir(std::int64_t index, const std::string& task) const {
        std::filesystem::create_directories(task_dir(index, task));
    }

    // The run record is the task's durable completion marker; it is written
    // atomically and must land before the checkpoint calls the task done.
    void append_record(const RunRecord& r) const {
        prepare_task_dir(r.instance, r.task);
        detail::write_atomic(run_record_path(r.instance, r.task),
                             run_record_to_json(r).dump(2) + "\n");
    }

    std::optional<RunRecord> read_record(std::int64_t index, const std::string& task) const {
        auto path = run_record_path(index, task);
        if (!std::filesystem::exists(path)) return std::nullopt;
        try {
            return run_record_from_json(nlohmann::json::parse(detail::read_all(path)));
        } catch (const nlohmann::json::exception&) {
            return std::nullopt; // torn write: treat as absent
        }
    }

    std::vector<RunRecord> read_all_records() const {
        std::vector<RunRecord> out;
        for (const Combination& c : plan_)
            for (const TaskSpec& t : spec_.tasks)
                if (auto r = read_record(c.index, t.task)) out.push_back(*r);
        return out;
    }

    void write_files_manifest(std::int64_t index, const std::string& task,
                              const FileManifest& m) const {
        nlohmann::json j;
        j["infiles"] = nlohmann::json::array();
        for (const auto& f : m.infiles)
            j["infiles"].push_back({{"label", f.label},
                                    {"path", f.path},
                                    {"hash", detail::hex16(f.hash)},
                                    {"staged", f.staged}});
        j["outfiles"] = nlohmann::json::array();
        for (const auto& f : m.outfiles)
            j["outfiles"].push_back({{"label", f.label}, {"path", f.path}, {"exists", f.exists}});
        prepare_task_dir(index, task);
        detail::write_atomic(task_dir(index, task) / "files.json", j.dump(2) + "\n");
    }

    void write_checkpoint(const StateMap& states) const {
        nlohmann::json j;
        j["spec_hash"] = detail::hex16(spec_hash_);
        nlohmann::json s = nlohmann::json::object();
        for (const auto& [index, tasks] : states) {
            nlohmann::json inst = nlohmann::json::object();
            for (const auto& [task, state] : tasks) inst[task] = to_string(state);
            s[std::to_string(index)] = std::move(inst);
        }
        j["states"] = std::move(s);
        detail::write_atomic(root_ / kCheckpointFile, j.dump(2) + "\n");
    }

    StateMap read_checkpoint() const {
        auto path = root_ / kCheckpointFile;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(detail::read_all(path));
        } catch (const nlohmann::json::exception& e) {
            throw CorruptCheckpoint(path.string(), e.what());
        }
        if (!j.contains("spec_hash") || !j.contains("states"))
            throw CorruptCheckpoint(path.string(), "missing spec_hash or states");
        if (j["spec_hash"].get<std::string>() != detail::hex16(spec_hash_))
            throw HashMismatch(path.string(),
                               "checkpoint was written for a different study description");
        StateMap out;
        for (auto it = j["states"].begin(); it != j["states"].end(); ++it) {
            std::int64_t index = std::stoll(it.key());
            for (auto t = it.value().begin(); t != it.value().end(); ++t)
                out[index][t.key()] = task_state_from_string(t.value().get<std::string>());
        }
        return out;
    }

    // Provenance is regenerated purely from what is on disk so a report can
    // be produced by any process at any time, including mid-run.
    std::string provenance_report() const {
        std::ostringstream out;
        StateMap states;
        try {
            states = read_checkpoint();
        } catch (const Error&) {
            // no checkpoint yet: report plan only
        }

        std::size_t done = 0, failed = 0, skipped = 0, other = 0;
        for (const auto& [i, tasks] : states)
            for (const auto& [t, s] : tasks) {
                if (s == TaskState::done)
                    ++done;
                else if (s == TaskState::failed)
                    ++failed;
                else if (s == TaskState::skipped)
                    ++skipped;
                else
                    ++other;
            }

        out << "study root: " << root_.string() << "\n";
        out << "spec hash:  " << detail::hex16(spec_hash_) << "\n";
        out << "instances:  " << plan_.size() << "\n";
        out << "tasks per instance: " << spec_.tasks.size() << "\n";
        out << "task states: done=" << done << " failed=" << failed << " skipped=" << skipped
            << " other=" << other << "\n";

        for (const Combination& c : plan_) {
            out << "\ninstance " << c.index << "  [";
            bool first = true;
            for (const auto& [key, v] : c.bindings) {
                if (!first) out << ", ";
                first = false;
                out << key.task << "." << key.keypath << "=" << v.canonical_string();
            }
            out << "]\n";
            auto inst_states = states.find(c.index);
            for (const TaskSpec& t : spec_.tasks) {
                TaskState s = TaskState::pending;
                if (inst_states != states.end()) {
                    auto ts = inst_states->second.find(t.task);
                    if (ts != inst_states->second.end()) s = ts->second;
                }
                out << "  " << t.task << ": " << to_string(s);
                if (auto r = read_record(c.index, t.task)) {
                    std::ostringstream dur;
                    dur.setf(std::ios::fixed);
                    dur.precision(3);
                    dur << r->duration_s;
                    out << "  exit=" << r->exit_code << "  " << dur.str() << "s  host="
                        << r->host;
                }
                out << "\n";
                auto files_path = task_dir(c.index, t.task) / "files.json";
                if (std::filesystem::exists(files_path)) {
                    try {
                        nlohmann::json fj = nlohmann::json::parse(detail::read_all(files_path));
                        for (const auto& f : fj.value("infiles", nlohmann::json::array()))
                            out << "    infile " << f.value("label", "") << ": "
                                << f.value("path", "") << " (fnv64=" << f.value("hash", "")
                                << (f.value("staged", false) ? ", staged" : "") << ")\n";
                        for (const auto& f : fj.value("outfiles", nlohmann::json::array()))
                            out << "    outfile " << f.value("label", "") << ": "
                                << f.value("path", "")
                                << (f.value("exists", false) ? " (exists)" : " (missing)")
                                << "\n";
                    } catch (const nlohmann::json::exception&) {
                        out << "    (unreadable files.json)\n";
                    }
                }
            }
        }
        return out.str();
    }

private:
    std::filesystem::path root_;
    StudySpec spec_;
    std::uint64_t spec_hash_ = 0;
    std::vector<Combination> plan_;
};

} // namespace sweepmill
