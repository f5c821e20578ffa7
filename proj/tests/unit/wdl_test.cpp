#include "doctest.h"

#include <random>

#include "sweepmill/wdl.hpp"
#include "../support/test_support.hpp"

using namespace sweepmill;
using testsupport::TempDir;
using testsupport::write_file;

namespace {

const char* kMatmulYaml = R"(# scaling study
task: matmul
  name: matmul scaling study
  command: ./matmul ${size} out.txt
  size: [16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384]
  environ:
    OMP_NUM_THREADS: 1:1:8
)";

StudySpec matmul_spec() {
    return validate(parse_string(kMatmulYaml, DocFormat::yaml));
}

} // namespace

TEST_CASE("task header with command parses into one task node") {
    RawDocument doc = parse_string("task: matmul\n  command: ./matmul ${size} out.txt\n",
                                   DocFormat::yaml);
    REQUIRE(doc.tasks.size() == 1);
    CHECK(doc.tasks[0].key == "matmul");
    REQUIRE(doc.tasks[0].children.size() == 1);
    CHECK(doc.tasks[0].children[0].key == "command");
    CHECK(doc.tasks[0].children[0].scalar == "./matmul ${size} out.txt");
}

TEST_CASE("comment-only file yields an empty document") {
    RawDocument doc = parse_string("# comment\n   # another\n", DocFormat::yaml);
    CHECK(doc.tasks.empty());
    CHECK(doc.settings.empty());
}

TEST_CASE("INI and YAML forms normalize to the same validated spec") {
    const char* yaml = "task: matmul\n  command: ./matmul\n  environ:\n    T: 4\n";
    const char* ini = "[matmul]\ncommand=./matmul\nenviron.T: 4\n";
    StudySpec a = validate(parse_string(yaml, DocFormat::yaml));
    StudySpec b = validate(parse_string(ini, DocFormat::ini));
    CHECK(a == b);
}

TEST_CASE("JSON and YAML forms validate to equal specs") {
    const char* yaml = R"(parallel: local
task: matmul
  command: ./matmul ${size} out.txt
  size: [16, 32]
  environ:
    OMP_NUM_THREADS: 1:1:8
)";
    const char* json = R"(
# comments are allowed in JSON input too
{
  "parallel": "local",
  "matmul": {
    "command": "./matmul ${size} out.txt",
    "size": [16, 32],
    "environ": {"OMP_NUM_THREADS": "1:1:8"}
  }
}
)";
    StudySpec a = validate(parse_string(yaml, DocFormat::yaml));
    StudySpec b = validate(parse_string(json, DocFormat::json));
    CHECK(a == b);
}

TEST_CASE("nesting deeper than two keyword levels is rejected") {
    const char* deep = R"(task: t
  command: x
  a:
    b:
      c: 1
)";
    CHECK_THROWS_AS(parse_string(deep, DocFormat::yaml), DepthError);
    CHECK_THROWS_AS(parse_string("[t]\ncommand=x\na.b.c=1\n", DocFormat::ini), DepthError);
    CHECK_THROWS_AS(
        parse_string(R"({"t": {"command": "x", "a": {"b": {"c": 1}}}})", DocFormat::json),
        DepthError);
}

TEST_CASE("format errors carry the line number") {
    try {
        parse_string("task: t\n  command: x\n  broken line\n", DocFormat::yaml);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
}

TEST_CASE("file parsing detects format from the extension") {
    TempDir dir;
    write_file(dir.path() / "s.yml", kMatmulYaml);
    RawDocument doc = parse_file(dir.path() / "s.yml");
    CHECK(doc.format == DocFormat::yaml);
    CHECK_THROWS_AS(parse_file(dir.path() / "missing.yml"), IOError);
    write_file(dir.path() / "s.txt", "task: t\n  command: x\n");
    CHECK_THROWS_AS(parse_file(dir.path() / "s.txt"), FormatError);
    // an explicit hint overrides the unknown extension
    CHECK(parse_file(dir.path() / "s.txt", DocFormat::yaml).tasks.size() == 1);
}

TEST_CASE("merge unions tasks and deep-merges entries, later file wins") {
    RawDocument a = parse_string("task: A\n  command: x\n  nnodes: 1\n", DocFormat::yaml);
    RawDocument b = parse_string("task: B\n  command: y\n", DocFormat::yaml);
    RawDocument c = parse_string("task: A\n  environ:\n    K: v\n  nnodes: 2\n",
                                 DocFormat::yaml);
    StudySpec spec = validate(merge_documents({a, b, c}));
    REQUIRE(spec.tasks.size() == 2);
    const TaskSpec* ta = spec.find_task("A");
    REQUIRE(ta);
    CHECK(ta->command == "x");
    CHECK(ta->nnodes == 2);
    REQUIRE(ta->environ.size() == 1);
    CHECK(ta->environ[0].first == "K");
    CHECK(spec.find_task("B")->command == "y");
}

TEST_CASE("conflicting commands at the same file-list position") {
    RawDocument a = parse_string("task: A\n  command: x\n", DocFormat::yaml);
    RawDocument b = parse_string("task: A\n  command: y\n", DocFormat::yaml);
    a.position = 3;
    b.position = 3;
    CHECK_THROWS_AS(merge_documents({a, b}), ConflictError);

    // with list order implying an override, the later one simply wins
    a.position = -1;
    b.position = -1;
    StudySpec spec = validate(merge_documents({a, b}));
    CHECK(spec.find_task("A")->command == "y");
}

TEST_CASE("matmul study validates to 11 sizes and an 8-thread range") {
    StudySpec spec = matmul_spec();
    REQUIRE(spec.tasks.size() == 1);
    const TaskSpec& t = spec.tasks[0];
    CHECK(t.command == "./matmul ${size} out.txt");
    REQUIRE(t.user_params.size() == 1);
    CHECK(t.user_params[0].first == "size");
    CHECK(t.user_params[0].second.as_list().size() == 11);
    REQUIRE(t.environ.size() == 1);
    const Value& threads = t.environ[0].second;
    REQUIRE(threads.is_range());
    CHECK(expand_range(threads.as_range()).size() == 8);
}

TEST_CASE("after referencing a missing task is an UnknownTaskRef") {
    const char* text = "task: t\n  command: x\n  after: [ghost]\n";
    CHECK_THROWS_AS(validate(parse_string(text, DocFormat::yaml)), UnknownTaskRef);
}

TEST_CASE("threads 1:1:8 expands to the eight thread counts") {
    StudySpec spec = validate(parse_string("task: t\n  command: x\n  threads: 1:1:8\n",
                                           DocFormat::yaml));
    const Value* v = spec.tasks[0].find_user_param("threads");
    REQUIRE(v);
    REQUIRE(v->is_range());
    auto xs = expand_range(v->as_range());
    REQUIRE(xs.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(xs[static_cast<std::size_t>(i)].as_integer() == i + 1);
}

TEST_CASE("missing command and bad reserved-keyword types are typed errors") {
    CHECK_THROWS_AS(validate(parse_string("task: t\n  name: no command\n", DocFormat::yaml)),
                    MissingCommand);
    CHECK_THROWS_AS(
        validate(parse_string("task: t\n  command: x\n  nnodes: zero\n", DocFormat::yaml)),
        TypeError);
    CHECK_THROWS_AS(
        validate(parse_string("task: t\n  command: x\n  nnodes: -2\n", DocFormat::yaml)),
        TypeError);
    CHECK_THROWS_AS(
        validate(parse_string("task: t\n  command: x\n  parallel: carrier-pigeon\n",
                              DocFormat::yaml)),
        TypeError);
    CHECK_THROWS_AS(
        validate(parse_string("task: t\n  command: x\n  threads: 1:0:8\n", DocFormat::yaml)),
        BadRange);
}

TEST_CASE("fixed groups must name existing parameters") {
    const char* good = "task: t\n  command: x\n  a: [1, 2]\n  b: [3, 4]\n  fixed: [a, b]\n";
    StudySpec spec = validate(parse_string(good, DocFormat::yaml));
    REQUIRE(spec.tasks[0].fixed_groups.size() == 1);
    CHECK(spec.tasks[0].fixed_groups[0] == std::vector<std::string>{"a", "b"});

    const char* bad = "task: t\n  command: x\n  a: [1, 2]\n  fixed: [a, ghost]\n";
    CHECK_THROWS_AS(validate(parse_string(bad, DocFormat::yaml)), BadFixedGroup);

    const char* multi =
        "task: t\n  command: x\n  a: [1, 2]\n  b: [3, 4]\n  c: [5, 6]\n  fixed: [[a, b], [c]]\n";
    CHECK(validate(parse_string(multi, DocFormat::yaml)).tasks[0].fixed_groups.size() == 2);
}

TEST_CASE("every reserved keyword is consumed or rejected, never dropped") {
    // each reserved keyword with a plausible and an implausible value
    struct Probe {
        const char* keyword;
        const char* good;
        const char* bad; // empty = no invalid form to probe
    };
    const Probe probes[] = {
        {"command", "./run", ""},
        {"name", "label", ""},
        {"after", "[t]", ""},
        {"parallel", "ssh", "bogus"},
        {"batch", "pbs", "slurm"},
        {"nnodes", "2", "x"},
        {"ppnode", "4", "0"},
        {"hosts", "[h1, h2]", ""},
        {"sampling", "", "17"},
    };
    for (const Probe& p : probes) {
        if (*p.good) {
            std::string text = std::string("task: t\n  command: x\n  ") + p.keyword + ": " +
                               p.good + "\n";
            StudySpec spec = validate(parse_string(text, DocFormat::yaml));
            // consumed by the TaskSpec, not dumped into userParams
            CHECK(spec.tasks[0].find_user_param(p.keyword) == nullptr);
        }
        if (*p.bad) {
            std::string text = std::string("task: t\n  command: x\n  ") + p.keyword + ": " +
                               p.bad + "\n";
            CHECK_THROWS_AS(validate(parse_string(text, DocFormat::yaml)), SpecError);
        }
    }
    // and a non-reserved keyword lands in userParams
    StudySpec spec =
        validate(parse_string("task: t\n  command: x\n  mysize: 5\n", DocFormat::yaml));
    CHECK(spec.tasks[0].find_user_param("mysize") != nullptr);
}

TEST_CASE("duplicate keywords: last occurrence wins with a warning") {
    RawDocument doc =
        parse_string("task: t\n  command: x\n  n: 1\n  n: 2\n", DocFormat::yaml);
    CHECK(doc.warnings.size() == 1);
    StudySpec spec = validate(doc);
    CHECK(spec.tasks[0].find_user_param("n")->as_integer() == 2);
}

TEST_CASE("global settings apply as task defaults and unknown ones are rejected") {
    const char* text = "parallel: ssh\nhosts: [h1]\ntask: t\n  command: x\n";
    StudySpec spec = validate(parse_string(text, DocFormat::yaml));
    CHECK(spec.tasks[0].parallel == ParallelMode::ssh);
    CHECK(spec.tasks[0].hosts == std::vector<std::string>{"h1"});
    CHECK(spec.settings.parallel == ParallelMode::ssh);

    CHECK_THROWS_AS(validate(parse_string("size: 4\ntask: t\n  command: x\n", DocFormat::yaml)),
                    TypeError);
}

TEST_CASE("substitute entries validate their regex and normalize to lists") {
    const char* text =
        "task: t\n  command: x\n  substitute:\n    '<steps>[0-9]+</steps>': [a, b]\n";
    StudySpec spec = validate(parse_string(text, DocFormat::yaml));
    REQUIRE(spec.tasks[0].substitute.size() == 1);
    CHECK(spec.tasks[0].substitute[0].second.as_list().size() == 2);

    const char* bad = "task: t\n  command: x\n  substitute:\n    '([': [a]\n";
    CHECK_THROWS_AS(validate(parse_string(bad, DocFormat::yaml)), BadRegex);
}

TEST_CASE("canonical serialization round-trips for every sample study") {
    const char* corpus[] = {
        kMatmulYaml,
        "task: a\n  command: one\ntask: b\n  command: two\n  after: [a]\n",
        "parallel: ssh\nhosts: [h1, h2]\ntask: t\n  command: x\n  parallel: local\n",
        "task: t\n  command: x\n  p: [1, 2]\n  q: [a, b]\n  fixed: [p, q]\n"
        "  sampling:\n    distribution: random\n    count: 2\n    seed: 9\n",
        "task: t\n  command: 'echo \"hi\"'\n  v: \"16\"\n  w: 1.0\n  r: 0.5:0.25:1.5\n",
        "task: t\n  command: x\n  infiles:\n    cfg: in.xml\n  outfiles:\n    out: out_${v}.txt\n"
        "  substitute:\n    '<n>[0-9]+</n>': ['<n>1</n>', '<n>2</n>']\n  v: [1, 2]\n",
    };
    for (const char* text : corpus) {
        StudySpec spec = validate(parse_string(text, DocFormat::yaml));
        std::string canon = serialize_canonical(spec);
        StudySpec again = validate(parse_string(canon, DocFormat::yaml));
        CHECK(again == spec);
        // serialization is a fixed point
        CHECK(serialize_canonical(again) == canon);
    }
}

TEST_CASE("spec hash ignores comments and formatting") {
    StudySpec a = validate(parse_string("task: t\n  command: x\n  n: 4\n", DocFormat::yaml));
    StudySpec b = validate(parse_string("# c\ntask: t\n  command:    x\n  n:   4\n# d\n",
                                        DocFormat::yaml));
    CHECK(spec_hash(a) == spec_hash(b));
    StudySpec c = validate(parse_string("task: t\n  command: x\n  n: 5\n", DocFormat::yaml));
    CHECK(spec_hash(a) != spec_hash(c));
}

TEST_CASE("randomized specs survive the serialize/parse round trip") {
    std::mt19937 gen(2024);
    auto pick = [&](int n) { return static_cast<int>(gen() % static_cast<unsigned>(n)); };
    for (int iter = 0; iter < 150; ++iter) {
        std::ostringstream text;
        int ntasks = 1 + pick(3);
        for (int t = 0; t < ntasks; ++t) {
            std::string name = "task" + std::to_string(t);
            text << "task: " << name << "\n";
            text << "  command: ./run_" << t << "\n";
            if (t > 0 && pick(2)) text << "  after: [task" << t - 1 << "]\n";
            int nparams = pick(4);
            for (int p = 0; p < nparams; ++p) {
                text << "  p" << p << ": ";
                switch (pick(4)) {
                case 0: text << pick(100) << "\n"; break;
                case 1: text << "[a" << pick(10) << ", b" << pick(10) << "]\n"; break;
                case 2: text << "1:1:" << 1 + pick(5) << "\n"; break;
                default: text << (pick(2) ? "true" : "word" + std::to_string(pick(10))) << "\n";
                }
            }
            if (pick(3) == 0) text << "  environ:\n    V" << t << ": " << pick(9) << "\n";
        }
        StudySpec spec = validate(parse_string(text.str(), DocFormat::yaml));
        StudySpec again = validate(parse_string(serialize_canonical(spec), DocFormat::yaml));
        CHECK(again == spec);
    }
}
