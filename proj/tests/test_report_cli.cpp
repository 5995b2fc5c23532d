#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <cxlsim/cxlsim.hpp>

#include "support/oracles.hpp"

using namespace cxlsim;
namespace fs = std::filesystem;

static SimReport sample_report(std::uint64_t seed = 0x50) {
    std::mt19937_64 rng(seed);
    testsup::TraceGenOpts opts;
    opts.max_events = 400;
    Trace t = testsup::random_trace(rng, opts);
    Topology topo = testsup::two_pool_topology();
    PlacementPolicy policy = RoundRobinPolicy{{"P1", "P2"}};
    SimConfig cfg;
    cfg.epoch_len_ns = 700;
    return make_report(run_replay(t, topo, policy, cfg), topo, policy, cfg);
}

TEST_CASE("make_report records where the run came from") {
    SimReport r = sample_report();
    CHECK(r.meta.tool_version == kToolVersion);
    CHECK(r.meta.topology_digest == testsup::two_pool_topology().digest());
    CHECK(r.meta.epoch_len_ns == 700);
    CHECK(r.meta.scale_with_counters);
    CHECK(r.meta.policy["policy"] == "round_robin");
}

TEST_CASE("serialization is canonical and deterministic") {
    std::string a = serialize_report(sample_report());
    std::string b = serialize_report(sample_report());
    CHECK(a == b);
    CHECK(a.front() == '{');
    CHECK(a.back() == '\n');

    // the emitted document is well-formed JSON with the expected shape
    nlohmann::json doc = nlohmann::json::parse(a);
    REQUIRE(doc.contains("epochs"));
    REQUIRE(doc.contains("meta"));
    REQUIRE(doc.contains("totals"));
    REQUIRE(doc.contains("truncated"));
    CHECK(doc["meta"]["tool_version"] == kToolVersion);
    CHECK(doc["epochs"].is_array());
    CHECK(doc["totals"]["native_ns"].is_number_unsigned());
}

TEST_CASE("reals are emitted with exactly three decimals") {
    Topology topo = testsup::path250_topology();
    Trace t;
    t.events.push_back({0, AllocEvent{0x1000, 1 << 20, AllocMechanism::kMmap}});
    for (std::uint64_t i = 0; i < 1000; ++i)
        t.events.push_back({i * 25, AccessEvent{0x1000 + i * 64, false, 64}});
    SimConfig cfg;
    cfg.epoch_len_ns = 25'000;
    PlacementPolicy policy = RoundRobinPolicy{{"P1"}};
    SimReport report = make_report(run_replay(t, topo, policy, cfg), topo, policy, cfg);

    std::string text = serialize_report(report);
    CHECK(text.find("\"latency_ns\":161100.000") != std::string::npos);
    CHECK(text.find("\"congestion_ns\":0.000") != std::string::npos);
    CHECK(text.find("\"simulated_ns\":186076.000") != std::string::npos); // 24976 + 161100
}

TEST_CASE("serialization refuses totals that do not fold") {
    SimReport r = sample_report();
    if (r.run.epochs.empty())
        return;
    r.run.total_delays.latency_ns += 1.0;
    CHECK_THROWS_AS(serialize_report(r), SimError);

    SimReport r2 = sample_report();
    r2.run.clock.simulated_ns += 0.5;
    CHECK_THROWS_AS(serialize_report(r2), SimError);
}

TEST_CASE("csv has one row per epoch and sums match the json totals") {
    SimReport r = sample_report(0x51);
    std::string csv = report_csv(r);

    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "epoch,start_ns,end_ns,samples,llc_misses,l2_stalls,"
          "latency_ns,congestion_ns,bandwidth_ns,total_ns");

    std::size_t rows = 0;
    double lat = 0, cong = 0, bw = 0;
    while (std::getline(in, line)) {
        ++rows;
        std::istringstream cells(line);
        std::string cell;
        for (int c = 0; c < 7; ++c)
            std::getline(cells, cell, ',');
        lat += std::stod(cell);
        std::getline(cells, cell, ',');
        cong += std::stod(cell);
        std::getline(cells, cell, ',');
        bw += std::stod(cell);
    }
    REQUIRE(rows == r.run.epochs.size());
    double tol = 0.001 * static_cast<double>(rows) + 1e-9;
    CHECK(std::abs(lat - r.run.total_delays.latency_ns) <= tol);
    CHECK(std::abs(cong - r.run.total_delays.congestion_ns) <= tol);
    CHECK(std::abs(bw - r.run.total_delays.bandwidth_ns) <= tol);
}

// ---------------------------------------------------------------------------
// CLI end-to-end: drive the installed binary through a scratch directory.
// ---------------------------------------------------------------------------

namespace {

struct Scratch {
    fs::path dir;
    Scratch() {
        dir = fs::temp_directory_path() /
              ("cxlsim_test_" + std::to_string(::getpid()) + "_" +
               std::to_string(counter()++));
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    static int& counter() {
        static int n = 0;
        return n;
    }
    fs::path file(const std::string& name, const std::string& text) const {
        fs::path p = dir / name;
        std::ofstream out(p);
        out << text;
        return p;
    }
    std::string read(const std::string& name) const {
        std::ifstream in(dir / name);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
};

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

CliResult run_cli(const Scratch& s, const std::string& args) {
    fs::path out = s.dir / "stdout.txt";
    fs::path err = s.dir / "stderr.txt";
    std::string cmd = std::string(CXLSIM_BIN) + " " + args + " >" + out.string() + " 2>" +
                      err.string();
    int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream o(out), e(err);
    std::ostringstream so, se;
    so << o.rdbuf();
    se << e.rdbuf();
    r.out = so.str();
    r.err = se.str();
    return r;
}

} // namespace

TEST_CASE("cli validate prints the pool path table") {
    Scratch s;
    s.file("topo.json", testsup::fixture_topology_json());
    CliResult r = run_cli(s, "validate --topology " + (s.dir / "topo.json").string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("P1: lat 220 ns, bw 16 B/ns, via RC→S1") != std::string::npos);
    CHECK(r.out.find("local DRAM: lat 88.9 ns") != std::string::npos);
}

TEST_CASE("cli validate reports structured failures") {
    Scratch s;
    SECTION("cyclic topology exits 3 and mentions the cycle") {
        s.file("bad.json", R"({"local_latency_ns": 88.9, "nodes": [
            {"id":"RC","kind":"root_complex","latency_ns":1,"bandwidth_gbps":1,"children":["S1"]},
            {"id":"S1","kind":"switch","latency_ns":1,"bandwidth_gbps":1,"children":["RC"]}]})");
        CliResult r = run_cli(s, "validate --topology " + (s.dir / "bad.json").string());
        CHECK(r.exit_code == 3);
        CHECK(r.err.find("cycle") != std::string::npos);
    }
    SECTION("missing file exits 2 with an io error") {
        CliResult r = run_cli(s, "validate --topology " + (s.dir / "absent.json").string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("io error") != std::string::npos);
    }
    SECTION("malformed json exits 3") {
        s.file("syntax.json", "{nope");
        CliResult r = run_cli(s, "validate --topology " + (s.dir / "syntax.json").string());
        CHECK(r.exit_code == 3);
    }
    SECTION("bad usage exits 2") {
        CliResult r = run_cli(s, "validate");
        CHECK(r.exit_code == 2);
    }
}

TEST_CASE("cli synth writes deterministic replayable traces") {
    Scratch s;
    std::string flags = "synth --pattern hotspot --ops 500 --working-set 65536 "
                        "--inter-arrival 50 --write-frac 0.3 --seed 11 --out ";
    CHECK(run_cli(s, flags + (s.dir / "a.jsonl").string()).exit_code == 0);
    CHECK(run_cli(s, flags + (s.dir / "b.jsonl").string()).exit_code == 0);
    CHECK(s.read("a.jsonl") == s.read("b.jsonl"));
    CHECK(!s.read("a.jsonl").empty());

    std::ifstream in(s.dir / "a.jsonl");
    Trace t = read_trace(in);
    CHECK(t.events.size() == 501);

    CliResult bad = run_cli(s, "synth --pattern hotspot --ops 0 --working-set 65536 "
                               "--inter-arrival 50 --out " +
                                   (s.dir / "c.jsonl").string());
    CHECK(bad.exit_code == 2);
}

TEST_CASE("cli simulate produces byte-identical canonical reports") {
    Scratch s;
    s.file("topo.json", testsup::two_pool_topology_json());
    CHECK(run_cli(s, "synth --pattern uniform_random --ops 2000 --working-set 1048576 "
                     "--inter-arrival 20 --write-frac 0.4 --seed 5 --out " +
                         (s.dir / "trace.jsonl").string())
              .exit_code == 0);
    s.file("run.json", R"({
        "topology": "topo.json",
        "trace": "trace.jsonl",
        "policy": {"policy": "page_interleave", "pools": ["P1", "P2"], "page_bytes": 4096},
        "epoch_len_ns": 5000,
        "scale_with_counters": true
    })");

    CliResult r1 = run_cli(s, "simulate --config " + (s.dir / "run.json").string() + " --out " +
                                  (s.dir / "r1.json").string() + " --csv " +
                                  (s.dir / "r1.csv").string());
    REQUIRE(r1.exit_code == 0);
    CliResult r2 = run_cli(s, "simulate --config " + (s.dir / "run.json").string() + " --out " +
                                  (s.dir / "r2.json").string());
    REQUIRE(r2.exit_code == 0);
    CHECK(s.read("r1.json") == s.read("r2.json"));

    nlohmann::json doc = nlohmann::json::parse(s.read("r1.json"));
    CHECK(doc["meta"]["epoch_len_ns"] == 5000);
    CHECK(doc["epochs"].size() ==
          nlohmann::json::parse(s.read("r1.json"))["epochs"].size());
    std::size_t csv_rows = 0;
    std::istringstream csv(s.read("r1.csv"));
    std::string line;
    std::getline(csv, line); // header
    while (std::getline(csv, line))
        if (!line.empty())
            ++csv_rows;
    CHECK(csv_rows == doc["epochs"].size());
}

TEST_CASE("cli simulate resolves paths relative to the config file") {
    Scratch s;
    fs::create_directories(s.dir / "nested");
    std::ofstream(s.dir / "nested" / "topo.json") << testsup::fixture_topology_json();
    CHECK(run_cli(s, "synth --pattern sequential --ops 50 --working-set 4096 "
                     "--inter-arrival 100 --out " +
                         (s.dir / "nested" / "t.jsonl").string())
              .exit_code == 0);
    std::ofstream(s.dir / "nested" / "run.json") << R"({
        "topology": "topo.json",
        "trace": "t.jsonl",
        "policy": {"policy": "all_local"}
    })";
    // invoked with paths relative to the config, from an unrelated cwd
    CliResult r = run_cli(s, "simulate --config " + (s.dir / "nested" / "run.json").string() +
                                 " --out " + (s.dir / "report.json").string());
    REQUIRE(r.exit_code == 0);

    nlohmann::json doc = nlohmann::json::parse(s.read("report.json"));
    CHECK(doc["totals"]["simulated_ns"].get<double>() ==
          static_cast<double>(doc["totals"]["native_ns"].get<std::uint64_t>()));
    CHECK(doc["meta"]["epoch_len_ns"] == 10'000'000); // default applies
}

TEST_CASE("cli simulate maps failures onto documented exit codes") {
    Scratch s;
    s.file("topo.json", testsup::fixture_topology_json());
    s.file("trace.jsonl", "{\"v\":1,\"sample_period\":1,\"cacheline_bytes\":64}\n");

    auto config_with = [&](const std::string& body) {
        s.file("run.json", body);
        return "simulate --config " + (s.dir / "run.json").string() + " --out " +
               (s.dir / "out.json").string();
    };

    SECTION("config syntax error exits 2") {
        CHECK(run_cli(s, config_with("{oops")).exit_code == 2);
    }
    SECTION("unknown config key exits 2") {
        CHECK(run_cli(s, config_with(R"({"topology":"topo.json","trace":"trace.jsonl",
            "policy":{"policy":"all_local"},"epochs":3})"))
                  .exit_code == 2);
    }
    SECTION("bad policy exits 2") {
        CHECK(run_cli(s, config_with(R"({"topology":"topo.json","trace":"trace.jsonl",
            "policy":{"policy":"round_robin","pools":["NOPE"]}})"))
                  .exit_code == 2);
    }
    SECTION("malformed trace exits 3") {
        s.file("trace.jsonl", "{\"v\":1,\"sample_period\":1,\"cacheline_bytes\":64}\nbroken\n");
        CHECK(run_cli(s, config_with(R"({"topology":"topo.json","trace":"trace.jsonl",
            "policy":{"policy":"all_local"}})"))
                  .exit_code == 3);
    }
    SECTION("simulation failure exits 4") {
        s.file("trace.jsonl",
               "{\"v\":1,\"sample_period\":1,\"cacheline_bytes\":64}\n"
               "{\"ts\":0,\"ev\":\"alloc\",\"addr\":4096,\"size\":4096,\"mech\":\"mmap\"}\n"
               "{\"ts\":1,\"ev\":\"alloc\",\"addr\":4096,\"size\":64,\"mech\":\"mmap\"}\n");
        CliResult r = run_cli(s, config_with(R"({"topology":"topo.json","trace":"trace.jsonl",
            "policy":{"policy":"all_local"}})"));
        CHECK(r.exit_code == 4);
        CHECK(r.err.find("overlapping") != std::string::npos);
    }
}
