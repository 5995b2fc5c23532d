// cxlsim command line: validate topologies, generate synthetic traces, and
// replay traces against a memory topology.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <cxlsim/cxlsim.hpp>

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw cxlsim::IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw cxlsim::IoError("cannot write '" + path.string() + "'");
    out << text;
    out.flush();
    if (!out)
        throw cxlsim::IoError("write failed for '" + path.string() + "'");
}

// Human-facing number format: fixed three decimals with trailing zeros (and a
// bare point) trimmed, so 220.0 prints as "220" and 88.9 stays "88.9".
std::string fmt_trim(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    std::string s = buf;
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.')
        s.pop_back();
    return s;
}

int cmd_validate(const fs::path& topology_path) {
    cxlsim::Topology topo = cxlsim::Topology::parse(slurp(topology_path));
    std::printf("topology OK: %zu nodes, digest %s\n", topo.nodes().size(),
                topo.digest().c_str());
    std::printf("local DRAM: lat %s ns\n", fmt_trim(topo.local_latency_ns()).c_str());
    for (const auto& pool : topo.pool_ids()) {
        cxlsim::PoolPath path = topo.resolve_path(pool);
        std::string via;
        for (const auto& sw : topo.switches_on_path(pool)) {
            if (!via.empty())
                via += "→";
            via += sw;
        }
        std::string row = pool + ": lat " + fmt_trim(path.total_latency_ns) + " ns";
        if (path.total_write_latency_ns != path.total_latency_ns)
            row += ", wlat " + fmt_trim(path.total_write_latency_ns) + " ns";
        row += ", bw " + fmt_trim(path.min_bandwidth_bytes_per_ns) + " B/ns, via " + via;
        std::printf("%s\n", row.c_str());
    }
    return 0;
}

struct SynthArgs {
    std::string pattern = "sequential";
    std::uint64_t ops = 0;
    std::uint64_t working_set = 0;
    std::uint64_t inter_arrival = 0;
    double write_frac = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t cacheline = 64;
    std::uint64_t sample_period = 1;
    std::string out;
};

int cmd_synth(const SynthArgs& args) {
    cxlsim::SynthSpec spec;
    if (args.pattern == "sequential")
        spec.pattern = cxlsim::SynthPattern::kSequential;
    else if (args.pattern == "uniform_random")
        spec.pattern = cxlsim::SynthPattern::kUniformRandom;
    else if (args.pattern == "hotspot")
        spec.pattern = cxlsim::SynthPattern::kHotspot;
    else
        throw cxlsim::ConfigError("synth: unknown pattern '" + args.pattern + "'");
    spec.ops = args.ops;
    spec.working_set_bytes = args.working_set;
    spec.inter_arrival_ns = args.inter_arrival;
    spec.write_fraction = args.write_frac;
    spec.seed = args.seed;
    spec.cacheline_bytes = static_cast<std::uint32_t>(args.cacheline);
    spec.sample_period = static_cast<std::uint32_t>(args.sample_period);

    cxlsim::Trace trace = cxlsim::synth_trace(spec);
    std::ostringstream body;
    cxlsim::write_trace(trace, body);
    spit(args.out, body.str());
    std::printf("wrote %zu events to %s\n", trace.events.size(), args.out.c_str());
    return 0;
}

int cmd_simulate(const fs::path& config_path, const fs::path& out_path,
                 const fs::path& csv_path) {
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(slurp(config_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw cxlsim::ConfigError("run config: syntax error: " + std::string(e.what()));
    }
    if (!cfg.is_object())
        throw cxlsim::ConfigError("run config: must be a JSON object");
    try {
        cxlsim::detail::require_keys(
            cfg, {"topology", "trace", "policy", "epoch_len_ns", "scale_with_counters"},
            "run config");
    } catch (const cxlsim::ParseError& e) {
        throw cxlsim::ConfigError(e.what()); // bad run config is a config error
    }
    for (const char* key : {"topology", "trace", "policy"})
        if (!cfg.contains(key))
            throw cxlsim::ConfigError(std::string("run config: missing '") + key + "'");
    if (!cfg["topology"].is_string() || !cfg["trace"].is_string())
        throw cxlsim::ConfigError("run config: topology and trace must be path strings");

    // Paths are resolved relative to the config file, not the working
    // directory, so a run directory stays relocatable.
    fs::path base = config_path.parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path q(p);
        return q.is_absolute() ? q : base / q;
    };

    cxlsim::SimConfig sim_cfg;
    if (cfg.contains("epoch_len_ns")) {
        if (!cfg["epoch_len_ns"].is_number_unsigned() ||
            cfg["epoch_len_ns"].get<std::uint64_t>() == 0)
            throw cxlsim::ConfigError("run config: epoch_len_ns must be a positive integer");
        sim_cfg.epoch_len_ns = cfg["epoch_len_ns"].get<std::uint64_t>();
    }
    if (cfg.contains("scale_with_counters")) {
        if (!cfg["scale_with_counters"].is_boolean())
            throw cxlsim::ConfigError("run config: scale_with_counters must be a boolean");
        sim_cfg.scale_with_counters = cfg["scale_with_counters"].get<bool>();
    }

    cxlsim::Topology topo = cxlsim::Topology::parse(slurp(resolve(cfg["topology"])));
    cxlsim::PlacementPolicy policy = cxlsim::parse_policy(cfg["policy"]);

    fs::path trace_path = resolve(cfg["trace"]);
    std::ifstream tin(trace_path, std::ios::binary);
    if (!tin)
        throw cxlsim::IoError("cannot open '" + trace_path.string() + "'");
    cxlsim::Trace trace = cxlsim::read_trace(tin);

    cxlsim::RunResult run = cxlsim::run_replay(trace, topo, policy, sim_cfg);
    cxlsim::SimReport report = cxlsim::make_report(std::move(run), topo, policy, sim_cfg);
    spit(out_path, cxlsim::serialize_report(report));
    if (!csv_path.empty())
        spit(csv_path, cxlsim::report_csv(report));

    const cxlsim::SimClock& clock = report.run.clock;
    std::printf("%zu epochs, native %llu ns, simulated %s ns (delay %s ns)%s\n",
                report.run.epochs.size(),
                static_cast<unsigned long long>(clock.native_ns),
                fmt_trim(clock.simulated_ns).c_str(),
                fmt_trim(clock.simulated_ns - static_cast<double>(clock.native_ns)).c_str(),
                report.run.truncated ? " [truncated]" : "");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CXL.mem topology simulator"};
    app.set_version_flag("--version", cxlsim::kToolVersion);
    app.require_subcommand(1);

    std::string topology_path;
    CLI::App* validate = app.add_subcommand("validate", "check a topology file and print paths");
    validate->add_option("--topology", topology_path, "topology JSON file")->required();

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic trace");
    synth_cmd->add_option("--pattern", synth.pattern,
                          "sequential, uniform_random, or hotspot");
    synth_cmd->add_option("--ops", synth.ops, "number of accesses")->required();
    synth_cmd->add_option("--working-set", synth.working_set, "working set bytes")->required();
    synth_cmd->add_option("--inter-arrival", synth.inter_arrival, "gap between accesses, ns")
        ->required();
    synth_cmd->add_option("--write-frac", synth.write_frac, "fraction of writes [0,1]");
    synth_cmd->add_option("--seed", synth.seed, "RNG seed");
    synth_cmd->add_option("--cacheline", synth.cacheline, "cache line bytes");
    synth_cmd->add_option("--sample-period", synth.sample_period, "ops per sampled access");
    synth_cmd->add_option("--out", synth.out, "output trace path")->required();

    std::string config_path, report_path, csv_path;
    CLI::App* simulate = app.add_subcommand("simulate", "replay a trace against a topology");
    simulate->add_option("--config", config_path, "run config JSON file")->required();
    simulate->add_option("--out", report_path, "report JSON output path")->required();
    simulate->add_option("--csv", csv_path, "optional per-epoch CSV output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2; // bad usage is a config error
    }

    try {
        if (*validate)
            return cmd_validate(topology_path);
        if (*synth_cmd)
            return cmd_synth(synth);
        if (*simulate)
            return cmd_simulate(config_path, report_path, csv_path);
    } catch (const cxlsim::ConfigError& e) {
        std::cerr << "cxlsim: config error: " << e.what() << '\n';
        return 2;
    } catch (const cxlsim::IoError& e) {
        std::cerr << "cxlsim: io error: " << e.what() << '\n';
        return 2;
    } catch (const cxlsim::ParseError& e) {
        std::cerr << "cxlsim: parse error: " << e.what() << '\n';
        return 3;
    } catch (const cxlsim::ValidationError& e) {
        std::cerr << "cxlsim: validation error: " << e.what() << '\n';
        return 3;
    } catch (const cxlsim::SimError& e) {
        std::cerr << "cxlsim: simulation error: " << e.what() << '\n';
        return 4;
    }
    return 2;
}
