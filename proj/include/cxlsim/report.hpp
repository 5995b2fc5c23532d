#pragma once

#include <cstdio>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "cxlsim/error.hpp"
#include "cxlsim/placement.hpp"
#include "cxlsim/timing.hpp"
#include "cxlsim/topology.hpp"

namespace cxlsim {

inline constexpr const char* kToolVersion = "0.1.0";

struct ReportMeta {
    std::string tool_version = kToolVersion;
    std::string topology_digest;
    nlohmann::json policy; // alphabetically keyed policy document
    std::uint64_t epoch_len_ns = 0;
    bool scale_with_counters = false;
    bool operator==(const ReportMeta&) const = default;
};

struct SimReport {
    ReportMeta meta;
    RunResult run;
    bool operator==(const SimReport&) const = default;
};

inline SimReport make_report(RunResult run, const Topology& topo, const PlacementPolicy& policy,
                             const SimConfig& cfg) {
    SimReport report;
    report.meta.topology_digest = topo.digest();
    report.meta.policy = policy_to_json(policy);
    report.meta.epoch_len_ns = cfg.epoch_len_ns;
    report.meta.scale_with_counters = cfg.scale_with_counters;
    report.run = std::move(run);
    return report;
}

namespace detail {

// Canonical number and string formatting for report emission: every real is
// printed fixed with three decimals so equal reports are equal bytes.
inline std::string fmt3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default:
            if (static_cast<unsigned char>(c) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                out += buf;
            } else {
                out += c;
            }
        }
    }
    return out;
}

inline void emit_counts(std::string& out, const PoolCounts& counts) {
    out += '{';
    bool first = true;
    for (const auto& [pool, c] : counts) { // std::map: ids already sorted
        if (!first)
            out += ',';
        first = false;
        out += '"' + json_escape(pool) + "\":{\"bytes\":" + std::to_string(c.bytes) +
               ",\"reads\":" + std::to_string(c.reads) +
               ",\"writes\":" + std::to_string(c.writes) + '}';
    }
    out += '}';
}

inline void emit_delays(std::string& out, const DelayBreakdown& d) {
    out += "{\"bandwidth_ns\":" + fmt3(d.bandwidth_ns) +
           ",\"congestion_ns\":" + fmt3(d.congestion_ns) +
           ",\"latency_ns\":" + fmt3(d.latency_ns) + ",\"total_ns\":" + fmt3(d.total_ns()) + '}';
}

// The totals a report claims must be the fold of its epochs, accumulated in
// the same order and with the same expressions the engine uses.
inline void check_report_additivity(const SimReport& report) {
    DelayBreakdown fold;
    PoolCounts counts;
    double acc = 0.0;
    for (const auto& e : report.run.epochs) {
        fold.latency_ns += e.delays.latency_ns;
        fold.congestion_ns += e.delays.congestion_ns;
        fold.bandwidth_ns += e.delays.bandwidth_ns;
        acc += e.delays.total_ns();
        for (const auto& [pool, c] : e.counts) {
            OpCounts& t = counts[pool];
            t.reads += c.reads;
            t.writes += c.writes;
            t.bytes += c.bytes;
        }
    }
    double simulated = static_cast<double>(report.run.clock.native_ns) + acc;
    if (!(fold == report.run.total_delays) || counts != report.run.total_counts ||
        simulated != report.run.clock.simulated_ns)
        throw SimError("report totals do not equal the fold of its epochs");
}

} // namespace detail

/// Canonical JSON serialization: object keys sorted, reals fixed at three
/// decimals. Semantically equal reports serialize to identical bytes.
inline std::string serialize_report(const SimReport& report) {
    detail::check_report_additivity(report);

    std::string out;
    out.reserve(4096 + report.run.epochs.size() * 256);
    out += "{\"epochs\":[";
    bool first = true;
    for (const auto& e : report.run.epochs) {
        if (!first)
            out += ',';
        first = false;
        out += "{\"counts\":";
        detail::emit_counts(out, e.counts);
        out += ",\"delays\":";
        detail::emit_delays(out, e.delays);
        out += ",\"diagnostics\":{\"l2_stalls\":" + std::to_string(e.diagnostics.l2_stalls) +
               ",\"llc_misses\":" + std::to_string(e.diagnostics.llc_misses) +
               ",\"samples\":" + std::to_string(e.diagnostics.samples) + '}';
        out += ",\"end_ns\":" + std::to_string(e.window.end_ns) +
               ",\"index\":" + std::to_string(e.window.index) +
               ",\"start_ns\":" + std::to_string(e.window.start_ns);
        out += ",\"switch_bytes\":{";
        bool sfirst = true;
        for (const auto& [id, bytes] : e.switch_bytes) {
            if (!sfirst)
                out += ',';
            sfirst = false;
            out += '"' + detail::json_escape(id) + "\":" + std::to_string(bytes);
        }
        out += "}}";
    }
    out += "],\"meta\":{";
    out += "\"epoch_len_ns\":" + std::to_string(report.meta.epoch_len_ns);
    out += ",\"policy\":" + report.meta.policy.dump();
    out += ",\"scale_with_counters\":";
    out += report.meta.scale_with_counters ? "true" : "false";
    out += ",\"tool_version\":\"" + detail::json_escape(report.meta.tool_version) + '"';
    out += ",\"topology_digest\":\"" + detail::json_escape(report.meta.topology_digest) + "\"}";
    out += ",\"totals\":{\"counts\":";
    detail::emit_counts(out, report.run.total_counts);
    out += ",\"delays\":";
    detail::emit_delays(out, report.run.total_delays);
    out += ",\"native_ns\":" + std::to_string(report.run.clock.native_ns);
    out += ",\"simulated_ns\":" + detail::fmt3(report.run.clock.simulated_ns);
    out += "},\"truncated\":";
    out += report.run.truncated ? "true" : "false";
    out += "}\n";
    return out;
}

/// Plot-ready per-epoch rows; one line per epoch, delays fixed at three
/// decimals like the JSON report.
inline std::string report_csv(const SimReport& report) {
    std::string out =
        "epoch,start_ns,end_ns,samples,llc_misses,l2_stalls,"
        "latency_ns,congestion_ns,bandwidth_ns,total_ns\n";
    for (const auto& e : report.run.epochs) {
        out += std::to_string(e.window.index) + ',' + std::to_string(e.window.start_ns) + ',' +
               std::to_string(e.window.end_ns) + ',' + std::to_string(e.diagnostics.samples) +
               ',' + std::to_string(e.diagnostics.llc_misses) + ',' +
               std::to_string(e.diagnostics.l2_stalls) + ',' + detail::fmt3(e.delays.latency_ns) +
               ',' + detail::fmt3(e.delays.congestion_ns) + ',' +
               detail::fmt3(e.delays.bandwidth_ns) + ',' + detail::fmt3(e.delays.total_ns()) +
               '\n';
    }
    return out;
}

} // namespace cxlsim
