#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cxlsim/error.hpp"
#include "cxlsim/placement.hpp"
#include "cxlsim/topology.hpp"
#include "cxlsim/trace.hpp"

namespace cxlsim {

// ---------------------------------------------------------------------------
// Epoch partitioning
// ---------------------------------------------------------------------------

struct EpochWindow {
    std::uint64_t index = 0;
    std::uint64_t start_ns = 0;
    std::uint64_t end_ns = 0;
    bool operator==(const EpochWindow&) const = default;
};

/// Tiles [0, span_ns) with half-open windows of epoch_len_ns; the last window
/// absorbs the remainder. Zero span yields no windows.
inline std::vector<EpochWindow> partition_epochs(std::uint64_t span_ns,
                                                 std::uint64_t epoch_len_ns) {
    if (epoch_len_ns == 0)
        throw ConfigError("epoch_len_ns must be >= 1");
    std::vector<EpochWindow> windows;
    if (span_ns == 0)
        return windows;
    std::uint64_t count = (span_ns + epoch_len_ns - 1) / epoch_len_ns;
    windows.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i)
        windows.push_back({i, i * epoch_len_ns, std::min((i + 1) * epoch_len_ns, span_ns)});
    return windows;
}

// ---------------------------------------------------------------------------
// Delay components
// ---------------------------------------------------------------------------

struct DelayBreakdown {
    double latency_ns = 0.0;
    double congestion_ns = 0.0;
    double bandwidth_ns = 0.0;
    bool operator==(const DelayBreakdown&) const = default;
    double total_ns() const { return latency_ns + congestion_ns + bandwidth_ns; }
};

struct SimClock {
    std::uint64_t native_ns = 0;
    double simulated_ns = 0.0;
    bool operator==(const SimClock&) const = default;
};

struct EpochDiagnostics {
    std::uint64_t samples = 0;
    std::uint64_t llc_misses = 0;
    std::uint64_t l2_stalls = 0;
    bool operator==(const EpochDiagnostics&) const = default;
};

struct EpochResult {
    EpochWindow window;
    PoolCounts counts; // scaled when counter scaling applied
    DelayBreakdown delays;
    std::map<NodeId, std::uint64_t> switch_bytes; // switch and root-complex hops only
    EpochDiagnostics diagnostics;
    bool operator==(const EpochResult&) const = default;
};

/// Extra time spent because remote pools answer slower than local DRAM:
/// for each remote pool, operations times the (clamped, non-negative)
/// difference between the pool's path latency and the local baseline. Reads
/// and writes use the read and write path latencies respectively; these
/// coincide unless a node overrides write_latency_ns.
inline double latency_delay(const PoolCounts& counts, const Topology& topo) {
    double total = 0.0;
    for (const auto& [pool, c] : counts) {
        if (pool == kLocalPoolId)
            continue;
        PoolPath path = topo.resolve_path(pool);
        double read_delta = std::max(0.0, path.total_latency_ns - topo.local_latency_ns());
        double write_delta =
            std::max(0.0, path.total_write_latency_ns - topo.local_latency_ns());
        total += static_cast<double>(c.reads) * read_delta +
                 static_cast<double>(c.writes) * write_delta;
    }
    return total;
}

/// One epoch access with the pool it resolved to.
struct PoolAccessRef {
    std::uint64_t ts_ns = 0;
    NodeId pool;
};

struct CongestionResult {
    double total_ns = 0.0;
    std::vector<double> release_ns; // adjusted per-event timestamps, input order
};

/// FIFO serialization per switch: every node on an event's path with a serial
/// transmission time (switches, the root complex, and pools that set stt_ns)
/// stays busy for its stt after passing an event. An event is released once
/// its timestamp is reached and all its nodes are free; the sum of
/// release − timestamp over events is the congestion delay. Accesses must be
/// timestamp-ordered; ties keep trace order. Local accesses traverse nothing.
inline CongestionResult congestion_delay(std::span<const PoolAccessRef> accesses,
                                         const Topology& topo) {
    struct HopStt {
        std::size_t node;
        double stt_ns;
    };
    std::unordered_map<NodeId, std::vector<HopStt>> hops_by_pool;
    std::unordered_map<NodeId, std::size_t> node_slot;
    auto slot = [&](const NodeId& id) {
        auto [it, inserted] = node_slot.emplace(id, node_slot.size());
        return it->second;
    };

    CongestionResult result;
    result.release_ns.reserve(accesses.size());
    std::vector<double> busy_until; // indexed by slot, -inf when never used

    std::uint64_t prev_ts = 0;
    bool have_prev = false;
    for (const auto& access : accesses) {
        if (have_prev && access.ts_ns < prev_ts)
            throw SimError("congestion: accesses out of timestamp order");
        prev_ts = access.ts_ns;
        have_prev = true;

        if (access.pool == kLocalPoolId) {
            result.release_ns.push_back(static_cast<double>(access.ts_ns));
            continue;
        }

        auto it = hops_by_pool.find(access.pool);
        if (it == hops_by_pool.end()) {
            std::vector<HopStt> hops;
            for (const auto& id : topo.switches_on_path(access.pool))
                hops.push_back({slot(id), topo.node(id).stt_ns});
            const TopoNode& pool_node = topo.node(access.pool);
            if (pool_node.stt_ns > 0.0)
                hops.push_back({slot(access.pool), pool_node.stt_ns});
            it = hops_by_pool.emplace(access.pool, std::move(hops)).first;
        }
        busy_until.resize(node_slot.size(), -std::numeric_limits<double>::infinity());

        double release = static_cast<double>(access.ts_ns);
        for (const auto& hop : it->second)
            release = std::max(release, busy_until[hop.node]);
        result.total_ns += release - static_cast<double>(access.ts_ns);
        for (const auto& hop : it->second)
            busy_until[hop.node] = release + hop.stt_ns;
        result.release_ns.push_back(release);
    }
    return result;
}

/// Epoch stretch needed so that no node on a path carries more bytes than its
/// bandwidth allows within the (already latency- and congestion-extended)
/// epoch: the maximum over nodes of bytes/bandwidth − elapsed, clamped at
/// zero. The bottleneck node alone decides; stretching the epoch for it
/// relieves every other node as well.
inline double bandwidth_delay(const std::map<NodeId, std::uint64_t>& node_bytes,
                              double elapsed_with_prior_delays_ns, const Topology& topo) {
    if (!(elapsed_with_prior_delays_ns > 0.0))
        throw SimError("bandwidth: elapsed time must be positive");
    double worst = 0.0;
    for (const auto& [id, bytes] : node_bytes) {
        const TopoNode& n = topo.node(id); // throws on unknown id
        double required = static_cast<double>(bytes) / n.bandwidth_bytes_per_ns;
        worst = std::max(worst, required - elapsed_with_prior_delays_ns);
    }
    return std::max(0.0, worst);
}

// ---------------------------------------------------------------------------
// Epoch engine: shared core of run_replay and run_live. Buffers one epoch at
// a time, applies allocation events as they arrive, and finalizes each window
// with the latency → congestion → bandwidth pipeline.
// ---------------------------------------------------------------------------

struct SimConfig {
    std::uint64_t epoch_len_ns = 10'000'000; // 10 ms
    bool scale_with_counters = true;
};

struct RunResult {
    std::vector<EpochResult> epochs;
    SimClock clock;
    DelayBreakdown total_delays;
    PoolCounts total_counts;
    bool truncated = false;
    bool operator==(const RunResult&) const = default;
};

class EpochEngine {
public:
    using DelayHook = std::function<void(double)>;

    EpochEngine(const Topology& topo, const PlacementPolicy& policy, const SimConfig& cfg,
                DelayHook on_epoch_delay = {})
        : topo_(topo), policy_(policy), cfg_(cfg), on_epoch_delay_(std::move(on_epoch_delay)) {
        if (cfg_.epoch_len_ns == 0)
            throw ConfigError("epoch_len_ns must be >= 1");
        validate_policy(policy_, topo_);
    }

    void feed(const TraceEvent& ev) {
        if (saw_event_ && ev.ts_ns < last_ts_)
            throw SimError("trace events out of timestamp order");
        last_ts_ = ev.ts_ns;
        saw_event_ = true;

        // Boundary events belong to the later epoch; close windows up to it.
        while (ev.ts_ns >= window_end())
            close_epoch(window_end());

        if (std::holds_alternative<AllocEvent>(ev.body) ||
            std::holds_alternative<FreeEvent>(ev.body)) {
            map_.apply(policy_, topo_, ev);
        } else if (const auto* a = std::get_if<AccessEvent>(&ev.body)) {
            const NodeId& pool = map_.lookup(a->addr);
            OpCounts& c = raw_counts_[pool];
            if (a->is_write)
                ++c.writes;
            else
                ++c.reads;
            c.bytes += a->size_bytes;
            epoch_accesses_.push_back({ev.ts_ns, pool});
            ++diag_.samples;
        } else if (const auto* ctr = std::get_if<CounterEvent>(&ev.body)) {
            diag_.llc_misses += ctr->llc_misses;
            diag_.l2_stalls += ctr->l2_stall_cycles;
            counters_seen_ = true;
        }
    }

    /// Finalizes through the end of the stream: the native span covers the
    /// instant of the last event.
    RunResult finish() {
        if (saw_event_)
            close_epoch(std::min(window_end(), last_ts_ + 1));
        return take_result(last_ts_ + (saw_event_ ? 1 : 0), false);
    }

    /// Finalizes after a producer failure: keeps completed epochs only.
    RunResult finish_truncated() {
        std::uint64_t native = epoch_index_ * cfg_.epoch_len_ns;
        return take_result(native, true);
    }

    const AllocationMap& allocation_map() const { return map_; }

private:
    std::uint64_t window_start() const { return epoch_index_ * cfg_.epoch_len_ns; }
    std::uint64_t window_end() const { return (epoch_index_ + 1) * cfg_.epoch_len_ns; }

    void close_epoch(std::uint64_t end_ns) {
        EpochResult epoch;
        epoch.window = {epoch_index_, window_start(), end_ns};
        epoch.diagnostics = diag_;

        epoch.counts = (cfg_.scale_with_counters && counters_seen_)
                           ? scale_counts(raw_counts_, diag_.llc_misses)
                           : raw_counts_;

        epoch.delays.latency_ns = latency_delay(epoch.counts, topo_);
        epoch.delays.congestion_ns = congestion_delay(epoch_accesses_, topo_).total_ns;

        // Every hop of a remote pool's path, the pool itself included, carries
        // the pool's bytes; the report keeps the switch/root subset.
        std::map<NodeId, std::uint64_t> node_bytes;
        for (const auto& [pool, c] : epoch.counts) {
            if (pool == kLocalPoolId || c.bytes == 0)
                continue;
            for (const auto& hop : topo_.resolve_path(pool).hops)
                node_bytes[hop] += c.bytes;
        }
        double elapsed = static_cast<double>(end_ns - window_start()) +
                         epoch.delays.latency_ns + epoch.delays.congestion_ns;
        epoch.delays.bandwidth_ns = bandwidth_delay(node_bytes, elapsed, topo_);
        for (const auto& [id, bytes] : node_bytes)
            if (topo_.node(id).kind != NodeKind::kPool)
                epoch.switch_bytes.emplace(id, bytes);

        total_delays_.latency_ns += epoch.delays.latency_ns;
        total_delays_.congestion_ns += epoch.delays.congestion_ns;
        total_delays_.bandwidth_ns += epoch.delays.bandwidth_ns;
        delay_acc_ += epoch.delays.total_ns();
        for (const auto& [pool, c] : epoch.counts) {
            OpCounts& t = total_counts_[pool];
            t.reads += c.reads;
            t.writes += c.writes;
            t.bytes += c.bytes;
        }

        double epoch_delay = epoch.delays.total_ns();
        epochs_.push_back(std::move(epoch));
        raw_counts_.clear();
        epoch_accesses_.clear();
        diag_ = {};
        counters_seen_ = false;
        ++epoch_index_;

        if (on_epoch_delay_)
            on_epoch_delay_(epoch_delay);
    }

    RunResult take_result(std::uint64_t native_ns, bool truncated) {
        RunResult result;
        result.epochs = std::move(epochs_);
        result.clock.native_ns = native_ns;
        result.clock.simulated_ns = static_cast<double>(native_ns) + delay_acc_;
        result.total_delays = total_delays_;
        result.total_counts = std::move(total_counts_);
        result.truncated = truncated;
        return result;
    }

    const Topology& topo_;
    PlacementPolicy policy_;
    SimConfig cfg_;
    DelayHook on_epoch_delay_;

    AllocationMap map_;
    std::vector<EpochResult> epochs_;
    std::uint64_t epoch_index_ = 0;
    std::uint64_t last_ts_ = 0;
    bool saw_event_ = false;

    PoolCounts raw_counts_;
    std::vector<PoolAccessRef> epoch_accesses_;
    EpochDiagnostics diag_;
    bool counters_seen_ = false;

    DelayBreakdown total_delays_;
    double delay_acc_ = 0.0;
    PoolCounts total_counts_;
};

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

/// Replays a recorded trace. Deterministic: identical inputs produce
/// identical results, field for field.
inline RunResult run_replay(const Trace& trace, const Topology& topo,
                            const PlacementPolicy& policy, const SimConfig& cfg) {
    EpochEngine engine(topo, policy, cfg);
    for (const auto& ev : trace.events)
        engine.feed(ev);
    return engine.finish();
}

/// Drives the same epoch math from a live collector. After each epoch the
/// collector is asked to stall the traced program for that epoch's delay (a
/// no-op for replay-style collectors). A collector failure finalizes the
/// report with the epochs completed so far and sets the truncated flag.
inline RunResult run_live(Collector& collector, const Topology& topo,
                          const PlacementPolicy& policy, const SimConfig& cfg) {
    EpochEngine engine(topo, policy, cfg,
                       [&collector](double delay_ns) { collector.stall_ns(delay_ns); });
    while (true) {
        std::vector<TraceEvent> batch;
        try {
            batch = collector.poll();
        } catch (const std::exception&) {
            return engine.finish_truncated();
        }
        if (batch.empty())
            break;
        for (const auto& ev : batch)
            engine.feed(ev);
    }
    std::vector<TraceEvent> rest;
    try {
        rest = collector.stop();
    } catch (const std::exception&) {
        return engine.finish_truncated();
    }
    for (const auto& ev : rest)
        engine.feed(ev);
    return engine.finish();
}

} // namespace cxlsim
