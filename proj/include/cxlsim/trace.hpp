#pragma once

#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cxlsim/error.hpp"

namespace cxlsim {

enum class AllocMechanism { kMmap, kBrk, kSbrk, kOther };

inline const char* to_string(AllocMechanism m) {
    switch (m) {
    case AllocMechanism::kMmap: return "mmap";
    case AllocMechanism::kBrk: return "brk";
    case AllocMechanism::kSbrk: return "sbrk";
    case AllocMechanism::kOther: return "other";
    }
    return "?";
}

struct AllocEvent {
    std::uint64_t addr = 0;
    std::uint64_t size_bytes = 0;
    AllocMechanism mechanism = AllocMechanism::kMmap;
    bool operator==(const AllocEvent&) const = default;
};

struct FreeEvent {
    std::uint64_t addr = 0;
    std::uint64_t size_bytes = 0;
    bool operator==(const FreeEvent&) const = default;
};

// One sampled memory access. The sample stands for sample_period real
// operations (see Trace); size defaults to one cache line.
struct AccessEvent {
    std::uint64_t addr = 0;
    bool is_write = false;
    std::uint32_t size_bytes = 64;
    bool operator==(const AccessEvent&) const = default;
};

// Aggregate performance-counter readings covering the interval since the
// previous CounterEvent (or trace start).
struct CounterEvent {
    std::uint64_t llc_misses = 0;
    std::uint64_t l2_stall_cycles = 0;
    std::uint64_t instructions = 0;
    bool operator==(const CounterEvent&) const = default;
};

struct TraceEvent {
    std::uint64_t ts_ns = 0;
    std::variant<AllocEvent, FreeEvent, AccessEvent, CounterEvent> body;
    bool operator==(const TraceEvent&) const = default;
};

/// Timestamp-ordered event stream plus its sampling metadata. One AccessEvent
/// represents sample_period actual memory operations.
struct Trace {
    std::vector<TraceEvent> events;
    std::uint32_t sample_period = 1;
    std::uint32_t cacheline_bytes = 64;

    bool operator==(const Trace&) const = default;

    // Half-open native duration [0, span_ns): the instant of the last event
    // is included.
    std::uint64_t span_ns() const { return events.empty() ? 0 : events.back().ts_ns + 1; }
};

namespace detail {

inline bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline std::uint64_t u64_field(const nlohmann::json& obj, const char* key, std::size_t line) {
    if (!obj.contains(key))
        throw ParseError("trace line " + std::to_string(line) + ": missing '" + key + "'");
    const auto& v = obj[key];
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.template get<std::int64_t>() < 0))
        throw ParseError("trace line " + std::to_string(line) + ": '" + key +
                         "' must be a non-negative integer");
    return v.template get<std::uint64_t>();
}

} // namespace detail

// ---------------------------------------------------------------------------
// JSONL trace format
//
// Line 1 header:  {"v":1,"sample_period":N,"cacheline_bytes":N}
// Event lines:    {"ts":N,"ev":"alloc","addr":N,"size":N,"mech":"mmap"}
//                 {"ts":N,"ev":"free","addr":N,"size":N}
//                 {"ts":N,"ev":"access","addr":N,"w":true,"size":N}
//                 {"ts":N,"ev":"ctr","llc_miss":N,"l2_stall":N,"instr":N}
// ---------------------------------------------------------------------------

inline Trace read_trace(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;

    auto parse_line = [&](const std::string& text) {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("trace line " + std::to_string(line_no) + ": malformed: " + e.what());
        }
    };

    if (!std::getline(in, line))
        throw ParseError("trace: missing header line");
    line_no = 1;
    nlohmann::json header = parse_line(line);
    if (!header.is_object() || !header.contains("v"))
        throw ParseError("trace: missing header line");
    if (header["v"] != 1)
        throw ParseError("trace: unsupported format version");

    Trace trace;
    trace.sample_period =
        static_cast<std::uint32_t>(detail::u64_field(header, "sample_period", 1));
    trace.cacheline_bytes =
        static_cast<std::uint32_t>(detail::u64_field(header, "cacheline_bytes", 1));
    if (trace.sample_period < 1)
        throw ValidationError("trace: sample_period must be >= 1");
    if (!detail::is_power_of_two(trace.cacheline_bytes))
        throw ValidationError("trace: cacheline_bytes must be a power of two");

    std::uint64_t prev_ts = 0;
    bool have_prev = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        nlohmann::json j = parse_line(line);
        if (!j.is_object())
            throw ParseError("trace line " + std::to_string(line_no) + ": not an object");

        TraceEvent ev;
        ev.ts_ns = detail::u64_field(j, "ts", line_no);
        if (have_prev && ev.ts_ns < prev_ts)
            throw ValidationError("timestamp regression at line " + std::to_string(line_no));
        prev_ts = ev.ts_ns;
        have_prev = true;

        std::string kind = j.value("ev", std::string());
        if (kind == "alloc") {
            AllocEvent a;
            a.addr = detail::u64_field(j, "addr", line_no);
            a.size_bytes = detail::u64_field(j, "size", line_no);
            if (a.size_bytes == 0)
                throw ValidationError("trace line " + std::to_string(line_no) +
                                      ": alloc size must be positive");
            std::string mech = j.value("mech", std::string());
            if (mech == "mmap")
                a.mechanism = AllocMechanism::kMmap;
            else if (mech == "brk")
                a.mechanism = AllocMechanism::kBrk;
            else if (mech == "sbrk")
                a.mechanism = AllocMechanism::kSbrk;
            else if (mech == "other")
                a.mechanism = AllocMechanism::kOther;
            else
                throw ParseError("trace line " + std::to_string(line_no) +
                                 ": unknown mechanism '" + mech + "'");
            ev.body = a;
        } else if (kind == "free") {
            FreeEvent f;
            f.addr = detail::u64_field(j, "addr", line_no);
            f.size_bytes = detail::u64_field(j, "size", line_no);
            if (f.size_bytes == 0)
                throw ValidationError("trace line " + std::to_string(line_no) +
                                      ": free size must be positive");
            ev.body = f;
        } else if (kind == "access") {
            AccessEvent a;
            a.addr = detail::u64_field(j, "addr", line_no);
            if (!j.contains("w") || !j["w"].is_boolean())
                throw ParseError("trace line " + std::to_string(line_no) +
                                 ": access needs boolean 'w'");
            a.is_write = j["w"].get<bool>();
            a.size_bytes = j.contains("size")
                               ? static_cast<std::uint32_t>(detail::u64_field(j, "size", line_no))
                               : trace.cacheline_bytes;
            if (a.size_bytes == 0)
                throw ValidationError("trace line " + std::to_string(line_no) +
                                      ": access size must be positive");
            ev.body = a;
        } else if (kind == "ctr") {
            CounterEvent c;
            c.llc_misses = detail::u64_field(j, "llc_miss", line_no);
            c.l2_stall_cycles = detail::u64_field(j, "l2_stall", line_no);
            c.instructions = detail::u64_field(j, "instr", line_no);
            ev.body = c;
        } else {
            throw ParseError("trace line " + std::to_string(line_no) + ": unknown event kind '" +
                             kind + "'");
        }
        trace.events.push_back(std::move(ev));
    }
    return trace;
}

inline void write_trace(const Trace& trace, std::ostream& out) {
    nlohmann::ordered_json header;
    header["v"] = 1;
    header["sample_period"] = trace.sample_period;
    header["cacheline_bytes"] = trace.cacheline_bytes;
    out << header.dump() << '\n';

    for (const auto& ev : trace.events) {
        nlohmann::ordered_json j;
        j["ts"] = ev.ts_ns;
        if (const auto* a = std::get_if<AllocEvent>(&ev.body)) {
            j["ev"] = "alloc";
            j["addr"] = a->addr;
            j["size"] = a->size_bytes;
            j["mech"] = to_string(a->mechanism);
        } else if (const auto* f = std::get_if<FreeEvent>(&ev.body)) {
            j["ev"] = "free";
            j["addr"] = f->addr;
            j["size"] = f->size_bytes;
        } else if (const auto* ac = std::get_if<AccessEvent>(&ev.body)) {
            j["ev"] = "access";
            j["addr"] = ac->addr;
            j["w"] = ac->is_write;
            j["size"] = ac->size_bytes;
        } else if (const auto* c = std::get_if<CounterEvent>(&ev.body)) {
            j["ev"] = "ctr";
            j["llc_miss"] = c->llc_misses;
            j["l2_stall"] = c->l2_stall_cycles;
            j["instr"] = c->instructions;
        }
        out << j.dump() << '\n';
    }
    if (!out)
        throw IoError("trace: write failed");
}

// ---------------------------------------------------------------------------
// Synthetic traces
// ---------------------------------------------------------------------------

enum class SynthPattern { kSequential, kUniformRandom, kHotspot };

inline const char* to_string(SynthPattern p) {
    switch (p) {
    case SynthPattern::kSequential: return "sequential";
    case SynthPattern::kUniformRandom: return "uniform_random";
    case SynthPattern::kHotspot: return "hotspot";
    }
    return "?";
}

struct SynthSpec {
    SynthPattern pattern = SynthPattern::kSequential;
    std::uint64_t ops = 0;
    std::uint64_t working_set_bytes = 0;
    std::uint64_t inter_arrival_ns = 0;
    double write_fraction = 0.0;
    std::uint64_t seed = 0;
    std::uint32_t cacheline_bytes = 64;
    std::uint32_t sample_period = 1;
};

// Base address of the synthetic working set.
inline constexpr std::uint64_t kSynthBaseAddr = 0x10000000ull;

// Hotspot pattern: this share of accesses lands in the first tenth of the
// working set.
inline constexpr double kHotspotFraction = 0.9;

/// Deterministic function of its spec: one Alloc of the working set at ts 0,
/// then `ops` accesses spaced inter_arrival_ns apart. Addresses are cache-line
/// aligned and stay inside the allocation; the sequential pattern strides one
/// line per access and wraps.
inline Trace synth_trace(const SynthSpec& spec) {
    if (spec.ops == 0)
        throw ConfigError("synth: ops must be positive");
    if (!detail::is_power_of_two(spec.cacheline_bytes))
        throw ConfigError("synth: cacheline_bytes must be a power of two");
    if (spec.working_set_bytes < spec.cacheline_bytes)
        throw ConfigError("synth: working set smaller than one cache line");
    if (spec.inter_arrival_ns == 0)
        throw ConfigError("synth: inter_arrival_ns must be positive");
    if (!(spec.write_fraction >= 0.0 && spec.write_fraction <= 1.0))
        throw ConfigError("synth: write_fraction must be in [0,1]");
    if (spec.sample_period < 1)
        throw ConfigError("synth: sample_period must be >= 1");
    if (spec.inter_arrival_ns > (std::numeric_limits<std::uint64_t>::max() - 1) / spec.ops)
        throw ConfigError("synth: trace span overflows");

    Trace trace;
    trace.sample_period = spec.sample_period;
    trace.cacheline_bytes = spec.cacheline_bytes;
    trace.events.reserve(spec.ops + 1);
    trace.events.push_back(
        {0, AllocEvent{kSynthBaseAddr, spec.working_set_bytes, AllocMechanism::kMmap}});

    const std::uint64_t lines = spec.working_set_bytes / spec.cacheline_bytes;
    const std::uint64_t hot_lines = std::max<std::uint64_t>(1, lines / 10);

    // mt19937_64 output is bit-exact across standard libraries; the mappings
    // below avoid the implementation-defined std distributions so that equal
    // seeds give equal traces everywhere.
    std::mt19937_64 rng(spec.seed);
    auto unit = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    for (std::uint64_t i = 1; i <= spec.ops; ++i) {
        std::uint64_t line = 0;
        switch (spec.pattern) {
        case SynthPattern::kSequential:
            line = (i - 1) % lines;
            break;
        case SynthPattern::kUniformRandom:
            line = rng() % lines;
            break;
        case SynthPattern::kHotspot:
            line = (unit() < kHotspotFraction) ? rng() % hot_lines : rng() % lines;
            break;
        }
        AccessEvent access;
        access.addr = kSynthBaseAddr + line * spec.cacheline_bytes;
        access.is_write = unit() < spec.write_fraction;
        access.size_bytes = spec.cacheline_bytes;
        trace.events.push_back({i * spec.inter_arrival_ns, access});
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Collector: the slot a live host probe plugs into. Batches from successive
// poll() calls are jointly timestamp-ordered; an empty poll() batch signals
// that the stream is exhausted for now and stop() returns the remainder.
// ---------------------------------------------------------------------------

class Collector {
public:
    virtual ~Collector() = default;

    virtual void start() = 0;
    virtual std::vector<TraceEvent> poll() = 0;
    virtual std::vector<TraceEvent> stop() = 0;

    // Delay-injection hook: called by the epoch engine after each epoch with
    // the delay to impose on the traced program. Replay-style collectors
    // ignore it.
    virtual void stall_ns(double /*delay_ns*/) {}

    virtual std::uint32_t sample_period() const = 0;
    virtual std::uint32_t cacheline_bytes() const = 0;
};

/// Deterministic collector that replays a prerecorded trace in fixed-size
/// batches. Test double for a live probe.
class MockCollector final : public Collector {
public:
    MockCollector(Trace trace, std::size_t batch_size)
        : trace_(std::move(trace)), batch_size_(batch_size) {
        if (batch_size_ < 1)
            throw ConfigError("mock collector: batch_size must be >= 1");
    }

    void start() override {
        if (state_ != State::kIdle)
            throw std::logic_error("collector already started");
        state_ = State::kRunning;
    }

    std::vector<TraceEvent> poll() override {
        if (state_ == State::kStopped)
            throw std::logic_error("poll after stop");
        if (state_ != State::kRunning)
            throw std::logic_error("collector not started");
        std::size_t n = std::min(batch_size_, trace_.events.size() - pos_);
        std::vector<TraceEvent> batch(trace_.events.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      trace_.events.begin() +
                                          static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return batch;
    }

    std::vector<TraceEvent> stop() override {
        if (state_ == State::kStopped)
            throw std::logic_error("stop after stop");
        if (state_ != State::kRunning)
            throw std::logic_error("collector not started");
        state_ = State::kStopped;
        std::vector<TraceEvent> rest(trace_.events.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     trace_.events.end());
        pos_ = trace_.events.size();
        return rest;
    }

    std::uint32_t sample_period() const override { return trace_.sample_period; }
    std::uint32_t cacheline_bytes() const override { return trace_.cacheline_bytes; }

private:
    enum class State { kIdle, kRunning, kStopped };
    Trace trace_;
    std::size_t batch_size_;
    std::size_t pos_ = 0;
    State state_ = State::kIdle;
};

inline MockCollector mock_collector(Trace trace, std::size_t batch_size) {
    return MockCollector(std::move(trace), batch_size);
}

} // namespace cxlsim
