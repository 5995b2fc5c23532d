#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cxlsim/error.hpp"
#include "cxlsim/topology.hpp"
#include "cxlsim/trace.hpp"

namespace cxlsim {

// ---------------------------------------------------------------------------
// Placement policies: the rule that decides which pool (or local DRAM) backs
// each traced allocation. The policy is the experiment variable.
// ---------------------------------------------------------------------------

struct AllLocalPolicy {
    bool operator==(const AllLocalPolicy&) const = default;
};

/// Whole allocations assigned to pools in cyclic order, one step per Alloc.
struct RoundRobinPolicy {
    std::vector<NodeId> pools;
    bool operator==(const RoundRobinPolicy&) const = default;
};

/// Allocations split at absolute page boundaries; the page starting at
/// address a maps to pools[(a / page_bytes) % pools.size()].
struct PageInterleavePolicy {
    std::vector<NodeId> pools;
    std::uint64_t page_bytes = 4096;
    bool operator==(const PageInterleavePolicy&) const = default;
};

struct ExplicitRule {
    std::uint64_t min_size_bytes = 0;
    NodeId pool;
    bool operator==(const ExplicitRule&) const = default;
};

/// Size-threshold offload: an allocation goes to the pool of the rule with
/// the largest min_size_bytes not exceeding its size; below every threshold
/// it stays local. Rule thresholds must be strictly increasing.
struct ExplicitRulesPolicy {
    std::vector<ExplicitRule> rules;
    bool operator==(const ExplicitRulesPolicy&) const = default;
};

/// First pool in order with enough remaining capacity takes the whole
/// allocation; when none fits, falls back to local DRAM unless the fallback
/// is disabled, in which case exhaustion is an error.
struct CapacityFirstFitPolicy {
    std::vector<NodeId> pools;
    bool local_fallback = true;
    bool operator==(const CapacityFirstFitPolicy&) const = default;
};

using PlacementPolicy = std::variant<AllLocalPolicy, RoundRobinPolicy, PageInterleavePolicy,
                                     ExplicitRulesPolicy, CapacityFirstFitPolicy>;

inline PlacementPolicy parse_policy(const nlohmann::json& j) {
    if (!j.is_object())
        throw ConfigError("policy: must be a JSON object");
    std::string kind = j.value("policy", std::string());

    auto pool_list = [&](const nlohmann::json& obj) {
        if (!obj.contains("pools") || !obj["pools"].is_array() || obj["pools"].empty())
            throw ConfigError("policy '" + kind + "': needs a non-empty 'pools' array");
        std::vector<NodeId> pools;
        for (const auto& p : obj["pools"]) {
            if (!p.is_string())
                throw ConfigError("policy '" + kind + "': pool ids must be strings");
            pools.push_back(p.get<std::string>());
        }
        return pools;
    };

    if (kind == "all_local") {
        detail::require_keys(j, {"policy"}, "policy 'all_local'");
        return AllLocalPolicy{};
    }
    if (kind == "round_robin") {
        detail::require_keys(j, {"policy", "pools"}, "policy 'round_robin'");
        return RoundRobinPolicy{pool_list(j)};
    }
    if (kind == "page_interleave") {
        detail::require_keys(j, {"policy", "pools", "page_bytes"}, "policy 'page_interleave'");
        PageInterleavePolicy p;
        p.pools = pool_list(j);
        if (!j.contains("page_bytes") || !j["page_bytes"].is_number_unsigned())
            throw ConfigError("policy 'page_interleave': needs integer 'page_bytes'");
        p.page_bytes = j["page_bytes"].get<std::uint64_t>();
        if (!detail::is_power_of_two(p.page_bytes))
            throw ConfigError("policy 'page_interleave': page_bytes must be a power of two");
        return p;
    }
    if (kind == "explicit") {
        detail::require_keys(j, {"policy", "rules"}, "policy 'explicit'");
        ExplicitRulesPolicy p;
        if (!j.contains("rules") || !j["rules"].is_array() || j["rules"].empty())
            throw ConfigError("policy 'explicit': needs a non-empty 'rules' array");
        for (const auto& r : j["rules"]) {
            if (!r.is_object() || !r.contains("min_size_bytes") || !r.contains("pool"))
                throw ConfigError("policy 'explicit': each rule needs min_size_bytes and pool");
            p.rules.push_back(
                {r["min_size_bytes"].get<std::uint64_t>(), r["pool"].get<std::string>()});
        }
        return p;
    }
    if (kind == "capacity_first_fit") {
        detail::require_keys(j, {"policy", "pools", "local_fallback"},
                             "policy 'capacity_first_fit'");
        CapacityFirstFitPolicy p;
        p.pools = pool_list(j);
        p.local_fallback = j.value("local_fallback", true);
        return p;
    }
    throw ConfigError("unknown policy '" + kind + "'");
}

inline nlohmann::json policy_to_json(const PlacementPolicy& policy) {
    nlohmann::json j;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, AllLocalPolicy>) {
                j["policy"] = "all_local";
            } else if constexpr (std::is_same_v<T, RoundRobinPolicy>) {
                j["policy"] = "round_robin";
                j["pools"] = p.pools;
            } else if constexpr (std::is_same_v<T, PageInterleavePolicy>) {
                j["policy"] = "page_interleave";
                j["pools"] = p.pools;
                j["page_bytes"] = p.page_bytes;
            } else if constexpr (std::is_same_v<T, ExplicitRulesPolicy>) {
                j["policy"] = "explicit";
                j["rules"] = nlohmann::json::array();
                for (const auto& r : p.rules)
                    j["rules"].push_back(
                        {{"min_size_bytes", r.min_size_bytes}, {"pool", r.pool}});
            } else if constexpr (std::is_same_v<T, CapacityFirstFitPolicy>) {
                j["policy"] = "capacity_first_fit";
                j["pools"] = p.pools;
                j["local_fallback"] = p.local_fallback;
            }
        },
        policy);
    return j;
}

/// Checks that every referenced pool exists in the topology with kind=pool
/// and that explicit-rule thresholds are strictly increasing.
inline void validate_policy(const PlacementPolicy& policy, const Topology& topo) {
    auto check_pool = [&](const NodeId& id) {
        if (!topo.contains(id))
            throw ConfigError("policy references unknown pool '" + id + "'");
        if (topo.node(id).kind != NodeKind::kPool)
            throw ConfigError("policy references node '" + id + "' which is not a pool");
    };
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RoundRobinPolicy> ||
                          std::is_same_v<T, PageInterleavePolicy> ||
                          std::is_same_v<T, CapacityFirstFitPolicy>) {
                for (const auto& id : p.pools)
                    check_pool(id);
            } else if constexpr (std::is_same_v<T, ExplicitRulesPolicy>) {
                std::uint64_t prev = 0;
                bool first = true;
                for (const auto& r : p.rules) {
                    check_pool(r.pool);
                    if (!first && r.min_size_bytes <= prev)
                        throw ConfigError(
                            "policy 'explicit': rule thresholds must be strictly increasing");
                    prev = r.min_size_bytes;
                    first = false;
                }
            }
        },
        policy);
}

// ---------------------------------------------------------------------------
// Per-pool operation tallies. The LOCAL key counts host-DRAM traffic.
// ---------------------------------------------------------------------------

struct OpCounts {
    std::uint64_t reads = 0;
    std::uint64_t writes = 0;
    std::uint64_t bytes = 0;
    bool operator==(const OpCounts&) const = default;
    std::uint64_t ops() const { return reads + writes; }
};

using PoolCounts = std::map<NodeId, OpCounts>;

// ---------------------------------------------------------------------------
// AllocationMap: live virtual-address intervals tagged with the pool that
// backs them, maintained from Alloc/Free events. Mutated only by the replay
// or ingest thread; lookups are read-only.
// ---------------------------------------------------------------------------

class AllocationMap {
public:
    /// Applies an Alloc or Free event under the given policy. Alloc inserts a
    /// tagged interval (throws SimError when it overlaps a live one); Free
    /// removes the covered parts of live intervals, splitting partially freed
    /// ones. Freeing bytes that were never mapped is tolerated and counted.
    void apply(const PlacementPolicy& policy, const Topology& topo, const TraceEvent& ev);

    /// Pool backing addr, or LOCAL when no live interval contains it.
    const NodeId& lookup(std::uint64_t addr) const {
        auto it = intervals_.upper_bound(addr);
        if (it != intervals_.begin()) {
            --it;
            if (addr < it->second.end)
                return it->second.pool_at(addr);
        }
        return local_id_;
    }

    std::uint64_t used_bytes(const NodeId& pool) const {
        auto it = used_.find(pool);
        return it == used_.end() ? 0 : it->second;
    }
    const std::map<NodeId, std::uint64_t>& used_bytes_by_pool() const { return used_; }

    std::uint64_t unmatched_frees() const { return unmatched_frees_; }
    std::size_t live_interval_count() const { return intervals_.size(); }

    /// Live intervals as (start, end, pool-of-start) triples, for inspection.
    std::vector<std::tuple<std::uint64_t, std::uint64_t, NodeId>> live_intervals() const {
        std::vector<std::tuple<std::uint64_t, std::uint64_t, NodeId>> out;
        for (const auto& [start, iv] : intervals_)
            out.emplace_back(start, iv.end, iv.pool_at(start));
        return out;
    }

private:
    // One live interval [start, end). A plain interval is wholly backed by
    // `pool`; an interleaved one computes the backing pool per page from the
    // absolute address, so splitting it on partial free keeps the mapping.
    struct Interval {
        std::uint64_t end = 0;
        NodeId pool;
        bool interleaved = false;
        std::vector<NodeId> ipools;
        std::uint64_t page_bytes = 0;

        const NodeId& pool_at(std::uint64_t addr) const {
            if (!interleaved)
                return pool;
            return ipools[(addr / page_bytes) % ipools.size()];
        }
    };

    void account(const Interval& iv, std::uint64_t start, std::uint64_t end, std::int64_t sign);
    void insert_interval(std::uint64_t start, Interval iv);
    NodeId choose_pool(const PlacementPolicy& policy, const Topology& topo,
                       const AllocEvent& alloc, bool& interleave_out);

    std::map<std::uint64_t, Interval> intervals_; // keyed by interval start
    std::map<NodeId, std::uint64_t> used_;
    std::uint64_t rr_cursor_ = 0;
    std::uint64_t unmatched_frees_ = 0;
    NodeId local_id_ = kLocalPoolId;
};

inline void AllocationMap::account(const Interval& iv, std::uint64_t start, std::uint64_t end,
                                   std::int64_t sign) {
    auto add = [&](const NodeId& pool, std::uint64_t bytes) {
        if (sign > 0)
            used_[pool] += bytes;
        else
            used_[pool] -= bytes;
    };
    if (!iv.interleaved) {
        add(iv.pool, end - start);
        return;
    }
    std::uint64_t cur = start;
    while (cur < end) {
        std::uint64_t page_end = (cur / iv.page_bytes + 1) * iv.page_bytes;
        std::uint64_t chunk_end = std::min(page_end, end);
        add(iv.ipools[(cur / iv.page_bytes) % iv.ipools.size()], chunk_end - cur);
        cur = chunk_end;
    }
}

inline void AllocationMap::insert_interval(std::uint64_t start, Interval iv) {
    account(iv, start, iv.end, +1);
    intervals_.emplace(start, std::move(iv));
}

inline NodeId AllocationMap::choose_pool(const PlacementPolicy& policy, const Topology& topo,
                                         const AllocEvent& alloc, bool& interleave_out) {
    interleave_out = false;
    return std::visit(
        [&](const auto& p) -> NodeId {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, AllLocalPolicy>) {
                return kLocalPoolId;
            } else if constexpr (std::is_same_v<T, RoundRobinPolicy>) {
                return p.pools[rr_cursor_++ % p.pools.size()];
            } else if constexpr (std::is_same_v<T, PageInterleavePolicy>) {
                interleave_out = true;
                return NodeId(); // per-page, not a single pool
            } else if constexpr (std::is_same_v<T, ExplicitRulesPolicy>) {
                // Thresholds are strictly increasing: scan from the largest.
                for (auto it = p.rules.rbegin(); it != p.rules.rend(); ++it)
                    if (it->min_size_bytes <= alloc.size_bytes)
                        return it->pool;
                return kLocalPoolId;
            } else {
                static_assert(std::is_same_v<T, CapacityFirstFitPolicy>);
                for (const auto& id : p.pools) {
                    std::uint64_t cap = topo.node(id).capacity_bytes;
                    if (cap == 0 ||
                        (used_bytes(id) <= cap && alloc.size_bytes <= cap - used_bytes(id)))
                        return id;
                }
                if (!p.local_fallback)
                    throw SimError("capacity_first_fit: pools exhausted for allocation of " +
                                   std::to_string(alloc.size_bytes) + " bytes");
                return kLocalPoolId;
            }
        },
        policy);
}

inline void AllocationMap::apply(const PlacementPolicy& policy, const Topology& topo,
                                 const TraceEvent& ev) {
    if (const auto* alloc = std::get_if<AllocEvent>(&ev.body)) {
        if (alloc->size_bytes == 0)
            throw SimError("alloc of zero bytes");
        std::uint64_t start = alloc->addr;
        std::uint64_t end = alloc->addr + alloc->size_bytes;

        auto it = intervals_.upper_bound(start);
        if (it != intervals_.begin()) {
            auto prev = std::prev(it);
            if (prev->second.end > start)
                throw SimError("overlapping allocation at 0x" + detail::hex64(start));
        }
        if (it != intervals_.end() && it->first < end)
            throw SimError("overlapping allocation at 0x" + detail::hex64(start));

        Interval iv;
        iv.end = end;
        bool interleave = false;
        NodeId pool = choose_pool(policy, topo, *alloc, interleave);
        if (interleave) {
            const auto& p = std::get<PageInterleavePolicy>(policy);
            iv.interleaved = true;
            iv.ipools = p.pools;
            iv.page_bytes = p.page_bytes;
        } else {
            iv.pool = std::move(pool);
        }
        insert_interval(start, std::move(iv));
        return;
    }

    if (const auto* free_ev = std::get_if<FreeEvent>(&ev.body)) {
        std::uint64_t start = free_ev->addr;
        std::uint64_t end = free_ev->addr + free_ev->size_bytes;
        std::uint64_t covered = 0;

        auto it = intervals_.upper_bound(start);
        if (it != intervals_.begin() && std::prev(it)->second.end > start)
            --it;
        while (it != intervals_.end() && it->first < end) {
            std::uint64_t iv_start = it->first;
            Interval iv = it->second;
            it = intervals_.erase(it);
            account(iv, iv_start, iv.end, -1);

            std::uint64_t cut_start = std::max(iv_start, start);
            std::uint64_t cut_end = std::min(iv.end, end);
            covered += cut_end - cut_start;

            if (iv_start < cut_start) { // keep the left remainder
                Interval left = iv;
                left.end = cut_start;
                insert_interval(iv_start, std::move(left));
            }
            if (cut_end < iv.end) { // keep the right remainder
                Interval right = iv;
                insert_interval(cut_end, std::move(right));
            }
        }
        if (covered < free_ev->size_bytes)
            ++unmatched_frees_; // untracked range; likely allocated before attach
        return;
    }

    throw SimError("apply: event is neither Alloc nor Free");
}

// ---------------------------------------------------------------------------
// Classification and count scaling
// ---------------------------------------------------------------------------

/// Tallies one epoch's sampled accesses into per-pool counts against a fixed
/// allocation map.
inline PoolCounts classify_epoch(const AllocationMap& map,
                                 std::span<const TraceEvent> accesses) {
    PoolCounts counts;
    for (const auto& ev : accesses) {
        const auto* a = std::get_if<AccessEvent>(&ev.body);
        if (!a)
            continue;
        OpCounts& c = counts[map.lookup(a->addr)];
        if (a->is_write)
            ++c.writes;
        else
            ++c.reads;
        c.bytes += a->size_bytes;
    }
    return counts;
}

/// Reconciles sampled counts with the epoch's aggregate LLC-miss counter:
/// every field is scaled by total_llc_misses / total-sampled-ops, rounded
/// half-up, preserving per-pool proportions. With no samples or no counter
/// reading the input is returned unchanged.
inline PoolCounts scale_counts(const PoolCounts& sampled, std::uint64_t total_llc_misses) {
    std::uint64_t total_ops = 0;
    for (const auto& [pool, c] : sampled)
        total_ops += c.ops();
    if (total_ops == 0 || total_llc_misses == 0)
        return sampled;

    auto scaled_value = [&](std::uint64_t v) -> std::uint64_t {
        using u128 = unsigned __int128;
        u128 num = static_cast<u128>(v) * total_llc_misses * 2 + total_ops;
        return static_cast<std::uint64_t>(num / (static_cast<u128>(total_ops) * 2));
    };

    PoolCounts out;
    for (const auto& [pool, c] : sampled) {
        OpCounts s;
        s.reads = scaled_value(c.reads);
        s.writes = scaled_value(c.writes);
        s.bytes = scaled_value(c.bytes);
        out[pool] = s;
    }
    return out;
}

} // namespace cxlsim
