#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sweepmill/errors.hpp"
#include "sweepmill/value.hpp"
#include "sweepmill/wdl.hpp"

namespace sweepmill {

enum class DomainOrigin { user_param, environ, substitute };

// One parameter dimension: a (task, keyword) pair with its ordered value
// list. Environ and substitute entries are namespaced with a dotted prefix
// so they cannot collide with user parameters of the same name.
struct ParameterDomain {
    std::string task;
    std::string keypath; // "size", "environ.OMP_NUM_THREADS", "substitute.<pattern>"
    DomainOrigin origin = DomainOrigin::user_param;
    std::vector<Value> values;

    std::size_t width() const { return values.size(); }
    friend bool operator==(const ParameterDomain&, const ParameterDomain&) = default;
};

struct FixedGroup {
    std::vector<ParameterDomain> members; // all with equal width
    std::size_t width = 0;
};

struct DomainSet {
    std::vector<ParameterDomain> free;
    std::vector<FixedGroup> groups;
    std::optional<SamplingSpec> sampling;
};

struct BindingKey {
    std::string task;
    std::string keypath;
    auto operator<=>(const BindingKey&) const = default;
};

// One element of the workflow set: exactly one bound value per domain, plus
// the ordinal this element holds in the full enumeration order.
struct Combination {
    std::int64_t index = 0;
    std::map<BindingKey, Value> bindings;

    const Value* find(const std::string& task, const std::string& keypath) const {
        auto it = bindings.find(BindingKey{task, keypath});
        return it == bindings.end() ? nullptr : &it->second;
    }
    friend bool operator==(const Combination&, const Combination&) = default;
};

namespace detail {

inline std::vector<Value> domain_values(const Value& v, const std::string& where) {
    if (v.is_range()) return expand_range(v.as_range(), where);
    if (v.is_list()) {
        if (v.as_list().empty())
            throw TypeError(where, "a parameter needs at least one value");
        std::vector<Value> out;
        for (const Value& el : v.as_list()) {
            if (el.is_range()) {
                for (Value& x : expand_range(el.as_range(), where)) out.push_back(std::move(x));
            } else {
                out.push_back(el);
            }
        }
        return out;
    }
    return {v};
}

// Maps a `fixed` keyword (bare or dotted) onto the keypath convention used
// by domains, mirroring the lookup order of validate().
inline std::string fixed_keyword_to_keypath(const TaskSpec& t, const std::string& kw) {
    if (kw.rfind("environ.", 0) == 0 || kw.rfind("substitute.", 0) == 0) return kw;
    if (t.find_user_param(kw)) return kw;
    if (t.find_environ(kw)) return "environ." + kw;
    if (t.find_substitute(kw)) return "substitute." + kw;
    return kw;
}

} // namespace detail

// Every user parameter, environ entry and substitute entry contributes one
// domain; single-valued entries become width-1 domains. Fixed clauses group
// equal-width domains into a single zipped dimension.
inline DomainSet collect_domains(const StudySpec& spec) {
    DomainSet ds;
    std::vector<ParameterDomain> all;
    for (const TaskSpec& t : spec.tasks) {
        const std::string where = "task '" + t.task + "'";
        for (const auto& [k, v] : t.user_params)
            all.push_back({t.task, k, DomainOrigin::user_param, detail::domain_values(v, where)});
        for (const auto& [k, v] : t.environ)
            all.push_back(
                {t.task, "environ." + k, DomainOrigin::environ, detail::domain_values(v, where)});
        for (const auto& [k, v] : t.substitute)
            all.push_back({t.task, "substitute." + k, DomainOrigin::substitute,
                           detail::domain_values(v, where)});
    }

    // assign grouped domains, in task declaration order then clause order
    std::set<std::pair<std::string, std::string>> grouped;
    for (const TaskSpec& t : spec.tasks) {
        for (const auto& clause : t.fixed_groups) {
            FixedGroup group;
            for (const std::string& kw : clause) {
                std::string keypath = detail::fixed_keyword_to_keypath(t, kw);
                auto it = std::find_if(all.begin(), all.end(), [&](const ParameterDomain& d) {
                    return d.task == t.task && d.keypath == keypath;
                });
                if (it == all.end())
                    throw BadFixedGroup("task '" + t.task + "': fixed keyword '" + kw +
                                        "' names no parameter");
                if (!grouped.insert({t.task, keypath}).second)
                    throw BadFixedGroup("task '" + t.task + "': parameter '" + kw +
                                        "' appears in more than one fixed clause");
                group.members.push_back(*it);
            }
            group.width = group.members.front().width();
            for (const ParameterDomain& m : group.members)
                if (m.width() != group.width)
                    throw FixedLengthMismatch(
                        "task '" + t.task + "': fixed group members must have the same number of "
                        "values (got " + std::to_string(group.width) + " and " +
                        std::to_string(m.width()) + ")");
            ds.groups.push_back(std::move(group));
        }
        if (t.sampling) ds.sampling = t.sampling;
    }

    for (ParameterDomain& d : all)
        if (!grouped.count({d.task, d.keypath})) ds.free.push_back(std::move(d));
    return ds;
}

// N_W before sampling: the product over fixed-group widths and free-domain
// value counts.
inline std::int64_t full_count(const DomainSet& ds) {
    std::int64_t n = 1;
    auto mul = [&n](std::size_t w) {
        if (__builtin_mul_overflow(n, static_cast<std::int64_t>(w), &n))
            throw CountTooLarge("combination count overflows a 64-bit integer");
    };
    for (const FixedGroup& g : ds.groups) mul(g.width);
    for (const ParameterDomain& d : ds.free) mul(d.width());
    return n;
}

// Effective instance count: full product, or the sampling count when a
// sampling clause is present.
inline std::int64_t count(const DomainSet& ds) {
    std::int64_t full = full_count(ds);
    if (!ds.sampling) return full;
    if (ds.sampling->count > full)
        throw CountTooLarge("sampling count " + std::to_string(ds.sampling->count) +
                            " exceeds the " + std::to_string(full) + " available combinations");
    return ds.sampling->count;
}

// Combination k is a pure function of k: dimensions form an odometer with
// fixed groups as the outermost wheels (in declaration order), then free
// domains in declaration order; the last dimension varies fastest.
inline Combination combination_at(const DomainSet& ds, std::int64_t k) {
    Combination combo;
    combo.index = k;
    std::size_t ndims = ds.groups.size() + ds.free.size();
    std::vector<std::size_t> digit(ndims, 0);
    std::int64_t rem = k;
    for (std::size_t d = ndims; d-- > 0;) {
        std::size_t w = d < ds.groups.size() ? ds.groups[d].width
                                             : ds.free[d - ds.groups.size()].width();
        digit[d] = static_cast<std::size_t>(rem % static_cast<std::int64_t>(w));
        rem /= static_cast<std::int64_t>(w);
    }
    for (std::size_t d = 0; d < ds.groups.size(); ++d)
        for (const ParameterDomain& m : ds.groups[d].members)
            combo.bindings.emplace(BindingKey{m.task, m.keypath}, m.values[digit[d]]);
    for (std::size_t d = 0; d < ds.free.size(); ++d) {
        const ParameterDomain& dom = ds.free[d];
        combo.bindings.emplace(BindingKey{dom.task, dom.keypath},
                               dom.values[digit[ds.groups.size() + d]]);
    }
    return combo;
}

// Full enumeration in odometer order, indices 0..N_W-1. Sampling is applied
// separately (see sample / plan_combinations).
inline std::vector<Combination> enumerate(const DomainSet& ds) {
    std::int64_t n = full_count(ds);
    std::vector<Combination> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) out.push_back(combination_at(ds, k));
    return out;
}

namespace detail {

inline std::uint64_t bounded_draw(std::mt19937_64& gen, std::uint64_t n) {
    // rejection keeps the draw unbiased and the sequence portable
    std::uint64_t lim = std::numeric_limits<std::uint64_t>::max() -
                        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = gen();
    } while (x >= lim);
    return x % n;
}

} // namespace detail

// Indices selected by a sampling clause, ascending. Uniform picks
// round(k*N/count) with duplicate collisions backfilled from the lowest
// unused indices; random draws without replacement from a seeded generator.
inline std::vector<std::int64_t> sampled_indices(std::int64_t full, const SamplingSpec& s) {
    if (s.count > full)
        throw CountTooLarge("sampling count " + std::to_string(s.count) + " exceeds the " +
                            std::to_string(full) + " available combinations");
    std::set<std::int64_t> chosen;
    if (s.dist == SamplingSpec::Dist::uniform) {
        for (std::int64_t k = 0; k < s.count; ++k)
            chosen.insert(std::llround(static_cast<double>(k) * static_cast<double>(full) /
                                       static_cast<double>(s.count)));
        for (std::int64_t i = 0; static_cast<std::int64_t>(chosen.size()) < s.count; ++i)
            chosen.insert(i);
    } else {
        std::mt19937_64 gen(s.seed);
        // Floyd's sampling: count distinct indices without materializing 0..N-1
        for (std::int64_t j = full - s.count; j < full; ++j) {
            auto t = static_cast<std::int64_t>(
                detail::bounded_draw(gen, static_cast<std::uint64_t>(j) + 1));
            if (!chosen.insert(t).second) chosen.insert(j);
        }
    }
    return {chosen.begin(), chosen.end()};
}

inline std::vector<Combination> sample(const std::vector<Combination>& stream,
                                       const SamplingSpec& s) {
    std::vector<std::int64_t> keep =
        sampled_indices(static_cast<std::int64_t>(stream.size()), s);
    std::vector<Combination> out;
    out.reserve(keep.size());
    for (std::int64_t i : keep) out.push_back(stream[static_cast<std::size_t>(i)]);
    return out;
}

// The plan: the enumeration with any sampling clause applied. Combination
// indices keep their ordinals from the full enumeration.
inline std::vector<Combination> plan_combinations(const DomainSet& ds) {
    std::int64_t full = full_count(ds);
    std::vector<std::int64_t> keep;
    if (ds.sampling) {
        keep = sampled_indices(full, *ds.sampling);
    } else {
        keep.resize(static_cast<std::size_t>(full));
        for (std::int64_t k = 0; k < full; ++k) keep[static_cast<std::size_t>(k)] = k;
    }
    std::vector<Combination> out;
    out.reserve(keep.size());
    for (std::int64_t k : keep) out.push_back(combination_at(ds, k));
    return out;
}

inline std::vector<Combination> plan_combinations(const StudySpec& spec) {
    return plan_combinations(collect_domains(spec));
}

} // namespace sweepmill
