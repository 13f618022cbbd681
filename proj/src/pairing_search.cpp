#include "weft/pairing_search.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <set>
#include <thread>

#include "json.hpp"

namespace weft {

using nlohmann::json;

std::pair<std::size_t, std::size_t> Segmentation::segment_range(std::size_t seg) const {
    if (seg == 0 || seg > segment_count()) {
        throw ConfigError("segment index out of range");
    }
    const std::size_t lo = seg == 1 ? 0 : cuts[seg - 2];
    const std::size_t hi = seg == segment_count() ? sequence.size() : cuts[seg - 1];
    return {lo, hi};
}

void Segmentation::validate() const {
    std::size_t prev = 0;
    for (std::size_t c : cuts) {
        if (c <= prev || c >= sequence.size()) {
            throw ConfigError("segmentation cuts must be strictly increasing within (0, len)");
        }
        prev = c;
    }
}

std::vector<Segmentation> enumerate_segmentations(const std::vector<int>& seq,
                                                  std::size_t max_segments,
                                                  std::size_t max_candidates) {
    if (max_segments < 1) throw ConfigError("max_segments must be >= 1");
    std::vector<Segmentation> out;
    if (max_candidates == 0) return out;

    const std::size_t n = seq.size();
    const std::size_t positions = n == 0 ? 0 : n - 1;
    const std::size_t max_cuts = std::min(max_segments - 1, positions);

    // k cuts chosen from positions 1..n-1, ascending k then lexicographic.
    std::vector<std::size_t> combo;
    for (std::size_t k = 0; k <= max_cuts && out.size() < max_candidates; ++k) {
        combo.assign(k, 0);
        for (std::size_t i = 0; i < k; ++i) combo[i] = i + 1;
        for (;;) {
            Segmentation s;
            s.sequence = seq;
            s.cuts.assign(combo.begin(), combo.end());
            out.push_back(std::move(s));
            if (out.size() >= max_candidates) break;
            // next combination
            std::size_t i = k;
            while (i > 0) {
                --i;
                if (combo[i] < positions - (k - 1 - i)) {
                    ++combo[i];
                    for (std::size_t j = i + 1; j < k; ++j) combo[j] = combo[j - 1] + 1;
                    break;
                }
                if (i == 0) {
                    i = k + 1;  // exhausted
                    break;
                }
            }
            if (k == 0 || i == k + 1) break;
        }
    }
    return out;
}

bool plan_valid(const PairingPlan& plan, int n_f, int n_b) {
    int next_f = 1, next_b = 1;
    for (const auto& step : plan.steps) {
        if (!step.fwd_seg && !step.bwd_seg) return false;
        if (step.fwd_seg) {
            if (*step.fwd_seg != next_f) return false;
            ++next_f;
        }
        if (step.bwd_seg) {
            if (*step.bwd_seg != next_b) return false;
            ++next_b;
        }
    }
    return next_f == n_f + 1 && next_b == n_b + 1;
}

PairingPlan dp_align(int n_f, int n_b, const PairCostFn& cost, double barrier_cost_us) {
    if (n_f < 0 || n_b < 0) throw ConfigError("segment counts must be >= 0");
    const int nf = n_f, nb = n_b;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> t(static_cast<std::size_t>(nf + 1) * (nb + 1), inf);
    std::vector<std::uint8_t> choice(t.size(), 0);  // 0 pair, 1 fwd solo, 2 bwd solo
    auto at = [&](int i, int j) -> std::size_t {
        return static_cast<std::size_t>(i) * (nb + 1) + j;
    };
    t[at(0, 0)] = 0.0;
    for (int i = 0; i <= nf; ++i) {
        for (int j = 0; j <= nb; ++j) {
            if (i == 0 && j == 0) continue;
            double best = inf;
            std::uint8_t pick = 0;
            if (i > 0 && j > 0) {
                const double v = t[at(i - 1, j - 1)] + cost(i, j) + barrier_cost_us;
                if (v < best) {
                    best = v;
                    pick = 0;
                }
            }
            if (i > 0) {
                const double v = t[at(i - 1, j)] + cost(i, 0) + barrier_cost_us;
                if (v < best) {
                    best = v;
                    pick = 1;
                }
            }
            if (j > 0) {
                const double v = t[at(i, j - 1)] + cost(0, j) + barrier_cost_us;
                if (v < best) {
                    best = v;
                    pick = 2;
                }
            }
            t[at(i, j)] = best;
            choice[at(i, j)] = pick;
        }
    }

    PairingPlan plan;
    int i = nf, j = nb;
    while (i > 0 || j > 0) {
        PairStep step;
        switch (choice[at(i, j)]) {
            case 0:
                step.fwd_seg = i;
                step.bwd_seg = j;
                --i;
                --j;
                break;
            case 1:
                step.fwd_seg = i;
                --i;
                break;
            default:
                step.bwd_seg = j;
                --j;
                break;
        }
        plan.steps.push_back(step);
    }
    std::reverse(plan.steps.begin(), plan.steps.end());
    plan.total_us = t[at(nf, nb)];
    if (!plan.steps.empty()) plan.total_us -= barrier_cost_us;  // fences sit between steps
    return plan;
}

namespace {

void brute_force_rec(int i, int j, int n_f, int n_b, const PairCostFn& cost, double barrier,
                     double acc, std::vector<PairStep>& steps, PairingPlan& best,
                     std::uint64_t& count) {
    if (i == n_f && j == n_b) {
        ++count;
        double total = acc;
        if (!steps.empty()) total -= barrier;
        if (total < best.total_us) {
            best.total_us = total;
            best.steps = steps;
        }
        return;
    }
    if (i < n_f && j < n_b) {
        steps.push_back({i + 1, j + 1});
        brute_force_rec(i + 1, j + 1, n_f, n_b, cost, barrier,
                        acc + cost(i + 1, j + 1) + barrier, steps, best, count);
        steps.pop_back();
    }
    if (i < n_f) {
        steps.push_back({i + 1, std::nullopt});
        brute_force_rec(i + 1, j, n_f, n_b, cost, barrier, acc + cost(i + 1, 0) + barrier, steps,
                        best, count);
        steps.pop_back();
    }
    if (j < n_b) {
        steps.push_back({std::nullopt, j + 1});
        brute_force_rec(i, j + 1, n_f, n_b, cost, barrier, acc + cost(0, j + 1) + barrier, steps,
                        best, count);
        steps.pop_back();
    }
}

}  // namespace

BruteForceResult brute_force_align(int n_f, int n_b, const PairCostFn& cost,
                                   double barrier_cost_us) {
    if (n_f < 0 || n_b < 0) throw ConfigError("segment counts must be >= 0");
    if (n_f + n_b > 14) {
        throw ConfigError("brute_force_align: instance too large (n_f + n_b > 14)");
    }
    BruteForceResult result;
    result.plan.total_us = std::numeric_limits<double>::infinity();
    std::vector<PairStep> steps;
    brute_force_rec(0, 0, n_f, n_b, cost, barrier_cost_us, 0.0, steps, result.plan,
                    result.alignments_enumerated);
    if (n_f == 0 && n_b == 0) result.plan.total_us = 0.0;
    return result;
}

// ---------------------------------------------------------------------------
// Joint search

namespace {

struct SegmentOps {
    std::vector<std::vector<OpNode>> segs;  // resolved per 1-based segment
};

SegmentOps resolve_segments(const LayerDag& dag, const Segmentation& sm) {
    std::map<int, const OpNode*> by_id;
    for (const auto& n : dag.nodes) by_id[n.id] = &n;
    SegmentOps out;
    for (std::size_t s = 1; s <= sm.segment_count(); ++s) {
        auto [lo, hi] = sm.segment_range(s);
        std::vector<OpNode> ops;
        for (std::size_t k = lo; k < hi; ++k) ops.push_back(*by_id.at(sm.sequence[k]));
        out.segs.push_back(std::move(ops));
    }
    return out;
}

double comm_solo_sum(const std::vector<OpNode>& ops, const SoloTimeTable& solo) {
    double sum = 0.0;
    for (const auto& op : ops) {
        if (op.lane == Lane::compute) continue;
        sum += solo_lookup(solo, op.cls, op.name).value_or(op.duration_us);
    }
    return sum;
}

double comp_solo_sum(const std::vector<OpNode>& ops, const SoloTimeTable& solo) {
    double sum = 0.0;
    for (const auto& op : ops) {
        if (op.lane != Lane::compute) continue;
        sum += solo_lookup(solo, op.cls, op.name).value_or(op.duration_us);
    }
    return sum;
}

struct Candidate {
    std::size_t fwd_seq = 0;
    std::size_t bwd_seq = 0;
    std::size_t fwd_segm = 0;
    std::size_t bwd_segm = 0;
};

struct Evaluated {
    double total_us = std::numeric_limits<double>::infinity();
    std::size_t index = 0;
    PairingPlan plan;
};

Segmentation all_singletons(const std::vector<int>& seq) {
    Segmentation s;
    s.sequence = seq;
    for (std::size_t c = 1; c < seq.size(); ++c) s.cuts.push_back(c);
    return s;
}

// Cuts at every lane transition, merged down to max_segments by repeatedly
// removing the cut between the two shortest adjacent segments.
Segmentation lane_boundary_segmentation(const LayerDag& dag, const std::vector<int>& seq,
                                        const SoloTimeTable& solo, std::size_t max_segments) {
    Segmentation s;
    s.sequence = seq;
    std::vector<double> dur(seq.size(), 0.0);
    std::vector<Lane> lane(seq.size(), Lane::compute);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const OpNode* op = dag.find(seq[i]);
        lane[i] = op->lane;
        dur[i] = solo_lookup(solo, op->cls, op->name).value_or(op->duration_us);
    }
    for (std::size_t i = 1; i < seq.size(); ++i) {
        if (lane[i] != lane[i - 1]) s.cuts.push_back(i);
    }
    while (s.segment_count() > max_segments && !s.cuts.empty()) {
        std::size_t drop = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < s.cuts.size(); ++c) {
            const std::size_t lo = c == 0 ? 0 : s.cuts[c - 1];
            const std::size_t hi = c + 1 < s.cuts.size() ? s.cuts[c + 1] : seq.size();
            double merged = 0.0;
            for (std::size_t i = lo; i < hi; ++i) merged += dur[i];
            if (merged < best) {
                best = merged;
                drop = c;
            }
        }
        s.cuts.erase(s.cuts.begin() + static_cast<std::ptrdiff_t>(drop));
    }
    return s;
}

// Evenly spaced cuts into k segments.
Segmentation uniform_segmentation(const std::vector<int>& seq, std::size_t k) {
    Segmentation s;
    s.sequence = seq;
    for (std::size_t i = 1; i < k; ++i) {
        const std::size_t cut = i * seq.size() / k;
        if (cut > 0 && cut < seq.size() && (s.cuts.empty() || cut > s.cuts.back())) {
            s.cuts.push_back(cut);
        }
    }
    return s;
}

// Deterministic candidate set: the structural segmentations first (whole
// sequence, lane boundaries, even grids, singletons), then the plain
// coarsest-first enumeration up to the budget.
std::vector<Segmentation> candidate_segmentations(const LayerDag& dag, const std::vector<int>& seq,
                                                  const SoloTimeTable& solo,
                                                  std::size_t max_segments, std::size_t budget) {
    std::vector<Segmentation> out;
    std::set<std::vector<std::size_t>> seen;
    auto push = [&](Segmentation s) {
        if (out.size() >= budget) return;
        if (s.segment_count() > std::max<std::size_t>(1, max_segments)) return;
        if (seen.insert(s.cuts).second) out.push_back(std::move(s));
    };
    Segmentation whole;
    whole.sequence = seq;
    push(whole);
    push(lane_boundary_segmentation(dag, seq, solo, max_segments));
    for (std::size_t k = 2; k <= max_segments; ++k) push(uniform_segmentation(seq, k));
    if (seq.size() > 1 && seq.size() <= max_segments) push(all_singletons(seq));
    for (auto& s : enumerate_segmentations(seq, max_segments, budget)) push(std::move(s));
    return out;
}

// Greedy list order: among available ops prefer communication (longest
// first), then the op with the most unfinished successors. A deterministic
// complement to plain lexicographic enumeration; keeps comm ops early so the
// opposite strand has work to hide them behind.
std::vector<int> eager_comm_order(const LayerDag& dag, const SoloTimeTable& solo) {
    std::map<int, int> indeg;
    std::map<int, std::vector<int>> adj;
    std::map<int, const OpNode*> by_id;
    for (const auto& n : dag.nodes) {
        indeg[n.id] = 0;
        by_id[n.id] = &n;
    }
    for (const auto& [p, c] : dag.edges) {
        adj[p].push_back(c);
        ++indeg[c];
    }
    std::vector<int> order;
    while (order.size() < dag.nodes.size()) {
        int pick = -1;
        std::tuple<int, double, int, int> best{2, 0.0, 0, 0};
        for (const auto& [id, deg] : indeg) {
            if (deg != 0) continue;
            const OpNode* op = by_id.at(id);
            const double d = solo_lookup(solo, op->cls, op->name).value_or(op->duration_us);
            const int succ = static_cast<int>(adj[id].size());
            // comm first (rank 0), longest duration, most successors, low id
            std::tuple<int, double, int, int> key{op->lane == Lane::compute ? 1 : 0, -d, -succ,
                                                  id};
            if (pick == -1 || key < best) {
                best = key;
                pick = id;
            }
        }
        order.push_back(pick);
        indeg.erase(pick);
        for (int c : adj[pick]) --indeg[c];
    }
    return order;
}

std::vector<std::vector<int>> candidate_sequences(const LayerDag& dag, const SoloTimeTable& solo,
                                                  std::size_t cap) {
    std::vector<std::vector<int>> seqs =
        enumerate_topological_orders(dag, std::max<std::size_t>(1, cap));
    if (cap > 1 && dag.nodes.size() > 1) {
        const std::vector<int> eager = eager_comm_order(dag, solo);
        if (std::find(seqs.begin(), seqs.end(), eager) == seqs.end()) {
            if (seqs.size() >= cap) seqs.pop_back();
            seqs.push_back(eager);
        }
    }
    return seqs;
}

}  // namespace

BestPlan search_si_plan(const LayerDag& fwd_dag, const LayerDag& bwd_dag, const OverlapTable& tbl,
                        const SoloTimeTable& solo, const SearchOptions& opts) {
    const std::size_t seq_cap = std::max<std::size_t>(1, opts.caps.sequences);
    const auto fwd_seqs = candidate_sequences(fwd_dag, solo, seq_cap);
    const auto bwd_seqs = candidate_sequences(bwd_dag, solo, seq_cap);

    // Split the candidate budget evenly across sequence pairs.
    const std::size_t seq_pairs = std::max<std::size_t>(1, fwd_seqs.size() * bwd_seqs.size());
    const std::size_t per_pair = std::max<std::size_t>(1, opts.caps.candidates / seq_pairs);
    const std::size_t per_side =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(per_pair))));

    struct SeqEntry {
        std::vector<int> seq;
        std::vector<Segmentation> segms;
    };
    auto make_entries = [&](const LayerDag& dag, const std::vector<std::vector<int>>& seqs,
                            bool add_finest) {
        std::vector<SeqEntry> entries;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            SeqEntry e;
            e.seq = seqs[i];
            e.segms = candidate_segmentations(dag, e.seq, solo, opts.caps.segments, per_side);
            // The all-singletons segmentation anchors the first sequence so the
            // fixed round-robin plan is always in the search space.
            if (add_finest && i == 0 && e.seq.size() > 1) {
                const auto fine = all_singletons(e.seq);
                const bool present = std::any_of(e.segms.begin(), e.segms.end(),
                                                 [&](const Segmentation& s) {
                                                     return s.cuts == fine.cuts;
                                                 });
                if (!present) e.segms.push_back(fine);
            }
            entries.push_back(std::move(e));
        }
        return entries;
    };
    const auto fwd_entries = make_entries(fwd_dag, fwd_seqs, true);
    const auto bwd_entries = make_entries(bwd_dag, bwd_seqs, true);

    std::vector<Candidate> candidates;
    for (std::size_t sf = 0; sf < fwd_entries.size(); ++sf) {
        for (std::size_t sb = 0; sb < bwd_entries.size(); ++sb) {
            std::size_t used = 0;
            for (std::size_t gf = 0; gf < fwd_entries[sf].segms.size(); ++gf) {
                for (std::size_t gb = 0; gb < bwd_entries[sb].segms.size(); ++gb) {
                    candidates.push_back({sf, sb, gf, gb});
                    if (++used >= per_pair) break;
                }
                if (used >= per_pair) break;
            }
        }
    }
    if (candidates.size() > opts.caps.candidates) {
        candidates.resize(opts.caps.candidates);
    }

    auto evaluate = [&](std::size_t index) {
        const Candidate& c = candidates[index];
        const auto& fe = fwd_entries[c.fwd_seq];
        const auto& be = bwd_entries[c.bwd_seq];
        const Segmentation& sf = fe.segms[c.fwd_segm];
        const Segmentation& sb = be.segms[c.bwd_segm];
        const SegmentOps fo = resolve_segments(fwd_dag, sf);
        const SegmentOps bo = resolve_segments(bwd_dag, sb);
        PairCostFn cost = [&](int i, int j) -> double {
            static const std::vector<OpNode> empty;
            const auto& a = i > 0 ? fo.segs[static_cast<std::size_t>(i - 1)] : empty;
            const auto& b = j > 0 ? bo.segs[static_cast<std::size_t>(j - 1)] : empty;
            return segment_pair_cost(a, b, tbl, solo).p_us;
        };
        Evaluated ev;
        ev.plan = dp_align(static_cast<int>(fo.segs.size()), static_cast<int>(bo.segs.size()),
                           cost, opts.barrier_cost_us);
        ev.total_us = ev.plan.total_us;
        ev.index = index;
        return ev;
    };

    Evaluated best;
    auto better = [](const Evaluated& a, const Evaluated& b) {
        return a.total_us < b.total_us || (a.total_us == b.total_us && a.index < b.index);
    };
    if (opts.parallel && candidates.size() > 1) {
        const std::size_t nthreads =
            std::min<std::size_t>(candidates.size(),
                                  opts.threads > 0 ? static_cast<std::size_t>(opts.threads)
                                                   : std::max(1u, std::thread::hardware_concurrency()));
        std::vector<std::future<Evaluated>> futures;
        for (std::size_t w = 0; w < nthreads; ++w) {
            futures.push_back(std::async(std::launch::async, [&, w]() {
                Evaluated local;
                for (std::size_t i = w; i < candidates.size(); i += nthreads) {
                    Evaluated ev = evaluate(i);
                    if (better(ev, local)) local = ev;
                }
                return local;
            }));
        }
        for (auto& f : futures) {
            Evaluated ev = f.get();
            if (better(ev, best)) best = ev;
        }
    } else {
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            Evaluated ev = evaluate(i);
            if (better(ev, best)) best = ev;
        }
    }

    if (candidates.empty()) throw ConfigError("search produced no candidates");

    const Candidate& cb = candidates[best.index];
    BestPlan out;
    out.plan = best.plan;
    out.fwd_seq = fwd_entries[cb.fwd_seq].seq;
    out.bwd_seq = bwd_entries[cb.bwd_seq].seq;
    out.fwd_segmentation = fwd_entries[cb.fwd_seq].segms[cb.fwd_segm];
    out.bwd_segmentation = bwd_entries[cb.bwd_seq].segms[cb.bwd_segm];
    out.total_us = best.total_us;
    out.candidates_evaluated = candidates.size();

    // Hidden communication: per step, the span not covered by the step's own
    // compute work is visible communication time.
    const SegmentOps fo = resolve_segments(fwd_dag, out.fwd_segmentation);
    const SegmentOps bo = resolve_segments(bwd_dag, out.bwd_segmentation);
    double comm_total = 0.0;
    for (const auto& seg : fo.segs) comm_total += comm_solo_sum(seg, solo);
    for (const auto& seg : bo.segs) comm_total += comm_solo_sum(seg, solo);
    double visible = 0.0;
    for (const auto& step : out.plan.steps) {
        static const std::vector<OpNode> empty;
        const auto& a = step.fwd_seg ? fo.segs[static_cast<std::size_t>(*step.fwd_seg - 1)] : empty;
        const auto& b = step.bwd_seg ? bo.segs[static_cast<std::size_t>(*step.bwd_seg - 1)] : empty;
        const double p = segment_pair_cost(a, b, tbl, solo).p_us;
        const double comp = comp_solo_sum(a, solo) + comp_solo_sum(b, solo);
        const double comm = comm_solo_sum(a, solo) + comm_solo_sum(b, solo);
        visible += std::clamp(p - comp, 0.0, comm);
    }
    out.hidden_comm_frac = comm_total > 0.0 ? 1.0 - visible / comm_total : 0.0;
    return out;
}

std::string plan_to_json(const BestPlan& best, const std::map<std::string, std::string>& metadata) {
    json j;
    j["steps"] = json::array();
    for (const auto& step : best.plan.steps) {
        json js;
        js["fwd_seg"] = step.fwd_seg ? json(*step.fwd_seg) : json(nullptr);
        js["bwd_seg"] = step.bwd_seg ? json(*step.bwd_seg) : json(nullptr);
        j["steps"].push_back(js);
    }
    j["total_us"] = best.total_us;
    j["hidden_comm_frac"] = best.hidden_comm_frac;
    j["fwd_seq"] = best.fwd_seq;
    j["bwd_seq"] = best.bwd_seq;
    j["fwd_cuts"] = best.fwd_segmentation.cuts;
    j["bwd_cuts"] = best.bwd_segmentation.cuts;
    j["metadata"] = json::object();
    for (const auto& [k, v] : metadata) j["metadata"][k] = v;
    return j.dump(2) + "\n";
}

}  // namespace weft
