#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "catch_amalgamated.hpp"

#include "weft/folding_pipeline.hpp"

using namespace weft;

namespace {

double device_idle(const PipelineSchedule& s, int dev) {
    double first = 1e300, last = 0.0, busy = 0.0;
    for (const auto& b : s.blocks) {
        if (b.device != dev) continue;
        first = std::min(first, b.start_us);
        last = std::max(last, b.end_us());
        busy += b.dur_us;
    }
    return (last - first) - busy;
}

// Quantized-time list scheduler, independent of the event engine. Tasks are
// rebuilt from the discipline definition: visit chains over the U path with
// forward i fused to backward i-p.
double w_makespan_oracle(int m, int p, double f_h, double b_h, double si_h) {
    struct Task {
        int device;
        double dur;
        std::vector<int> deps;
        int seq;
    };
    std::vector<Task> tasks;
    auto u_visits = [&]() {
        std::vector<std::pair<int, int>> v;  // (device, half_stages)
        if (p == 1) {
            v.push_back({0, 2});
            return v;
        }
        for (int d = 0; d < p - 1; ++d) v.push_back({d, 1});
        v.push_back({p - 1, 2});
        for (int d = p - 2; d >= 0; --d) v.push_back({d, 1});
        return v;
    };
    const auto path = u_visits();
    auto chain = [&](double half_dur, int head_dep) {
        int prev = head_dep;
        for (const auto& [dev, halves] : path) {
            Task t;
            t.device = dev;
            t.dur = half_dur * halves;
            if (prev >= 0) t.deps.push_back(prev);
            t.seq = static_cast<int>(tasks.size());
            tasks.push_back(t);
            prev = t.seq;
        }
        return prev;
    };
    std::vector<int> fwd_tail(static_cast<std::size_t>(m) + 1, -1);
    int prev_first = -1;
    for (int mb = 1; mb <= std::min(m, p); ++mb) {
        const int head = static_cast<int>(tasks.size());
        fwd_tail[static_cast<std::size_t>(mb)] = chain(f_h, prev_first);
        prev_first = head;
    }
    for (int mb = p + 1; mb <= m; ++mb) {
        fwd_tail[static_cast<std::size_t>(mb)] =
            chain(si_h, fwd_tail[static_cast<std::size_t>(mb - p)]);
    }
    for (int mb = std::max(1, m - p + 1); mb <= m; ++mb) {
        chain(b_h, fwd_tail[static_cast<std::size_t>(mb)]);
    }

    // quantized clock; all durations are multiples of the tick
    const double tick = 0.25;
    std::vector<double> end(tasks.size(), -1.0);
    std::vector<int> running(static_cast<std::size_t>(p), -1);
    std::size_t done = 0;
    double t = 0.0;
    std::vector<bool> finished(tasks.size(), false);
    while (done < tasks.size()) {
        for (int dev = 0; dev < p; ++dev) {
            auto& r = running[static_cast<std::size_t>(dev)];
            if (r >= 0 && end[static_cast<std::size_t>(r)] <= t + 1e-12) {
                finished[static_cast<std::size_t>(r)] = true;
                ++done;
                r = -1;
            }
        }
        for (int dev = 0; dev < p; ++dev) {
            auto& r = running[static_cast<std::size_t>(dev)];
            if (r >= 0) continue;
            int pick = -1;
            double pick_ready = 0.0;
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                if (finished[i] || static_cast<int>(i) == running[static_cast<std::size_t>(dev)]) continue;
                bool is_running = false;
                for (int other : running) {
                    if (other == static_cast<int>(i)) is_running = true;
                }
                if (is_running || tasks[i].device != dev) continue;
                double ready = 0.0;
                bool ok = true;
                for (int dep : tasks[i].deps) {
                    if (!finished[static_cast<std::size_t>(dep)]) {
                        ok = false;
                        break;
                    }
                    ready = std::max(ready, end[static_cast<std::size_t>(dep)]);
                }
                if (!ok || ready > t + 1e-12) continue;
                if (pick == -1 || tasks[static_cast<std::size_t>(pick)].seq > tasks[i].seq) {
                    pick = static_cast<int>(i);
                    pick_ready = ready;
                }
            }
            (void)pick_ready;
            if (pick >= 0) {
                r = pick;
                end[static_cast<std::size_t>(pick)] = t + tasks[static_cast<std::size_t>(pick)].dur;
            }
        }
        t += tick;
    }
    double ms = 0.0;
    for (double e : end) ms = std::max(ms, e);
    return ms;
}

// naive O(n^2) overlap checker used to cross-check the validator
bool naive_overlap_free(const PipelineSchedule& s) {
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
        for (std::size_t j = i + 1; j < s.blocks.size(); ++j) {
            const auto& a = s.blocks[i];
            const auto& b = s.blocks[j];
            if (a.device != b.device) continue;
            if (a.start_us < b.end_us() - 1e-9 && b.start_us < a.end_us() - 1e-9) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("folding a 32-layer model over 4 stages", "[folding_pipeline]") {
    const FoldedLayout layout = fold_layers(32, 4);
    REQUIRE(layout.gpus.size() == 4);
    CHECK(layout.gpus[0].front_lo == 0);
    CHECK(layout.gpus[0].front_hi == 4);
    CHECK(layout.gpus[0].back_lo == 28);
    CHECK(layout.gpus[0].back_hi == 32);
    CHECK(layout.gpus[3].front_lo == 12);
    CHECK(layout.gpus[3].front_hi == 16);
    CHECK(layout.gpus[3].back_lo == 16);
    CHECK(layout.gpus[3].back_hi == 20);

    // ranges partition 0..L and each GPU holds L/p layers
    std::set<int> covered;
    for (const auto& g : layout.gpus) {
        CHECK((g.front_hi - g.front_lo) + (g.back_hi - g.back_lo) == 8);
        for (int l = g.front_lo; l < g.front_hi; ++l) covered.insert(l);
        for (int l = g.back_lo; l < g.back_hi; ++l) covered.insert(l);
    }
    CHECK(covered.size() == 32);
}

TEST_CASE("fold with one layer per half-stage", "[folding_pipeline]") {
    const int p = 3;
    const FoldedLayout layout = fold_layers(2 * p, p);
    for (int k = 0; k < p; ++k) {
        CHECK(layout.gpus[static_cast<std::size_t>(k)].front_lo == k);
        CHECK(layout.gpus[static_cast<std::size_t>(k)].back_lo == 2 * p - 1 - k);
    }
}

TEST_CASE("indivisible layer counts are rejected", "[folding_pipeline]") {
    CHECK_THROWS_AS(fold_layers(30, 4), InfeasibleError);
    CHECK_THROWS_AS(fold_layers(0, 4), ConfigError);
}

TEST_CASE("degenerate single-device W pipeline", "[folding_pipeline]") {
    const PipelineSchedule s = schedule_w_pipeline(1, 1, {1.0, 1.0, 2.0});
    REQUIRE(s.blocks.size() == 2);
    CHECK(s.blocks[0].kind == BlockKind::F);
    CHECK(s.blocks[1].kind == BlockKind::B);
    CHECK(s.blocks[0].end_us() <= s.blocks[1].start_us + 1e-12);
    CHECK(validate_schedule(s).empty());
}

TEST_CASE("W pipeline at (12, 4) has the documented structure", "[folding_pipeline]") {
    const PipelineSchedule s = schedule_w_pipeline(12, 4, {1.0, 1.0, 2.0});
    CHECK(validate_schedule(s).empty());

    // first SI block fuses forward 5 with backward 1 on device 0
    const Block* first_si = nullptr;
    for (const auto& b : s.blocks) {
        if (b.kind != BlockKind::SI) continue;
        if (first_si == nullptr || b.start_us < first_si->start_us) first_si = &b;
    }
    REQUIRE(first_si != nullptr);
    CHECK(first_si->device == 0);
    CHECK(first_si->fwd_mb == 5);
    CHECK(first_si->bwd_mb == 1);

    // every micro-batch crosses each device boundary twice per direction
    for (int mb = 1; mb <= 12; ++mb) {
        for (bool backward : {false, true}) {
            std::vector<const Block*> visits;
            for (const auto& b : s.blocks) {
                const auto& id = backward ? b.bwd_mb : b.fwd_mb;
                if (id && *id == mb) visits.push_back(&b);
            }
            std::sort(visits.begin(), visits.end(),
                      [](const Block* a, const Block* b) { return a->start_us < b->start_us; });
            std::map<std::pair<int, int>, int> crossings;
            for (std::size_t i = 1; i < visits.size(); ++i) {
                const int a = visits[i - 1]->device, b = visits[i]->device;
                if (a != b) ++crossings[{std::min(a, b), std::max(a, b)}];
            }
            for (int k = 0; k < 3; ++k) {
                CHECK(crossings[{k, k + 1}] == 2);
            }
        }
    }
}

TEST_CASE("generators produce validator-clean schedules across the sweep", "[folding_pipeline]") {
    for (int p = 1; p <= 8; ++p) {
        for (int m = 1; m <= 32; m += (m < 8 ? 1 : 5)) {
            CAPTURE(m, p);
            CHECK(validate_schedule(schedule_w_pipeline(m, p, {1.0, 2.0, 2.5})).empty());
            CHECK(validate_schedule(schedule_1f1b(m, p, {1.0, 2.0, 0.0})).empty());
            CHECK(validate_schedule(schedule_bidirectional(m, p, {1.0, 2.0, 0.0})).empty());
        }
    }
}

TEST_CASE("single-stage 1F1B has no bubbles", "[folding_pipeline]") {
    for (int m : {1, 3, 8}) {
        const PipelineSchedule s = schedule_1f1b(m, 1, {1.5, 2.5, 0.0});
        CHECK(s.makespan_us() == Catch::Approx(m * 4.0));
        CHECK(device_idle(s, 0) == Catch::Approx(0.0));
        CHECK(bubble_ratio(s) == Catch::Approx(0.0));
    }
}

TEST_CASE("1F1B idle pattern at (4, 4) matches the hand count", "[folding_pipeline]") {
    // unit blocks: stage k idles 2*(p-1-k) within its own span
    const PipelineSchedule s = schedule_1f1b(4, 4, {1.0, 1.0, 0.0});
    CHECK(s.makespan_us() == Catch::Approx(14.0));
    CHECK(device_idle(s, 0) == Catch::Approx(6.0));
    CHECK(device_idle(s, 1) == Catch::Approx(4.0));
    CHECK(device_idle(s, 2) == Catch::Approx(2.0));
    CHECK(device_idle(s, 3) == Catch::Approx(0.0));
}

TEST_CASE("W makespan matches the quantized list-scheduling oracle", "[folding_pipeline]") {
    CHECK(schedule_w_pipeline(8, 2, {1.0, 1.0, 2.0}).makespan_us() ==
          Catch::Approx(w_makespan_oracle(8, 2, 1.0, 1.0, 2.0)));
    for (int p = 1; p <= 4; ++p) {
        for (int m : {1, 2, 3, 5, 8, 11}) {
            CAPTURE(m, p);
            CHECK(schedule_w_pipeline(m, p, {0.5, 0.75, 1.0}).makespan_us() ==
                  Catch::Approx(w_makespan_oracle(m, p, 0.5, 0.75, 1.0)));
        }
    }
}

TEST_CASE("bidirectional schedule basics", "[folding_pipeline]") {
    const PipelineSchedule one = schedule_bidirectional(1, 1, {1.0, 2.0, 0.0});
    REQUIRE(one.blocks.size() == 2);
    CHECK(one.blocks[0].kind == BlockKind::F);
    CHECK(one.blocks[1].kind == BlockKind::B);
    CHECK(one.model_state_factor == 2.0);

    const PipelineSchedule s = schedule_bidirectional(4, 2, {1.0, 1.0, 0.0});
    CHECK(validate_schedule(s).empty());
    CHECK(s.model_state_factor == 2.0);
    // both directions present: some forward starts on each end device
    bool down = false, up = false;
    for (const auto& b : s.blocks) {
        if (b.kind != BlockKind::F) continue;
        if (*b.fwd_mb % 2 == 1 && b.device == 0 && b.start_us == 0.0) down = true;
        if (*b.fwd_mb % 2 == 0 && b.device == 1 && b.start_us == 0.0) up = true;
    }
    CHECK(down);
    CHECK(up);
}

TEST_CASE("steady phase runs SI blocks back to back", "[folding_pipeline]") {
    // devices saturate during the steady phase: the middle of each device's
    // SI stretch has no gaps, and what idle exists inside the SI window is a
    // warmup/cooldown seam bounded by 2p slots regardless of m
    for (int p = 1; p <= 6; ++p) {
        for (int m = 2 * p; m <= 24; m += 3) {
            const double si_h = 1.0;
            const PipelineSchedule s = schedule_w_pipeline(m, p, {0.5, 0.5, si_h});
            for (int dev = 0; dev < p; ++dev) {
                std::vector<std::pair<double, double>> si;
                std::vector<std::pair<double, double>> busy;
                for (const auto& b : s.blocks) {
                    if (b.device != dev) continue;
                    busy.emplace_back(b.start_us, b.end_us());
                    if (b.kind == BlockKind::SI) si.emplace_back(b.start_us, b.end_us());
                }
                std::sort(si.begin(), si.end());
                std::sort(busy.begin(), busy.end());

                int gaps = 0;
                double cursor = si.front().first, idle = 0.0;
                for (const auto& [a, e] : busy) {
                    if (e <= si.front().first || a >= si.back().second) continue;
                    if (a > cursor + 1e-9) {
                        idle += a - cursor;
                        ++gaps;
                    }
                    cursor = std::max(cursor, e);
                }
                CAPTURE(m, p, dev);
                CHECK(gaps <= 2 * p);
                CHECK(idle <= 2.0 * p * si_h + 1e-9);
            }
        }
    }
}

TEST_CASE("interleaving gain shortens the W pipeline", "[folding_pipeline]") {
    // SI at 75% of F+B vs plain 1F1B, half-stage durations halved to keep
    // per-layer work equal
    const double tf = 1.0, tb = 2.0;
    for (int p = 1; p <= 8; ++p) {
        for (int m = 2 * p; m <= 32; m += 3) {
            const double si_h = 0.75 * (tf + tb) / 2.0;
            const PipelineSchedule w = schedule_w_pipeline(m, p, {tf / 2, tb / 2, si_h});
            const PipelineSchedule lin = schedule_1f1b(m, p, {tf, tb, 0.0});
            CAPTURE(m, p);
            CHECK(w.makespan_us() < lin.makespan_us());
        }
    }
}

TEST_CASE("bubble ratio is zero only without stalls", "[folding_pipeline]") {
    CHECK(bubble_ratio(schedule_1f1b(6, 1, {1, 1, 0})) == Catch::Approx(0.0));
    CHECK(bubble_ratio(schedule_w_pipeline(6, 1, {1, 1, 2})) == Catch::Approx(0.0));
    CHECK(bubble_ratio(schedule_1f1b(4, 4, {1, 1, 0})) > 0.0);
    PipelineSchedule empty;
    empty.p = 2;
    CHECK_THROWS_AS(bubble_ratio(empty), ConfigError);
}

TEST_CASE("W idle exceeds 1F1B by a constant warmup/cooldown seam", "[folding_pipeline]") {
    // steady-state parity: the per-device idle difference is independent of
    // m, so the bubble-ratio gap vanishes as m grows
    for (int p = 2; p <= 5; ++p) {
        std::vector<double> deltas;
        for (int m : {3 * p, 4 * p, 5 * p}) {
            const PipelineSchedule w = schedule_w_pipeline(m, p, {0.5, 0.5, 1.0});
            const PipelineSchedule lin = schedule_1f1b(m, p, {1.0, 1.0, 0.0});
            double w_total = 0.0, lin_total = 0.0;
            for (int dev = 0; dev < p; ++dev) {
                w_total += device_idle(w, dev);
                lin_total += device_idle(lin, dev);
            }
            deltas.push_back(w_total - lin_total);
        }
        CAPTURE(p);
        CHECK(deltas[0] == Catch::Approx(deltas[1]).margin(1e-9));
        CHECK(deltas[1] == Catch::Approx(deltas[2]).margin(1e-9));

        const double br_w = bubble_ratio(schedule_w_pipeline(40 * p, p, {0.5, 0.5, 1.0}));
        const double br_lin = bubble_ratio(schedule_1f1b(40 * p, p, {1.0, 1.0, 0.0}));
        CHECK(std::abs(br_w - br_lin) < 0.05);
    }
}

TEST_CASE("PP transfer counts", "[folding_pipeline]") {
    // linear 1F1B: each micro-batch crosses p-1 boundaries per pass
    for (int p : {1, 2, 4, 7}) {
        for (int m : {1, 3, 8}) {
            const PpVolume v = pp_comm_volume(schedule_1f1b(m, p, {1, 1, 0}), 1000);
            CHECK(v.transfers == 2ll * m * (p - 1));
            CHECK(v.bytes == v.transfers * 1000);
        }
    }
    CHECK(pp_comm_volume(schedule_w_pipeline(5, 1, {1, 1, 2}), 64).transfers == 0);

    // folding doubles the Send/Recv transfer count at every (m, p)
    for (int p = 1; p <= 8; ++p) {
        for (int m = 1; m <= 16; ++m) {
            const PpVolume w = pp_comm_volume(schedule_w_pipeline(m, p, {1, 1, 2}), 1);
            const PpVolume lin = pp_comm_volume(schedule_1f1b(m, p, {1, 1, 0}), 1);
            CAPTURE(m, p);
            CHECK(w.transfers == 2 * lin.transfers);
        }
    }
}

TEST_CASE("validator reports broken schedules", "[folding_pipeline]") {
    PipelineSchedule s = schedule_w_pipeline(6, 3, {1, 1, 2});
    REQUIRE(validate_schedule(s).empty());

    SECTION("overlapping device blocks") {
        PipelineSchedule bad = s;
        bad.blocks[5].start_us = bad.blocks[3].start_us;
        bad.blocks[5].device = bad.blocks[3].device;
        CHECK_FALSE(validate_schedule(bad).empty());
        CHECK_FALSE(naive_overlap_free(bad));
    }
    SECTION("SI block missing an id") {
        PipelineSchedule bad = s;
        for (auto& b : bad.blocks) {
            if (b.kind == BlockKind::SI) {
                b.bwd_mb.reset();
                break;
            }
        }
        CHECK_FALSE(validate_schedule(bad).empty());
    }
    SECTION("F block with both ids") {
        PipelineSchedule bad = s;
        for (auto& b : bad.blocks) {
            if (b.kind == BlockKind::F) {
                b.bwd_mb = 1;
                break;
            }
        }
        CHECK_FALSE(validate_schedule(bad).empty());
    }
}

TEST_CASE("fuzzed time mutations trip the validator exactly when invariants break",
          "[folding_pipeline]") {
    std::mt19937 rng(5);
    const PipelineSchedule base = schedule_w_pipeline(5, 2, {1, 1, 2});
    for (int trial = 0; trial < 60; ++trial) {
        PipelineSchedule mutated = base;
        auto& block = mutated.blocks[rng() % mutated.blocks.size()];
        block.start_us += (static_cast<double>(rng() % 9) - 4.0) * 0.75;
        if (block.start_us < 0) block.start_us = 0;

        const bool overlap_ok = naive_overlap_free(mutated);
        // chain timing oracle: visits of each pass ordered by start must not regress
        bool chain_ok = true;
        for (int mb = 1; mb <= mutated.m && chain_ok; ++mb) {
            for (bool backward : {false, true}) {
                std::vector<const Block*> visits;
                for (const auto& b : mutated.blocks) {
                    const auto& id = backward ? b.bwd_mb : b.fwd_mb;
                    if (id && *id == mb) visits.push_back(&b);
                }
                std::sort(visits.begin(), visits.end(), [](const Block* a, const Block* b) {
                    return a->start_us < b->start_us;
                });
                for (std::size_t i = 1; i < visits.size(); ++i) {
                    if (visits[i]->start_us < visits[i - 1]->end_us() - 1e-9) chain_ok = false;
                }
            }
        }
        const bool clean = validate_schedule(mutated).empty();
        CHECK(clean == (overlap_ok && chain_ok));
    }
}

TEST_CASE("trace and csv exports carry every block", "[folding_pipeline]") {
    const PipelineSchedule s = schedule_w_pipeline(4, 2, {1, 1, 2});
    const std::string trace = schedule_to_trace_json(s);
    CHECK(trace.find("traceEvents") != std::string::npos);
    CHECK(trace.find("\"ph\": \"X\"") != std::string::npos);
    CHECK(trace.find("SI f3/b1") != std::string::npos);
    const std::string csv = schedule_to_csv(s);
    std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == s.blocks.size() + 1);
}
