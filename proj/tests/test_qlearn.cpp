#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>

#include "dpnas/arch.hpp"
#include "dpnas/qlearn.hpp"
#include "oracles.hpp"

using namespace dpnas;

namespace {

Action conv_action(int c, int k, int s, bool skip = false) {
    Action a{false, {}};
    a.layer.kind = LayerKind::Conv;
    a.layer.out_channels = c;
    a.layer.kernel = k;
    a.layer.stride = s;
    a.layer.skip_source = skip;
    return a;
}

// Tiny grammar on a 1x1 input: pools are never legal, convs are c16/k1
// with two strides and optional skip, at most two conv layers.
GrammarLimits toy_limits() {
    GrammarLimits l;
    l.max_channels = 16;
    l.max_kernel = 1;
    l.max_conv_layers = 2;
    return l;
}

constexpr Shape3 kToyInput{1, 1, 1};

// Deterministic reward, a known function of the architecture. It only
// depends on features visible in the final construction state (conv count
// and last stride) so the bucketed q-table can represent it exactly.
double toy_reward(const ArchitectureSpec& spec) {
    double r = 0.1 * double(spec.conv_count());
    if (spec.layers.back().stride == 2) r += 0.15;
    return std::min(r, 1.0);
}

// All architectures reachable in the toy grammar, via exhaustive walk.
void enumerate_archs(const ConstructionState& s, ArchitectureSpec spec,
                     std::vector<ArchitectureSpec>& out) {
    for (const auto& a : enumerate_actions(s, toy_limits())) {
        if (a.terminate) {
            out.push_back(spec);
            continue;
        }
        auto next = spec;
        next.layers.push_back(a.layer);
        enumerate_archs(apply_action(s, a), next, out);
    }
}

ReplayRecord record_for(const ArchitectureSpec& spec) {
    std::vector<std::string> actions;
    for (const auto& l : spec.layers) actions.push_back(layer_token(l));
    actions.push_back("terminate");
    return replay_record_from_actions(spec, toy_reward(spec), actions);
}

}  // namespace

TEST_CASE("epsilon schedule matches the published phase boundaries") {
    CHECK(epsilon_schedule(0) == 1.0);
    CHECK(epsilon_schedule(1499) == 1.0);
    CHECK(epsilon_schedule(1500) == doctest::Approx(0.9));
    CHECK(epsilon_schedule(1600) == doctest::Approx(0.8));
    CHECK(epsilon_schedule(2400) == doctest::Approx(0.0));
    CHECK(epsilon_schedule(2499) == doctest::Approx(0.0));
    CHECK(epsilon_schedule(100000) == 0.0);
    // proportional desk schedule
    CHECK(epsilon_schedule(0, 180, 12) == 1.0);
    CHECK(epsilon_schedule(179, 180, 12) == 1.0);
    CHECK(epsilon_schedule(180, 180, 12) == doctest::Approx(0.9));
    CHECK(epsilon_schedule(299, 180, 12) == doctest::Approx(0.0));
}

TEST_CASE("single terminal bellman step") {
    QTable q(0.0);
    ReplayRecord rec;
    ConstructionState s = start_state(kToyInput);
    s = apply_action(s, conv_action(16, 1, 1));
    rec.trajectory = {{s, Action{true, {}}}};
    rec.reward = 0.9;
    bellman_update(q, rec, 0.1, 1.0, toy_limits());
    CHECK(q.get(state_key(s), "terminate") == doctest::Approx(0.09));
}

TEST_CASE("repeated updates contract geometrically toward the reward") {
    QTable q(0.0);
    ReplayRecord rec;
    ConstructionState s = start_state(kToyInput);
    s = apply_action(s, conv_action(16, 1, 1));
    rec.trajectory = {{s, Action{true, {}}}};
    rec.reward = 0.8;
    const double alpha = 0.1;
    for (int n = 1; n <= 50; ++n) {
        bellman_update(q, rec, alpha, 1.0, toy_limits());
        const double want =
            rec.reward - std::pow(1.0 - alpha, n) * rec.reward;
        CHECK(q.get(state_key(s), "terminate") == doctest::Approx(want));
    }
}

TEST_CASE("converged q-table equals the value-iteration oracle") {
    // Build the toy grammar's exact MDP: states discovered by walking.
    std::map<std::string, int> state_ids;
    oracle::Mdp mdp;
    std::vector<std::vector<Action>> state_actions;
    std::vector<ConstructionState> states;

    std::function<int(const ConstructionState&)> visit =
        [&](const ConstructionState& s) -> int {
        const auto key = state_key(s);
        if (auto it = state_ids.find(key); it != state_ids.end())
            return it->second;
        const int id = int(states.size());
        state_ids[key] = id;
        states.push_back(s);
        state_actions.emplace_back();
        mdp.next.emplace_back();
        mdp.reward.emplace_back();
        const auto actions = enumerate_actions(s, toy_limits());
        for (const auto& a : actions) {
            // recurse before touching the vectors: visit() grows them
            const int nxt = a.terminate ? -1 : visit(apply_action(s, a));
            state_actions[id].push_back(a);
            mdp.reward[id].push_back(0.0);  // terminal rewards filled below
            mdp.next[id].push_back(nxt);
        }
        return id;
    };
    visit(start_state(kToyInput));
    mdp.num_states = int(states.size());

    // In the toy grammar a state key pins down (depth, last layer,
    // dangling) exactly, and toy_reward only reads those, so terminal
    // rewards are well-defined per state. Fill them by enumerating every
    // architecture and locating its end state.
    std::vector<ArchitectureSpec> archs;
    enumerate_archs(start_state(kToyInput), {{}, kToyInput}, archs);
    REQUIRE(archs.size() <= 200);
    REQUIRE(archs.size() == 10);
    for (auto& a : archs) a.input_shape = kToyInput;
    for (const auto& spec : archs) {
        ConstructionState s = start_state(kToyInput);
        for (const auto& l : spec.layers) s = apply_action(s, {false, l});
        const int sid = state_ids.at(state_key(s));
        for (size_t ai = 0; ai < state_actions[sid].size(); ++ai)
            if (state_actions[sid][ai].terminate)
                mdp.reward[sid][ai] = toy_reward(spec);
    }

    const auto vi = oracle::value_iteration(mdp, 1.0, 64);

    // Q-learning over many sweeps of every architecture's record.
    QTable q(0.0);
    for (int sweep = 0; sweep < 4000; ++sweep)
        for (const auto& spec : archs)
            bellman_update(q, record_for(spec), 0.1, 1.0, toy_limits());

    for (int sid = 0; sid < mdp.num_states; ++sid)
        for (size_t ai = 0; ai < state_actions[sid].size(); ++ai) {
            const double got = q.get(state_key(states[sid]),
                                     action_token(state_actions[sid][ai]));
            CHECK(got == doctest::Approx(vi[sid][ai]).epsilon(1e-6));
        }
}

TEST_CASE("greedy trajectory on the converged toy table is optimal") {
    std::vector<ArchitectureSpec> archs;
    enumerate_archs(start_state(kToyInput), {{}, kToyInput}, archs);
    for (auto& a : archs) a.input_shape = kToyInput;
    double best = 0;
    for (const auto& spec : archs) best = std::max(best, toy_reward(spec));

    QTable q(0.0);
    for (int sweep = 0; sweep < 3000; ++sweep)
        for (const auto& spec : archs)
            bellman_update(q, record_for(spec), 0.1, 1.0, toy_limits());

    std::mt19937_64 rng(2);
    const auto [spec, traj] =
        sample_architecture(q, 0.0, rng, kToyInput, toy_limits());
    CHECK(toy_reward(spec) == doctest::Approx(best));
}

TEST_CASE("q-values stay within [0,1] for rewards in [0,1]") {
    QTable q(0.5);
    std::mt19937_64 rng(4);
    std::vector<ReplayRecord> buffer;
    for (int i = 0; i < 200; ++i) {
        auto [spec, traj] =
            sample_architecture(q, 0.5, rng, kToyInput, toy_limits());
        ReplayRecord rec;
        rec.trajectory = traj;
        rec.spec = spec;
        rec.reward = rand_unit(rng);
        buffer.push_back(rec);
        replay_step(q, buffer, 8, rng, 0.1, 1.0, toy_limits());
    }
    for (const auto& [k, v] : q.raw()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("pure exploration samples legal first actions uniformly") {
    QTable q(0.5);
    const auto actions = enumerate_actions(start_state({1, 28, 28}));
    REQUIRE(actions.size() == 168);
    std::map<std::string, int> counts;
    std::mt19937_64 rng(10);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        auto [spec, traj] = sample_architecture(q, 1.0, rng, {1, 28, 28});
        counts[action_token(traj.front().second)]++;
    }
    CHECK(counts.size() == 168);
    // chi-square against uniform: 167 dof, mean 167, sd ~ sqrt(334)
    const double expected = double(draws) / 168.0;
    double chi2 = 0;
    for (const auto& [tok, n] : counts)
        chi2 += (n - expected) * (n - expected) / expected;
    CHECK(chi2 < 167 + 6 * std::sqrt(2 * 167.0));
}

TEST_CASE("greedy sampling is deterministic when one chain dominates") {
    QTable q(0.0);
    ConstructionState s0 = start_state(kToyInput);
    const Action a1 = conv_action(16, 1, 2);
    q.set(state_key(s0), action_token(a1), 0.9);
    ConstructionState s1 = apply_action(s0, a1);
    q.set(state_key(s1), "terminate", 0.9);

    std::mt19937_64 rng(6);
    for (int i = 0; i < 20; ++i) {
        const auto [spec, traj] =
            sample_architecture(q, 0.0, rng, kToyInput, toy_limits());
        REQUIRE(spec.layers.size() == 1);
        CHECK(spec.layers[0] == a1.layer);
    }
}

TEST_CASE("all-tied q-table degenerates to uniform choice") {
    QTable q(0.5);  // fresh: every action reads the default
    std::mt19937_64 rng(12);
    std::map<std::string, int> counts;
    const int draws = 8000;
    for (int i = 0; i < draws; ++i) {
        auto [spec, traj] =
            sample_architecture(q, 0.0, rng, kToyInput, toy_limits());
        counts[action_token(traj.front().second)]++;
    }
    // first step of the toy grammar: 4 conv variants + 2 skip variants
    const auto first = enumerate_actions(start_state(kToyInput), toy_limits());
    CHECK(counts.size() == first.size());
    const double expected = double(draws) / double(first.size());
    for (const auto& [tok, n] : counts)
        CHECK(std::abs(n - expected) < 6 * std::sqrt(expected));
}

TEST_CASE("replay on a single-record buffer equals batch+1 plain updates") {
    std::vector<ArchitectureSpec> archs;
    enumerate_archs(start_state(kToyInput), {{}, kToyInput}, archs);
    for (auto& a : archs) a.input_shape = kToyInput;
    const auto rec = record_for(archs[3]);

    QTable a(0.5), b(0.5);
    std::mt19937_64 rng(9);
    replay_step(a, {rec}, 5, rng, 0.1, 1.0, toy_limits());
    for (int i = 0; i < 6; ++i) bellman_update(b, rec, 0.1, 1.0, toy_limits());
    for (const auto& [k, v] : a.raw())
        CHECK(v == doctest::Approx(b.raw().at(k)));

    // batch = 0: only the newest record
    QTable c(0.5), d(0.5);
    replay_step(c, {rec}, 0, rng, 0.1, 1.0, toy_limits());
    bellman_update(d, rec, 0.1, 1.0, toy_limits());
    for (const auto& [k, v] : c.raw())
        CHECK(v == doctest::Approx(d.raw().at(k)));
}

TEST_CASE("replay draws records uniformly with replacement") {
    std::vector<ArchitectureSpec> archs;
    enumerate_archs(start_state(kToyInput), {{}, kToyInput}, archs);
    for (auto& a : archs) a.input_shape = kToyInput;
    // distinguishable records: track per-record replay counts via a
    // counting stand-in for bellman - here simply simulate the index draw
    std::mt19937_64 rng(14);
    const size_t n = archs.size();
    std::vector<int> counts(n, 0);
    const int steps = 10000, batch = 4;
    for (int i = 0; i < steps; ++i)
        for (int j = 0; j < batch; ++j) counts[rand_index(rng, n)]++;
    const double expected = double(steps) * batch / double(n);
    for (int c : counts)
        CHECK(std::abs(c - expected) < 6 * std::sqrt(expected));
}

TEST_CASE("q-table checkpoints round-trip") {
    QTable q(0.5);
    std::mt19937_64 rng(3);
    std::vector<ReplayRecord> buffer;
    for (int i = 0; i < 20; ++i) {
        auto [spec, traj] =
            sample_architecture(q, 1.0, rng, kToyInput, toy_limits());
        ReplayRecord rec{traj, rand_unit(rng), spec};
        buffer.push_back(rec);
        replay_step(q, buffer, 4, rng, 0.1, 1.0, toy_limits());
    }
    const auto path =
        (std::filesystem::temp_directory_path() / "dpnas_qtable_test.ckpt")
            .string();
    q.save(path);
    const auto back = QTable::load(path, 0.5);
    REQUIRE(back.size() == q.size());
    for (const auto& [k, v] : q.raw())
        CHECK(back.raw().at(k) == doctest::Approx(v).epsilon(1e-15));
    std::filesystem::remove(path);
}

TEST_CASE("trajectories replay to their specs") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 50; ++i) {
        QTable q(0.5);
        auto [spec, traj] = sample_architecture(q, 1.0, rng, {1, 28, 28});
        std::vector<std::string> actions;
        for (const auto& [s, a] : traj) actions.push_back(action_token(a));
        const auto rec = replay_record_from_actions(spec, 0.5, actions);
        CHECK(rec.spec == spec);
        CHECK(rec.trajectory.size() == traj.size());
        for (size_t j = 0; j < traj.size(); ++j) {
            CHECK(state_key(rec.trajectory[j].first) ==
                  state_key(traj[j].first));
        }
    }
    // tampered trajectories are rejected
    QTable q(0.5);
    auto [spec, traj] = sample_architecture(q, 1.0, rng, {1, 28, 28});
    CHECK_THROWS(replay_record_from_actions(spec, 0.5, {"terminate"}));
}
