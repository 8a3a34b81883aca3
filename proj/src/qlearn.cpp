#include "dpnas/qlearn.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dpnas/common.hpp"

namespace dpnas {

void QTable::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    // sorted for stable diffs
    std::vector<std::pair<std::string, double>> rows(values_.begin(),
                                                     values_.end());
    std::sort(rows.begin(), rows.end());
    char buf[32];
    for (const auto& [key, v] : rows) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        f << key << "\t" << buf << "\n";
    }
}

QTable QTable::load(const std::string& path, double default_q) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    QTable q(default_q);
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.rfind('\t');
        if (t1 == std::string::npos || t2 == t1)
            throw DataError(path + ": malformed q-table line: " + line);
        q.set(line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
              std::stod(line.substr(t2 + 1)));
    }
    return q;
}

ReplayRecord replay_record_from_actions(
    const ArchitectureSpec& spec, double reward,
    const std::vector<std::string>& actions) {
    ReplayRecord rec;
    rec.reward = reward;
    rec.spec = spec;
    ConstructionState s = start_state(spec.input_shape);
    for (const auto& tok : actions) {
        const Action a = parse_action(tok);
        rec.trajectory.emplace_back(s, a);
        if (a.terminate) break;
        s = apply_action(s, a);
    }
    if (rec.trajectory.empty() || !rec.trajectory.back().second.terminate)
        throw ValidationError("trajectory does not end in terminate");
    // The replayed layer sequence must reproduce the spec.
    ArchitectureSpec replayed;
    replayed.input_shape = spec.input_shape;
    for (const auto& [st, a] : rec.trajectory)
        if (!a.terminate) replayed.layers.push_back(a.layer);
    if (!(replayed == spec))
        throw ValidationError("trajectory does not replay to its spec");
    return rec;
}

std::pair<ArchitectureSpec, Trajectory> sample_architecture(
    const QTable& q, double eps, std::mt19937_64& rng, Shape3 input_shape,
    const GrammarLimits& limits) {
    ArchitectureSpec spec;
    spec.input_shape = input_shape;
    Trajectory traj;
    ConstructionState s = start_state(input_shape);

    for (;;) {
        const auto actions = enumerate_actions(s, limits);
        size_t pick;
        if (rand_unit(rng) < eps) {
            pick = rand_index(rng, actions.size());
        } else {
            const std::string skey = state_key(s);
            double best = -1e300;
            std::vector<size_t> ties;
            for (size_t i = 0; i < actions.size(); ++i) {
                const double v = q.get(skey, action_token(actions[i]));
                if (v > best) {
                    best = v;
                    ties.assign(1, i);
                } else if (v == best) {
                    ties.push_back(i);
                }
            }
            pick = ties[ties.size() == 1 ? 0 : rand_index(rng, ties.size())];
        }
        const Action& a = actions[pick];
        traj.emplace_back(s, a);
        if (a.terminate) break;
        spec.layers.push_back(a.layer);
        s = apply_action(s, a);
    }
    return {spec, traj};
}

void bellman_update(QTable& q, const ReplayRecord& rec, double alpha,
                    double gamma, const GrammarLimits& limits) {
    for (size_t i = rec.trajectory.size(); i-- > 0;) {
        const auto& [s, a] = rec.trajectory[i];
        const std::string skey = state_key(s);
        const std::string akey = action_token(a);
        double target;
        if (a.terminate) {
            target = rec.reward;
        } else {
            const ConstructionState succ = apply_action(s, a);
            const std::string succ_key = state_key(succ);
            double mx = -1e300;
            for (const auto& na : enumerate_actions(succ, limits))
                mx = std::max(mx, q.get(succ_key, action_token(na)));
            target = gamma * mx;  // intermediate reward is 0
        }
        q.set(skey, akey, (1.0 - alpha) * q.get(skey, akey) + alpha * target);
    }
}

void replay_step(QTable& q, const std::vector<ReplayRecord>& buffer, int batch,
                 std::mt19937_64& rng, double alpha, double gamma,
                 const GrammarLimits& limits) {
    if (buffer.empty()) throw ValidationError("replay buffer is empty");
    bellman_update(q, buffer.back(), alpha, gamma, limits);
    for (int i = 0; i < batch; ++i)
        bellman_update(q, buffer[rand_index(rng, buffer.size())], alpha, gamma,
                       limits);
}

double epsilon_schedule(int64_t i, int explore_len, int decay_every) {
    if (i < explore_len) return 1.0;
    const auto steps = 1 + (i - explore_len) / decay_every;
    return std::max(0.0, 1.0 - 0.1 * double(steps));
}

}  // namespace dpnas
