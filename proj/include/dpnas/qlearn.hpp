#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpnas/arch.hpp"

namespace dpnas {

// Deterministic draws (explicit algorithms, so logged trajectories replay
// identically regardless of the standard library).
inline double rand_unit(std::mt19937_64& rng) {
    return double(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline size_t rand_index(std::mt19937_64& rng, size_t n) {
    return size_t(rng() % n);
}

// Action values over construction states, keyed on the bucketed state
// string; unseen pairs read as default_q.
class QTable {
  public:
    explicit QTable(double default_q = 0.5) : default_q_(default_q) {}

    double get(const std::string& state, const std::string& action) const {
        const auto it = values_.find(state + "\t" + action);
        return it == values_.end() ? default_q_ : it->second;
    }
    void set(const std::string& state, const std::string& action, double v) {
        values_[state + "\t" + action] = v;
    }
    double default_q() const { return default_q_; }
    size_t size() const { return values_.size(); }
    const std::unordered_map<std::string, double>& raw() const { return values_; }

    void save(const std::string& path) const;
    static QTable load(const std::string& path, double default_q = 0.5);

  private:
    std::unordered_map<std::string, double> values_;
    double default_q_;
};

using Trajectory = std::vector<std::pair<ConstructionState, Action>>;

struct ReplayRecord {
    Trajectory trajectory;  // ends with the TERMINATE action
    double reward = 0.0;    // validation accuracy in [0, 1]
    ArchitectureSpec spec;
};

// Builds a record from the serialized form, replaying the actions through
// the grammar to recover the exact states.
ReplayRecord replay_record_from_actions(const ArchitectureSpec& spec,
                                        double reward,
                                        const std::vector<std::string>& actions);

// Epsilon-greedy construction walk: with probability eps a uniform legal
// action, otherwise argmax q with uniform tie-breaking.
std::pair<ArchitectureSpec, Trajectory> sample_architecture(
    const QTable& q, double eps, std::mt19937_64& rng, Shape3 input_shape,
    const GrammarLimits& limits = {});

// Reverse-order Bellman sweep: the terminal pair moves toward the reward,
// earlier pairs toward gamma * max over the successor's legal actions.
void bellman_update(QTable& q, const ReplayRecord& rec, double alpha,
                    double gamma, const GrammarLimits& limits = {});

// One q-update for the newest record plus `batch` uniform (with
// replacement) draws from the buffer.
void replay_step(QTable& q, const std::vector<ReplayRecord>& buffer, int batch,
                 std::mt19937_64& rng, double alpha, double gamma,
                 const GrammarLimits& limits = {});

// eps = 1 during the exploration phase, then minus 0.1 every decay_every
// architectures, floored at 0.
double epsilon_schedule(int64_t i, int explore_len = 1500,
                        int decay_every = 100);

}  // namespace dpnas
