// Acceptance suite: one pass/fail line per criterion. Criteria 6, 7 and 10
// train the model zoo and run the desk-scale transfer protocol, so the full
// run takes tens of minutes on one core. Use --only=N while iterating.
#include <cstdio>
#include <cstring>
#include <string>

#include "acceptance_support.hpp"

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strncmp(argv[i], "--only=", 7) == 0) only = std::atoi(argv[i] + 7);
    }

    acceptance::Runner runner;
    runner.add(1, "gradient oracle suite", acceptance::criterion_gradient_oracles);
    runner.add(2, "degeneracy suite", acceptance::criterion_degeneracy);
    runner.add(3, "constraint suite", acceptance::criterion_constraints);
    runner.add(4, "linear-model analytic oracle", acceptance::criterion_linear_oracle);
    runner.add(5, "mixing arithmetic oracle", acceptance::criterion_mix_oracle);
    runner.add(6, "desk-scale transfer gain", acceptance::criterion_transfer_gain);
    runner.add(7, "ablation direction check", acceptance::criterion_ablation_direction);
    runner.add(8, "iteration budget", acceptance::criterion_budget);
    runner.add(9, "suite determinism", acceptance::criterion_determinism);
    runner.add(10, "hyperparameter sweep robustness", acceptance::criterion_sweep);
    return runner.run(only);
}
