// atx: experiment front end for teacher-student attention-transfer training.
//
//   atx train       --spec exp.cfg [--teacher t.atx] --out dir [--seed N] [--reps K]
//   atx beta-search --spec exp.cfg --teacher t.atx   --out dir [--seed N]
//   atx size-sweep  --spec exp.cfg [--teacher t.atx] --out dir [--seed N] [--reps K]
//   atx compare     run_dir... --out dir
//   atx gen-data    --spec exp.cfg --out dir [--seed N]
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
// ATX_WORKERS controls how many sweep cells run concurrently (default 1).

#include <CLI11.hpp>
#include <iostream>

#include "atx/experiments.hpp"

namespace {

struct CommonArgs {
    std::string spec_path;
    std::string teacher;
    std::string out_dir;
    uint64_t seed = 1;
    int reps = -1;  // -1: take train.repetitions from the spec file
};

int effective_reps(const atx::ExperimentSpec& spec, int cli_reps) {
    return cli_reps > 0 ? cli_reps : spec.train.repetitions;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-transfer experiment harness"};
    app.require_subcommand(1);

    CommonArgs train_args, beta_args, sweep_args, gen_args;
    std::vector<std::string> compare_dirs;
    std::string compare_out;

    auto add_common = [](CLI::App* cmd, CommonArgs& a) {
        cmd->add_option("--spec", a.spec_path, "experiment spec file")->required();
        cmd->add_option("--teacher", a.teacher, "teacher checkpoint (.atx)");
        cmd->add_option("--out", a.out_dir, "output directory")->required();
        cmd->add_option("--seed", a.seed, "base seed");
        cmd->add_option("--reps", a.reps, "repetitions (default: spec train.repetitions)");
    };

    add_common(app.add_subcommand("train", "train one configuration over seeded repetitions"),
               train_args);
    add_common(app.add_subcommand("beta-search", "grid-search the attention loss weight"),
               beta_args);
    add_common(app.add_subcommand("size-sweep", "training-set size sweep"), sweep_args);
    auto* cmp = app.add_subcommand("compare", "compare finished run directories");
    cmp->add_option("dirs", compare_dirs, "run directories")->required()->expected(-2);
    cmp->add_option("--out", compare_out, "output directory")->required();
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--spec", gen_args.spec_path, "experiment spec file")->required();
    gen->add_option("--out", gen_args.out_dir, "output directory")->required();
    gen->add_option("--seed", gen_args.seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand("train")) {
            auto spec = atx::parse_spec_file(train_args.spec_path);
            auto summary = atx::run_training_experiment(spec, train_args.out_dir,
                                                        train_args.teacher, train_args.seed,
                                                        effective_reps(spec, train_args.reps));
            std::cout << summary.dump(2) << "\n";
        } else if (app.got_subcommand("beta-search")) {
            auto spec = atx::parse_spec_file(beta_args.spec_path);
            auto summary = atx::run_beta_search(spec, beta_args.out_dir, beta_args.teacher,
                                                beta_args.seed);
            std::cout << "best beta: " << summary["best_beta"] << "\n" << summary.dump(2) << "\n";
        } else if (app.got_subcommand("size-sweep")) {
            auto spec = atx::parse_spec_file(sweep_args.spec_path);
            auto summary = atx::run_size_sweep(spec, sweep_args.out_dir, sweep_args.teacher,
                                               sweep_args.seed,
                                               effective_reps(spec, sweep_args.reps));
            std::cout << summary.dump(2) << "\n";
        } else if (app.got_subcommand("compare")) {
            auto summary = atx::run_compare(compare_dirs, compare_out);
            std::cout << summary.dump(2) << "\n";
        } else if (app.got_subcommand("gen-data")) {
            auto spec = atx::parse_spec_file(gen_args.spec_path);
            auto report = atx::run_gen_data(spec, gen_args.out_dir, gen_args.seed);
            std::cout << report.dump(2) << "\n";
        }
    } catch (const atx::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
