#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace rca::cli;
  CLI::App app{"Multi-domain sentiment classification with adversarial alignment"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train and evaluate on a data directory");
  t->add_option("--config", train.config, "run config file");
  t->add_option("--data", train.data, "directory with one subdirectory per domain")->required();
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--seed", train.seed, "overrides train.seed");
  t->add_option("--folds", train.folds, "overrides eval.folds");
  t->add_option("--ablation", train.ablation, "adversary alignment: joint or marginal");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a synthetic Gaussian scenario");
  s->add_option("--config", synth.config, "scenario file");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--seed", synth.seed, "overrides scenario.seed");

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "compare every gradient with central differences");
  g->add_option("--seed", grad.seed, "seed of the random test points");

  AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "joint versus marginal alignment from identical initialisations");
  a->add_option("--config", ablate.config, "run config file");
  a->add_option("--data", ablate.data, "directory with one subdirectory per domain")->required();
  a->add_option("--out", ablate.out, "output directory")->required();
  a->add_option("--seed", ablate.seed, "first seed");
  a->add_option("--folds", ablate.folds, "overrides eval.folds");
  a->add_option("--seeds", ablate.seeds, "number of consecutive seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  return guarded(
      [&] {
        if (*t) return cmd_train(train, std::cout);
        if (*s) return cmd_synth(synth, std::cout);
        if (*g) return cmd_gradcheck(grad, std::cout);
        return cmd_ablate(ablate, std::cout);
      },
      std::cerr);
}
