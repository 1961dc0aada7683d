// modmap gen|train|infer|eval|compare
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "modmap/config.hpp"
#include "modmap/error.hpp"
#include "modmap/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> subsample_k;
  std::string fuse;
  bool multiclass = false;
  bool force = false;
  std::string out;
  std::string dataset;
  std::string instance;
  std::string compare = "fuse=max,min,product,mean";
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--dataset", f.dataset, "dataset root (overrides the config)");
}

void add_run(CLI::App* cmd, Flags& f) {
  add_common(cmd, f);
  cmd->add_option("--out", f.out, "run directory");
  cmd->add_flag("--multiclass", f.multiclass, "one class-conditioned model for all categories");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--subsample-k", f.subsample_k, "number of source views drawn per instance");
  cmd->add_option("--fuse", f.fuse, "modality fusion: max|min|product|mean");
}

modmap::RunConfig resolve(const Flags& f, bool gen) {
  modmap::RunConfig c = f.config.empty() ? modmap::RunConfig{} : modmap::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (gen && !f.out.empty()) c.dataset = f.out;
  if (!gen && !f.out.empty()) c.out = f.out;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.subsample_k) c.subsample_k = *f.subsample_k;
  if (!f.fuse.empty()) c.fuse = modmap::parse_fuse(f.fuse);
  if (f.multiclass) c.multiclass = true;
  c.validate();
  return c;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiview multimodal 3D anomaly detection"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen", "render the synthetic benchmark");
  add_common(gen, f);
  gen->add_option("--out", f.out, "dataset root to create");
  gen->add_flag("--force", f.force, "overwrite an existing dataset");

  auto* train = app.add_subcommand("train", "train one model per category (or one multi-class model)");
  add_run(train, f);
  auto* infer = app.add_subcommand("infer", "anomaly maps, volumes and scores for the test instances");
  add_run(infer, f);
  infer->add_option("--instance", f.instance, "only this instance id (or category/id)");
  auto* eval = app.add_subcommand("eval", "I-AUROC and V-AUPRO per category");
  add_run(eval, f);
  auto* compare = app.add_subcommand("compare", "re-aggregate stored maps under several fuse functions");
  add_run(compare, f);
  compare->add_option("--compare", f.compare, "ablation list, e.g. fuse=max,min,product,mean");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      modmap::pipeline::cmd_gen(resolve(f, true), f.force, std::cout);
    } else if (train->parsed()) {
      modmap::pipeline::cmd_train(resolve(f, false), std::cout);
    } else if (infer->parsed()) {
      modmap::pipeline::cmd_infer(resolve(f, false), f.instance, std::cout);
    } else if (eval->parsed()) {
      modmap::pipeline::cmd_eval(resolve(f, false), std::cout);
    } else if (compare->parsed()) {
      const auto c = resolve(f, false);
      modmap::pipeline::cmd_compare(c, modmap::pipeline::parse_compare(f.compare), std::cout);
    }
  } catch (const modmap::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
