#include <CLI11.hpp>

#include <iostream>

#include "gem/commands.hpp"
#include "gem/parallel.hpp"

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
  std::filesystem::path out = p;
  out.replace_extension(suffix);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GeM image retrieval: synthetic data, fine-tuning, whitening, indexing, evaluation"};
  app.require_subcommand(1);
  // Subcommands inherit this, so global flags may follow the subcommand name.
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::size_t threads = 1;
  app.add_option("--seed", seed, "Seed for every random stream (overrides the config)");
  app.add_option("--config", config_path, "Flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene dataset");
  synth->add_option("out_dir", out_dir, "Output directory")->required();

  std::string graph, checkpoint, report;
  auto* train = app.add_subcommand("train", "Fine-tune a network on a visibility graph");
  train->add_option("graph", graph, "Visibility graph JSON")->required();
  train->add_option("checkpoint", checkpoint, "Output checkpoint")->required();
  train->add_option("--report", report, "Training report JSON (default: <checkpoint>.report.json)");

  std::size_t dim = 0;
  std::string whitening_out;
  auto* whiten = app.add_subcommand("whiten", "Learn discriminative whitening");
  whiten->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  whiten->add_option("graph", graph, "Visibility graph JSON")->required();
  whiten->add_option("dim", dim, "Output dimensionality")->required()->check(CLI::PositiveNumber);
  whiten->add_option("out", whitening_out, "Output whitening file")->required();

  std::string manifest, index_path, whitening_in;
  auto* index = app.add_subcommand("index", "Describe every manifest image into an index");
  index->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  index->add_option("manifest", manifest, "Dataset manifest JSON")->required();
  index->add_option("out", index_path, "Output index file")->required();
  index->add_option("--whitening", whitening_in, "Whitening file applied to every descriptor");

  std::size_t aqe = 0;
  std::vector<std::string> alpha_qe;
  std::string ranked;
  auto* eval = app.add_subcommand("eval", "Evaluate manifest queries against an index");
  eval->add_option("index", index_path, "Index file")->required();
  eval->add_option("manifest", manifest, "Dataset manifest JSON")->required();
  auto* aqe_opt = eval->add_option("--aqe", aqe, "Average query expansion over the top nQE")
                      ->check(CLI::PositiveNumber);
  eval->add_option("--alpha-qe", alpha_qe, "Alpha-weighted query expansion: ALPHA NQE")
      ->expected(2)
      ->excludes(aqe_opt);
  eval->add_option("--ranked", ranked, "Ranked list output (default: <index>.ranked.txt)");

  std::string corrupt;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  gradcheck->add_option("--corrupt", corrupt, "Perturb one suite's analytic gradient (test hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    gem::RunConfig cfg = config_path.empty() ? gem::RunConfig{} : gem::load_run_config(config_path);
    if (seed) cfg.apply_seed(*seed);
    gem::set_thread_count(threads);

    if (*synth) {
      gem::cmd_synth(cfg, out_dir, std::cout);
    } else if (*train) {
      const std::filesystem::path report_path =
          report.empty() ? with_suffix(checkpoint, ".report.json") : std::filesystem::path(report);
      gem::cmd_train(cfg, graph, checkpoint, report_path, std::cout);
    } else if (*whiten) {
      gem::cmd_whiten(cfg, checkpoint, graph, dim, whitening_out, std::cout);
    } else if (*index) {
      std::optional<std::filesystem::path> w;
      if (!whitening_in.empty()) w = whitening_in;
      gem::cmd_index(cfg, checkpoint, w, manifest, index_path, std::cout);
    } else if (*eval) {
      std::optional<gem::QueryExpansion> qe;
      if (*aqe_opt) {
        qe = gem::QueryExpansion{gem::QEMethod::kAverage, {aqe, 0.0}};
      } else if (!alpha_qe.empty()) {
        gem::QueryExpansion q;
        q.method = gem::QEMethod::kAlphaWeighted;
        try {
          q.config.alpha = std::stod(alpha_qe[0]);
          q.config.top = std::stoul(alpha_qe[1]);
        } catch (const std::exception&) {
          throw gem::InvalidArgument("--alpha-qe expects ALPHA NQE, got \"" + alpha_qe[0] + " " +
                                     alpha_qe[1] + "\"");
        }
        qe = q;
      }
      const std::filesystem::path ranked_path =
          ranked.empty() ? std::filesystem::path(index_path + ".ranked.txt") : std::filesystem::path(ranked);
      gem::cmd_eval(index_path, manifest, qe, ranked_path, std::cout);
    } else if (*gradcheck) {
      std::optional<std::string> c;
      if (!corrupt.empty()) c = corrupt;
      return gem::cmd_gradcheck(cfg, c, std::cout) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
