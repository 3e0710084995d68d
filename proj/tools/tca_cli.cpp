// tca: command-line front end for the alignment toolkit.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "tca/tca.hpp"

namespace fs = std::filesystem;
using namespace tca;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ParseError:
      return 3;
    case ErrorKind::NumericalFailure:
    case ErrorKind::SingularMatrix:
    case ErrorKind::Diverged:
      return 4;
    default:
      return 2;
  }
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json report_json(const AdaptReport& r) {
  nlohmann::json j;
  j["accuracy_before"] = optional_json(r.accuracy_before);
  j["accuracy_after"] = optional_json(r.accuracy_after);
  j["dist_test_to_pseudo_before"] = r.dist_test_to_pseudo_before;
  j["dist_test_to_pseudo_after"] = r.dist_test_to_pseudo_after;
  j["dist_test_to_source_before"] = optional_json(r.dist_test_to_source_before);
  j["dist_test_to_source_after"] = optional_json(r.dist_test_to_source_after);
  j["dist_pseudo_to_source"] = optional_json(r.dist_pseudo_to_source);
  if (r.solver_trace) {
    j["solver_trace"] = {{"objective_values", r.solver_trace->objective_values},
                         {"iterations", r.solver_trace->iterations},
                         {"converged", r.solver_trace->converged}};
  } else {
    j["solver_trace"] = nullptr;
  }
  j["n"] = r.n;
  j["d"] = r.d;
  j["c"] = r.c;
  j["bank_size"] = r.bank_size;
  j["class_balance_fell_back"] = r.class_balance_fell_back;
  j["cold_start_instances"] = r.cold_start_instances;
  j["cold_start_batches"] = r.cold_start_batches;
  return j;
}

std::string csv_number(double v) { return detail::format_double(v); }

struct AdaptArgs {
  std::string test, head, labels, source, out_preds, out_report;
  AdaptConfig cfg;
};

void add_config_options(CLI::App* cmd, AdaptConfig& cfg) {
  const std::map<std::string, SolverKind> solvers{{"closed", SolverKind::Closed}, {"gradient", SolverKind::Gradient}};
  const std::map<std::string, SelectionMode> selections{{"global", SelectionMode::Global},
                                                        {"class-balanced", SelectionMode::ClassBalanced}};
  const std::map<std::string, AdaptMode> modes{{"transductive", AdaptMode::Transductive},
                                               {"online", AdaptMode::Online}};
  cmd->add_option("--k", cfg.k, "pseudo-source bank capacity");
  cmd->add_option("--eps", cfg.eps, "covariance shrinkage");
  cmd->add_option("--solver", cfg.solver)->transform(CLI::CheckedTransformer(solvers, CLI::ignore_case));
  cmd->add_option("--lr", cfg.lr, "gradient solver step size");
  cmd->add_option("--iters", cfg.max_iters, "gradient solver iterations");
  cmd->add_option("--select", cfg.selection)->transform(CLI::CheckedTransformer(selections, CLI::ignore_case));
  cmd->add_option("--mode", cfg.mode)->transform(CLI::CheckedTransformer(modes, CLI::ignore_case));
  cmd->add_option("--batch-size", cfg.batch_size, "online batch size");
}

std::optional<Labels> maybe_labels(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_labels(path);
}

std::optional<Matrix> maybe_source_sigma(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return covariance(read_embeddings(path)).sigma;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time linear correlation alignment"};
  app.require_subcommand(1);

  std::string shift = "linear", out_dir;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic source/target dataset");
  synth->add_option("--shift", shift)->check(CLI::IsMember({"linear", "nonlinear"}));
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_dir)->required();

  std::string emb_path, label_path, head_out;
  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train-head", "fit a softmax head on labeled embeddings");
  train_cmd->add_option("--embeddings", emb_path)->required();
  train_cmd->add_option("--labels", label_path)->required();
  train_cmd->add_option("--lr", train.lr);
  train_cmd->add_option("--epochs", train.epochs);
  train_cmd->add_option("--out", head_out)->required();

  AdaptArgs ad;
  auto* adapt_cmd = app.add_subcommand("adapt", "align test embeddings and re-predict");
  adapt_cmd->add_option("--test", ad.test)->required();
  adapt_cmd->add_option("--head", ad.head)->required();
  adapt_cmd->add_option("--labels", ad.labels);
  adapt_cmd->add_option("--source", ad.source, "source embeddings, for distance reporting");
  add_config_options(adapt_cmd, ad.cfg);
  adapt_cmd->add_option("--out-preds", ad.out_preds)->required();
  adapt_cmd->add_option("--out-report", ad.out_report)->required();

  std::string experiment, out_csv;
  std::size_t groups = 10, every = 10;
  AdaptArgs vt;
  vt.cfg.solver = SolverKind::Gradient;
  auto* validate_cmd = app.add_subcommand("validate-theory", "uncertainty-group or alignment-trace experiment");
  validate_cmd->add_option("--experiment", experiment)->required()->check(CLI::IsMember({"groups", "trace"}));
  validate_cmd->add_option("--test", vt.test)->required();
  validate_cmd->add_option("--head", vt.head)->required();
  validate_cmd->add_option("--labels", vt.labels);
  validate_cmd->add_option("--source", vt.source)->required();
  validate_cmd->add_option("--groups", groups);
  validate_cmd->add_option("--every", every);
  add_config_options(validate_cmd, vt.cfg);
  validate_cmd->add_option("--out-csv", out_csv)->required();

  std::string preds_path;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy of a predictions CSV");
  eval_cmd->add_option("--preds", preds_path)->required();
  eval_cmd->add_option("--labels", label_path)->required();

  std::string plot_source, plot_target, plot_transformed, plot_out;
  auto* plot_cmd = app.add_subcommand("plot", "2-D scatter plot as SVG");
  plot_cmd->add_option("--source", plot_source)->required();
  plot_cmd->add_option("--target", plot_target)->required();
  plot_cmd->add_option("--transformed", plot_transformed);
  plot_cmd->add_option("--out", plot_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      const auto ds = gen_shift(shift == "linear" ? ShiftKind::Linear : ShiftKind::Nonlinear, seed);
      fs::create_directories(out_dir);
      const fs::path dir(out_dir);
      write_embeddings(dir / "source.tcae", ds.source.features);
      write_labels(dir / "source.tcal", ds.source.labels);
      write_embeddings(dir / "target.tcae", ds.target.features);
      write_labels(dir / "target.tcal", ds.target.labels);
      std::printf("wrote %zu source and %zu target rows to %s\n", ds.source.features.rows(),
                  ds.target.features.rows(), out_dir.c_str());
    } else if (*train_cmd) {
      const auto z = read_embeddings(emb_path);
      const auto labels = read_labels(label_path);
      const auto head = train_head(z, labels, train);
      save_head(head_out, head);
      std::printf("train accuracy %.6f\n", accuracy(predict(head, z), labels));
    } else if (*adapt_cmd) {
      const auto z = read_embeddings(ad.test);
      const auto head = load_head(ad.head);
      const auto result = adapt(z, head, ad.cfg, maybe_labels(ad.labels), maybe_source_sigma(ad.source));
      write_file_atomic(ad.out_preds, predictions_to_csv(result.after));
      write_file_atomic(ad.out_report, report_json(result.report).dump(2) + "\n");
      if (result.report.accuracy_after) {
        std::printf("accuracy %.6f -> %.6f\n", *result.report.accuracy_before, *result.report.accuracy_after);
      }
    } else if (*validate_cmd) {
      const auto z = read_embeddings(vt.test);
      const auto head = load_head(vt.head);
      const Matrix source = covariance(read_embeddings(vt.source)).sigma;
      std::string csv;
      if (experiment == "groups") {
        csv = "group_index,size,mean_uncertainty,distance_to_source\n";
        std::vector<double> index, dist;
        for (const auto& g : validate_uncertainty_groups(z, head, source, groups)) {
          csv += std::to_string(g.group_index) + "," + std::to_string(g.size) + "," + csv_number(g.mean_uncertainty) +
                 "," + csv_number(g.distance_to_source) + "\n";
          index.push_back(static_cast<double>(g.group_index));
          dist.push_back(g.distance_to_source);
        }
        const auto rho = spearman(index, dist);
        std::printf("spearman(group, distance) %s\n", rho ? csv_number(*rho).c_str() : "undefined");
      } else {
        require(!vt.labels.empty(), ErrorKind::InvalidInput, "trace experiment needs --labels");
        require(vt.cfg.solver == SolverKind::Gradient, ErrorKind::InvalidConfig, "trace experiment needs --solver gradient");
        const auto trace = validate_alignment_trace(z, head, read_labels(vt.labels), vt.cfg, source, every);
        csv = "iteration,objective,dist_to_pseudo,dist_to_source,accuracy\n";
        for (const auto& p : trace.points) {
          csv += std::to_string(p.iteration) + "," + csv_number(p.objective) + "," + csv_number(p.dist_to_pseudo) +
                 "," + csv_number(p.dist_to_source) + "," + csv_number(p.accuracy) + "\n";
        }
        auto show = [](const std::optional<double>& v) { return v ? csv_number(*v) : std::string("undefined"); };
        std::printf("spearman(pseudo, source) %s\n", show(trace.spearman_pseudo_source).c_str());
        std::printf("spearman(pseudo, accuracy) %s\n", show(trace.spearman_pseudo_accuracy).c_str());
        if (trace.fit_pseudo_source) std::printf("r2(pseudo, source) %s\n", show(trace.fit_pseudo_source->r2).c_str());
      }
      write_file_atomic(out_csv, csv);
    } else if (*eval_cmd) {
      const auto preds = predictions_from_csv(read_file(preds_path));
      std::printf("accuracy %.6f\n", accuracy(preds, read_labels(label_path)));
    } else if (*plot_cmd) {
      const auto source = read_embeddings(plot_source);
      const auto target = read_embeddings(plot_target);
      std::optional<EmbeddingBatch> moved;
      if (!plot_transformed.empty()) moved = read_embeddings(plot_transformed);
      std::vector<ScatterLayer> layers{{&source, nullptr, "source", "#1f77b4"}, {&target, nullptr, "target", "#7f7f7f"}};
      if (moved) layers.push_back({&*moved, nullptr, "transformed", "#d62728"});
      write_file_atomic(plot_out, render_scatter_svg(layers));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
